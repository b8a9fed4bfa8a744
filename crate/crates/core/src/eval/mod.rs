//! Attribute-level retrieval metrics and the multi-trial protocol.

mod metrics;
mod sheet;
mod trials;

pub use metrics::{
    attribute_match, colour_distance, error_rate, harmonic, mean_and_std, powerset_eval, subsets_of_size,
    top_k_precision, weighted_precision, AttributeSubset, ErrorRate, SubsetFamily,
};
pub use sheet::contact_sheet;
pub use trials::{
    run_trials, EvalCorpus, FamilyResult, MeanStd, MetricsReport, ReportMetadata, SubsetResult, SummaryRow,
    TrialResult, TrialRun, TrialSpec, SAMPLER,
};
