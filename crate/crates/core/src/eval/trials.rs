use std::collections::BTreeMap;
use std::fmt::Write as _;

use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{
    attribute_match, colour_distance, error_rate, mean_and_std, top_k_precision, weighted_precision, AttributeSubset,
    SubsetFamily,
};
use crate::corpus::{Attribute, Manifest, SceneAnnotation, Split};
use crate::error::{Error, Result};
use crate::similarity::{CandidateIndex, JointRepresentation, RankedList};

pub const SAMPLER: &str = "ChaCha8 (rand_chacha 0.9), seeded with seed + trial index; partial Fisher-Yates shuffle";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialSpec {
    pub n_trials: usize,
    pub queries_per_trial: usize,
    pub candidate_pool_size: usize,
    pub k: usize,
    pub seed: u64,
}

impl Default for TrialSpec {
    fn default() -> Self {
        Self {
            n_trials: 7,
            queries_per_trial: 50,
            candidate_pool_size: 5000,
            k: 10,
            seed: 0,
        }
    }
}

impl TrialSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_trials == 0 || self.queries_per_trial == 0 || self.candidate_pool_size == 0 || self.k == 0 {
            return Err(Error::Config("trial counts and k must all be positive".into()));
        }
        Ok(())
    }
}

/// Annotated query and candidate splits.
#[derive(Debug, Clone, Default)]
pub struct EvalCorpus {
    pub annotations: BTreeMap<String, SceneAnnotation>,
    pub queries: Vec<String>,
    pub candidates: Vec<String>,
}

impl EvalCorpus {
    pub fn from_manifest(m: &Manifest) -> Result<Self> {
        let mut c = Self::default();
        for e in &m.entries {
            if e.split == Split::Train {
                continue;
            }
            let a = e
                .annotation
                .clone()
                .ok_or_else(|| Error::Schema(format!("{} has no annotation", e.image_id)))?;
            c.annotations.insert(e.image_id.clone(), a);
            match e.split {
                Split::ValidationQuery => c.queries.push(e.image_id.clone()),
                Split::Candidates => c.candidates.push(e.image_id.clone()),
                Split::Train => {}
            }
        }
        Ok(c)
    }

    /// Attributes every annotated object carries.
    pub fn schema(&self) -> Vec<Attribute> {
        Attribute::ALL
            .into_iter()
            .filter(|&a| self.annotations.values().all(|s| s.has_attribute(a)))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    fn of(values: &[f64]) -> Self {
        let (mean, std) = mean_and_std(values);
        Self { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetResult {
    pub subset: String,
    pub top_k_precision: f64,
    pub weighted_precision: f64,
    pub error_rate: f64,
    /// Queries left out of the error rate because no candidate matched.
    pub excluded_queries: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyResult {
    pub family: String,
    pub top_k_precision: f64,
    pub weighted_precision: f64,
    pub error_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub trial: usize,
    pub seed: u64,
    pub queries: Vec<String>,
    pub pool_size: usize,
    pub subsets: Vec<SubsetResult>,
    pub families: Vec<FamilyResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub colour_distance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub name: String,
    pub top_k_precision: MeanStd,
    pub weighted_precision: MeanStd,
    pub error_rate: MeanStd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub spec: TrialSpec,
    pub sampler: String,
    pub query_split_size: usize,
    pub candidate_split_size: usize,
    pub schema: Vec<Attribute>,
    /// Ids dropped because they had no representation.
    pub missing_representations: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub metadata: ReportMetadata,
    pub trials: Vec<TrialResult>,
    pub families: Vec<SummaryRow>,
    pub subsets: Vec<SummaryRow>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub colour_distance: Option<MeanStd>,
}

impl MetricsReport {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn family(&self, name: &str) -> Option<&SummaryRow> {
        self.families.iter().find(|r| r.name == name)
    }

    pub fn subset(&self, code: &str) -> Option<&SummaryRow> {
        self.subsets.iter().find(|r| r.name == code)
    }

    /// One row per family and per subset, aggregated across trials.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "kind,name,top_k_precision_mean,top_k_precision_std,weighted_precision_mean,weighted_precision_std,error_rate_mean,error_rate_std\n",
        );
        let rows = self
            .families
            .iter()
            .map(|r| ("family", r))
            .chain(self.subsets.iter().map(|r| ("subset", r)));
        for (kind, r) in rows {
            let _ = writeln!(
                out,
                "{kind},{},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9}",
                r.name,
                r.top_k_precision.mean,
                r.top_k_precision.std,
                r.weighted_precision.mean,
                r.weighted_precision.std,
                r.error_rate.mean,
                r.error_rate.std
            );
        }
        out
    }
}

/// Report plus the truncated top-k rankings of every trial.
#[derive(Debug, Clone)]
pub struct TrialRun {
    pub report: MetricsReport,
    pub rankings: Vec<Vec<RankedList>>,
}

fn sample(ids: &[String], n: usize, rng: &mut ChaCha8Rng) -> Vec<String> {
    let mut pool = ids.to_vec();
    let (head, _) = pool.partial_shuffle(rng, n);
    head.to_vec()
}

/// Run the sampling protocol: per trial, draw queries without replacement,
/// rank each against the candidate pool and score every subset.
///
/// `colours` optionally maps image ids to mean foreground RGB; when given,
/// the mean colour distance to the top-k is reported too.
pub fn run_trials(
    corpus: &EvalCorpus,
    reps: &BTreeMap<String, JointRepresentation>,
    spec: &TrialSpec,
    families: &[SubsetFamily],
    colours: Option<&BTreeMap<String, [f64; 3]>>,
) -> Result<TrialRun> {
    spec.validate()?;
    if families.is_empty() {
        return Err(Error::Config("no subset families selected".into()));
    }
    let schema = corpus.schema();
    for f in families {
        for s in &f.subsets {
            if let Some(a) = s.attributes().iter().find(|a| !schema.contains(a)) {
                return Err(Error::Schema(format!("family {} uses {a}, absent from the corpus", f.name)));
            }
        }
    }

    let mut missing = Vec::new();
    let mut present = |ids: &[String]| -> Vec<String> {
        ids.iter()
            .filter(|id| {
                let ok = reps.contains_key(*id);
                if !ok {
                    warn!("{id} has no representation; excluded");
                    missing.push((*id).clone());
                }
                ok
            })
            .cloned()
            .collect()
    };
    let mut queries = present(&corpus.queries);
    let mut candidates = present(&corpus.candidates);
    queries.sort();
    candidates.sort();
    if queries.len() < spec.queries_per_trial {
        return Err(Error::Config(format!(
            "{} usable queries, the protocol needs {}",
            queries.len(),
            spec.queries_per_trial
        )));
    }
    if candidates.len() < spec.candidate_pool_size {
        return Err(Error::Config(format!(
            "{} usable candidates, the protocol needs {}",
            candidates.len(),
            spec.candidate_pool_size
        )));
    }
    for q in &queries {
        if corpus.annotations.get(q).and_then(|a| a.reference_object()).is_none() {
            return Err(Error::Schema(format!("query {q} has no reference object")));
        }
    }

    let all_subsets: Vec<AttributeSubset> = {
        let mut v: Vec<_> = families.iter().flat_map(|f| f.subsets.iter().cloned()).collect();
        v.sort();
        v.dedup();
        v
    };
    let fixed_index = if candidates.len() == spec.candidate_pool_size {
        Some(index_for(&candidates, reps)?)
    } else {
        None
    };

    let mut trials = Vec::with_capacity(spec.n_trials);
    let mut rankings = Vec::with_capacity(spec.n_trials);
    for t in 0..spec.n_trials {
        let seed = spec.seed.wrapping_add(t as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let qs = sample(&queries, spec.queries_per_trial, &mut rng);
        let sampled;
        let index = match &fixed_index {
            Some(i) => i,
            None => {
                let mut pool = sample(&candidates, spec.candidate_pool_size, &mut rng);
                pool.sort();
                sampled = index_for(&pool, reps)?;
                &sampled
            }
        };
        let ranked: Vec<RankedList> = qs
            .par_iter()
            .map(|q| {
                let mut r = index.rank(&reps[q])?;
                r.entries.retain(|e| &e.candidate_id != q);
                Ok(r)
            })
            .collect::<Result<_>>()?;

        let mut per_subset = BTreeMap::new();
        for s in &all_subsets {
            let flags: Vec<Vec<bool>> = ranked
                .iter()
                .map(|r| {
                    let a = &corpus.annotations[&r.query_id];
                    let reference = a.reference_object().expect("checked above");
                    r.entries
                        .iter()
                        .map(|e| {
                            let scene = corpus
                                .annotations
                                .get(&e.candidate_id)
                                .ok_or_else(|| Error::Schema(format!("{} has no annotation", e.candidate_id)))?;
                            attribute_match(reference, scene, s)
                        })
                        .collect::<Result<Vec<bool>>>()
                })
                .collect::<Result<_>>()?;
            let n = flags.len() as f64;
            let er = error_rate(&flags, spec.k);
            per_subset.insert(
                s.clone(),
                SubsetResult {
                    subset: s.code(),
                    top_k_precision: flags.iter().map(|f| top_k_precision(f, spec.k)).sum::<f64>() / n,
                    weighted_precision: flags.iter().map(|f| weighted_precision(f, spec.k)).sum::<f64>() / n,
                    error_rate: er.rate,
                    excluded_queries: er.excluded,
                },
            );
        }
        let family_results = families
            .iter()
            .map(|f| {
                let mean = |g: fn(&SubsetResult) -> f64| {
                    f.subsets.iter().map(|s| g(&per_subset[s])).sum::<f64>() / f.subsets.len() as f64
                };
                FamilyResult {
                    family: f.name.clone(),
                    top_k_precision: mean(|r| r.top_k_precision),
                    weighted_precision: mean(|r| r.weighted_precision),
                    error_rate: mean(|r| r.error_rate),
                }
            })
            .collect();
        let colour = colours.map(|c| mean_colour_distance(&ranked, c, spec.k));

        trials.push(TrialResult {
            trial: t,
            seed,
            queries: qs,
            pool_size: index.len(),
            subsets: per_subset.into_values().collect(),
            families: family_results,
            colour_distance: colour.flatten(),
        });
        rankings.push(
            ranked
                .into_iter()
                .map(|mut r| {
                    r.entries.truncate(spec.k);
                    r
                })
                .collect(),
        );
    }

    let summarize = |name: &str, rows: Vec<(f64, f64, f64)>| SummaryRow {
        name: name.to_string(),
        top_k_precision: MeanStd::of(&rows.iter().map(|r| r.0).collect::<Vec<_>>()),
        weighted_precision: MeanStd::of(&rows.iter().map(|r| r.1).collect::<Vec<_>>()),
        error_rate: MeanStd::of(&rows.iter().map(|r| r.2).collect::<Vec<_>>()),
    };
    let family_rows = families
        .iter()
        .enumerate()
        .map(|(i, f)| {
            summarize(
                &f.name,
                trials
                    .iter()
                    .map(|t| {
                        let r = &t.families[i];
                        (r.top_k_precision, r.weighted_precision, r.error_rate)
                    })
                    .collect(),
            )
        })
        .collect();
    let subset_rows = all_subsets
        .iter()
        .enumerate()
        .map(|(i, s)| {
            summarize(
                &s.code(),
                trials
                    .iter()
                    .map(|t| {
                        let r = &t.subsets[i];
                        (r.top_k_precision, r.weighted_precision, r.error_rate)
                    })
                    .collect(),
            )
        })
        .collect();
    let colour_values: Vec<f64> = trials.iter().filter_map(|t| t.colour_distance).collect();

    let report = MetricsReport {
        metadata: ReportMetadata {
            spec: spec.clone(),
            sampler: SAMPLER.to_string(),
            query_split_size: corpus.queries.len(),
            candidate_split_size: corpus.candidates.len(),
            schema,
            missing_representations: missing,
        },
        trials,
        families: family_rows,
        subsets: subset_rows,
        colour_distance: (!colour_values.is_empty()).then(|| MeanStd::of(&colour_values)),
    };
    Ok(TrialRun { report, rankings })
}

fn index_for(ids: &[String], reps: &BTreeMap<String, JointRepresentation>) -> Result<CandidateIndex> {
    let pool: Vec<JointRepresentation> = ids.iter().map(|id| reps[id].clone()).collect();
    CandidateIndex::new(&pool)
}

/// Mean over queries of the mean colour distance to their top-k; images
/// without a colour are skipped.
fn mean_colour_distance(ranked: &[RankedList], colours: &BTreeMap<String, [f64; 3]>, k: usize) -> Option<f64> {
    let mut per_query = Vec::new();
    for r in ranked {
        let Some(&q) = colours.get(&r.query_id) else {
            warn!("{} has an empty foreground; skipped for colour distance", r.query_id);
            continue;
        };
        let d: Vec<f64> = r
            .entries
            .iter()
            .take(k)
            .filter_map(|e| colours.get(&e.candidate_id))
            .map(|&c| colour_distance(q, c))
            .collect();
        if !d.is_empty() {
            per_query.push(d.iter().sum::<f64>() / d.len() as f64);
        }
    }
    (!per_query.is_empty()).then(|| per_query.iter().sum::<f64>() / per_query.len() as f64)
}
