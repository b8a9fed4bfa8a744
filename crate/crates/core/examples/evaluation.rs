//! Retrieval metrics on hand-made match flags, then the multi-trial
//! protocol on a generated corpus with global-feature representations.

use std::collections::BTreeMap;

use oadino::corpus::{Attribute, Split};
use oadino::eval::{error_rate, run_trials, top_k_precision, weighted_precision, EvalCorpus, SubsetFamily, TrialSpec};
use oadino::similarity::JointRepresentation;
use oadino::synth::{generate, SplitSizes, SynthConfig};

fn main() -> oadino::Result<()> {
    let flags = [true, false, true, false, false, false, false, false, false, false];
    println!("top-10 precision    {:.4}", top_k_precision(&flags, 10));
    println!("weighted precision  {:.4}", weighted_precision(&flags, 10));
    let er = error_rate(&[flags.to_vec(), vec![false; 20], vec![false; 10]], 10);
    println!("error rate          {:.4} ({} evaluated, {} excluded)", er.rate, er.evaluated, er.excluded);

    let n = 300;
    let scenes = generate(&SynthConfig {
        seed: 2,
        n_images: n,
        ..SynthConfig::default()
    })?;
    let splits = SplitSizes::for_total(n);
    let mut corpus = EvalCorpus::default();
    let mut reps = BTreeMap::new();
    for (i, s) in scenes.iter().enumerate() {
        let id = s.annotation.image_id.clone();
        match splits.split_of(i) {
            Split::ValidationQuery => corpus.queries.push(id.clone()),
            Split::Candidates => corpus.candidates.push(id.clone()),
            Split::Train => continue,
        }
        corpus.annotations.insert(id.clone(), s.annotation.clone());
        reps.insert(id, JointRepresentation::global_only(&s.global_masked)?);
    }
    let spec = TrialSpec {
        queries_per_trial: 25,
        candidate_pool_size: 100,
        ..TrialSpec::default()
    };
    let families = SubsetFamily::defaults(&Attribute::ALL);
    let run = run_trials(&corpus, &reps, &spec, &families, None)?;
    print!("{}", run.report.to_csv());
    Ok(())
}
