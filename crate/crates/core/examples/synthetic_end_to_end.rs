//! Full pipeline on a generated corpus: segment, train the VAE on the
//! training split, build joint representations and compare retrieval
//! against the global-feature baseline.
//!
//! ```text
//! cargo run --release --example synthetic_end_to_end -- [n_images] [epochs]
//! ```

use std::collections::BTreeMap;
use std::time::Instant;

use oadino::corpus::{Attribute, Split};
use oadino::eval::{run_trials, EvalCorpus, SubsetFamily, TrialSpec};
use oadino::pipeline::{best_masks, encode_all, extract_all, joint_all, segment_all};
use oadino::segment::mask_accuracy;
use oadino::similarity::JointRepresentation;
use oadino::synth::{generate, SplitSizes, SynthConfig};
use oadino::vae::{train, Architecture, TrainConfig, VaeModel, DEFAULT_BETA};

fn main() -> oadino::Result<()> {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().map_or(600, |a| a.parse().expect("n_images"));
    let epochs: usize = args.next().map_or(20, |a| a.parse().expect("epochs"));
    let clock = Instant::now();

    let cfg = SynthConfig {
        seed: 7,
        n_images: n,
        ..SynthConfig::default()
    };
    let scenes = generate(&cfg)?;
    let splits = SplitSizes::for_total(n);
    println!("generated {n} scenes in {:.1?}", clock.elapsed());

    let sets: Vec<_> = scenes.iter().map(|s| s.embeddings.clone()).collect();
    let masks = best_masks(&segment_all(&sets, 50, true)?);
    let truth: Vec<_> = scenes.iter().map(|s| s.truth.clone()).collect();
    println!("mask accuracy {:.4}", mask_accuracy(&masks, &truth));

    let images: Vec<_> = scenes.iter().map(|s| s.image.clone()).collect();
    let extracted = extract_all(&images, &masks)?;
    let patches: Vec<_> = extracted.into_iter().map(|(_, p)| p).collect();
    let train_refs: Vec<&[f32]> = patches[..splits.train]
        .iter()
        .flatten()
        .map(|p| p.pixels())
        .collect();
    println!("training on {} patches", train_refs.len());

    let mut model = VaeModel::new(Architecture::default(), DEFAULT_BETA, 1)?;
    let tc = TrainConfig {
        epochs,
        seed: 1,
        ..TrainConfig::default()
    };
    train(&mut model, &train_refs, &tc, |e, _| {
        println!("epoch {:>3}  recon {:>10.3}  kl {:>8.3}  [{:.0?}]", e.epoch, e.recon, e.kl, clock.elapsed())
    })?;

    let latents = encode_all(&model, &patches)?;
    let globals: Vec<_> = scenes.iter().map(|s| s.global_masked.clone()).collect();
    let joint: BTreeMap<String, JointRepresentation> = joint_all(&globals, &latents)?
        .into_iter()
        .map(|r| (r.image_id.clone(), r))
        .collect();
    let global: BTreeMap<String, JointRepresentation> = globals
        .iter()
        .map(|g| Ok((g.image_id.clone(), JointRepresentation::global_only(g)?)))
        .collect::<oadino::Result<_>>()?;

    let mut corpus = EvalCorpus::default();
    for (i, s) in scenes.iter().enumerate() {
        let id = s.annotation.image_id.clone();
        match splits.split_of(i) {
            Split::ValidationQuery => corpus.queries.push(id.clone()),
            Split::Candidates => corpus.candidates.push(id.clone()),
            Split::Train => continue,
        }
        corpus.annotations.insert(id, s.annotation.clone());
    }
    let spec = TrialSpec {
        candidate_pool_size: splits.candidates,
        queries_per_trial: 50.min(splits.queries),
        seed: 11,
        ..TrialSpec::default()
    };
    let mut families: Vec<_> = Attribute::ALL.into_iter().map(SubsetFamily::single).collect();
    families.push(SubsetFamily::parse("P3(SDM)+C")?);

    let j = run_trials(&corpus, &joint, &spec, &families, None)?.report;
    let g = run_trials(&corpus, &global, &spec, &families, None)?.report;
    println!("{:<12} {:>14} {:>14} {:>8}", "family", "joint", "global", "delta");
    for f in &families {
        let (a, b) = (j.family(&f.name).unwrap(), g.family(&f.name).unwrap());
        println!(
            "{:<12} {:>6.1} ± {:<5.1} {:>6.1} ± {:<5.1} {:>+8.1}",
            f.name,
            100.0 * a.top_k_precision.mean,
            100.0 * a.top_k_precision.std,
            100.0 * b.top_k_precision.mean,
            100.0 * b.top_k_precision.std,
            100.0 * (a.top_k_precision.mean - b.top_k_precision.mean)
        );
    }
    println!("total {:.1?}", clock.elapsed());
    Ok(())
}
