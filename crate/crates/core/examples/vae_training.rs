//! Train the patch VAE on object patches cut from segmented scenes, save a
//! checkpoint and reload it.
//!
//! ```text
//! cargo run --release --example vae_training -- [epochs] [checkpoint]
//! ```

use oadino::corpus::ObjectPatch;
use oadino::pipeline::{best_masks, extract_all, segment_all};
use oadino::synth::{generate, SynthConfig};
use oadino::vae::{
    extract_latents, load_checkpoint, save_checkpoint, trace_csv, train, Architecture, TrainConfig, VaeModel,
    DEFAULT_BETA,
};

fn main() -> oadino::Result<()> {
    let mut args = std::env::args().skip(1);
    let epochs: usize = args.next().map_or(5, |a| a.parse().expect("epochs"));
    let path = args.next().unwrap_or_else(|| "model.oavm".into());

    let scenes = generate(&SynthConfig {
        seed: 3,
        n_images: 50,
        ..SynthConfig::default()
    })?;
    let sets: Vec<_> = scenes.iter().map(|s| s.embeddings.clone()).collect();
    let masks = best_masks(&segment_all(&sets, 50, true)?);
    let images: Vec<_> = scenes.iter().map(|s| s.image.clone()).collect();
    let patches: Vec<ObjectPatch> = extract_all(&images, &masks)?.into_iter().flat_map(|(_, p)| p).collect();
    let refs: Vec<&[f32]> = patches.iter().map(ObjectPatch::pixels).collect();
    println!("{} object patches", refs.len());

    let mut model = VaeModel::new(Architecture::default(), DEFAULT_BETA, 0)?;
    let cfg = TrainConfig {
        epochs,
        ..TrainConfig::default()
    };
    let trace = train(&mut model, &refs, &cfg, |e, _| {
        println!("epoch {:>3}  recon {:>10.3}  kl {:>8.3}", e.epoch, e.recon, e.kl)
    })?;
    print!("{}", trace_csv(&trace));

    save_checkpoint(&model, path.as_ref())?;
    let reloaded = load_checkpoint(path.as_ref())?;
    let z = extract_latents(&reloaded, &refs[..1])?;
    println!("latent of the first patch: {:.3?}", z[0]);
    Ok(())
}
