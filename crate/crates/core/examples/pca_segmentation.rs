//! Two-pass PCA foreground segmentation of one batch, compared with the
//! generator's ground truth.
//!
//! ```text
//! cargo run --release --example pca_segmentation -- [seed]
//! ```

use oadino::segment::{mask_accuracy, segment_batch, ForegroundMask};
use oadino::synth::{generate, SynthConfig};

fn show(mask: &ForegroundMask) {
    for r in 0..mask.grid_h {
        let row: String = (0..mask.grid_w)
            .map(|c| if mask.bits[r * mask.grid_w + c] { '#' } else { '.' })
            .collect();
        println!("  {row}");
    }
}

fn main() -> oadino::Result<()> {
    let seed: u64 = std::env::args().nth(1).map_or(0, |a| a.parse().expect("seed"));
    let cfg = SynthConfig {
        seed,
        n_images: 50,
        ..SynthConfig::default()
    };
    let scenes = generate(&cfg)?;
    let sets: Vec<_> = scenes.iter().map(|s| s.embeddings.clone()).collect();
    let truth: Vec<_> = scenes.iter().map(|s| s.truth.clone()).collect();

    let seg = segment_batch(&sets, true)?;
    println!("first pass accuracy   {:.4}", mask_accuracy(&seg.first, &truth));
    if let Some(refined) = &seg.refined {
        println!("second pass accuracy  {:.4}", mask_accuracy(refined, &truth));
    }

    println!("truth");
    show(&truth[0]);
    println!("first pass");
    show(&seg.first[0]);
    println!("final");
    show(&seg.best()[0]);
    Ok(())
}
