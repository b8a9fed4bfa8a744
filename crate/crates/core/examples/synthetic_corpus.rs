//! Generate a small annotated corpus on disk and print one scene.
//!
//! ```text
//! cargo run --example synthetic_corpus -- [out_dir] [n_images]
//! ```

use std::path::PathBuf;

use oadino::corpus::Manifest;
use oadino::synth::{generate, write_corpus, SplitSizes, SynthConfig};

fn main() -> oadino::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "synthetic_corpus".into()));
    let n: usize = args.next().map_or(60, |a| a.parse().expect("n_images"));

    let cfg = SynthConfig {
        seed: 1,
        n_images: n,
        ..SynthConfig::default()
    };
    let scenes = generate(&cfg)?;
    let manifest = write_corpus(&cfg, &scenes, SplitSizes::for_total(n), &out)?;
    let m = Manifest::load(&manifest)?;
    println!("{} entries in {}", m.entries.len(), manifest.display());

    let s = &scenes[0];
    println!(
        "{}: {}x{} px, {} objects, {} foreground patches of {}",
        s.annotation.image_id,
        s.image.width,
        s.image.height,
        s.objects.len(),
        s.truth.count(),
        s.truth.bits.len()
    );
    for (i, o) in s.annotation.objects.iter().enumerate() {
        let reference = if s.annotation.reference_object_index == Some(i) { "  <- reference" } else { "" };
        println!(
            "  {} {} {} {}{reference}",
            o.size,
            o.colour.as_deref().unwrap_or("-"),
            o.material,
            o.shape
        );
    }
    for r in 0..s.truth.grid_h {
        let row: String = (0..s.truth.grid_w)
            .map(|c| if s.truth.bits[r * s.truth.grid_w + c] { '#' } else { '.' })
            .collect();
        println!("  {row}");
    }
    Ok(())
}
