//! Write and read every on-disk format: OADF tensors, masks, PPM images,
//! VAE checkpoints and the manifest.

use oadino::corpus::{read_embeddings, read_ppm, write_embeddings, write_ppm, Image, Manifest, ManifestEntry, PatchEmbeddingSet, Split};
use oadino::segment::{mask_visualization, read_mask, write_mask, ForegroundMask, MaskPass};
use oadino::vae::{load_checkpoint, save_checkpoint, Architecture, VaeModel};

fn main() -> oadino::Result<()> {
    let dir = std::env::temp_dir().join("oadino_formats");
    std::fs::create_dir_all(&dir).map_err(|source| oadino::Error::Io { path: dir.clone(), source })?;

    let data: Vec<f32> = (0..2 * 3 * 4).map(|i| i as f32 * 0.25).collect();
    let set = PatchEmbeddingSet::new("img0", 2, 3, 4, data)?;
    write_embeddings(&set, &dir.join("img0.oadf"))?;
    assert_eq!(read_embeddings(&dir.join("img0.oadf"))?, set);

    let mask = ForegroundMask::new("img0", 2, 3, vec![false, true, true, false, true, false], MaskPass::First)?;
    write_mask(&mask, &dir.join("img0.oamk"))?;
    assert_eq!(read_mask(&dir.join("img0.oamk"))?.bits, mask.bits);

    let img = Image::filled("img0", 24, 16, [0.2, 0.5, 0.8]);
    write_ppm(&img, &dir.join("img0.ppm"))?;
    let back = read_ppm(&dir.join("img0.ppm"))?;
    println!("ppm pixel {:?} -> {:?}", img.pixel(0, 0), back.pixel(0, 0));
    write_ppm(&mask_visualization(&mask, 8), &dir.join("img0_mask.ppm"))?;

    let arch = Architecture {
        input: 48,
        hidden: [16, 8],
        latent: 4,
    };
    let model = VaeModel::new(arch, 1e-4, 0)?;
    save_checkpoint(&model, &dir.join("tiny.oavm"))?;
    assert_eq!(load_checkpoint(&dir.join("tiny.oavm"))?, model);

    let manifest = Manifest::new(
        &dir,
        vec![ManifestEntry {
            image_id: "img0".into(),
            split: Split::Candidates,
            image_path: "img0.ppm".into(),
            embedding_path: "img0.oadf".into(),
            global_feature_path: None,
            annotation: None,
        }],
    )?;
    print!("{}", manifest.to_jsonl()?);
    println!("wrote {}", dir.display());
    Ok(())
}
