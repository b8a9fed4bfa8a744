//! In-memory composition of the stages: segmentation over batches, object
//! patch extraction, latent encoding and joint representations.

use log::warn;
use rayon::prelude::*;

use crate::corpus::{GlobalFeature, Image, ObjectPatch, PatchEmbeddingSet};
use crate::error::{Error, Result};
use crate::segment::{plan_batches, remap_and_extract, segment_batch, ForegroundMask, Segmentation};
use crate::similarity::{build_joint, JointRepresentation};
use crate::vae::VaeModel;

/// Segment `sets` in consecutive batches of `t` (see [`plan_batches`]).
pub fn segment_all(sets: &[PatchEmbeddingSet], t: usize, refine: bool) -> Result<Vec<Segmentation>> {
    if sets.is_empty() {
        return Err(Error::arg("empty manifest: nothing to segment"));
    }
    plan_batches(sets.len(), t)
        .into_par_iter()
        .map(|r| segment_batch(&sets[r], refine))
        .collect()
}

/// Final per-image masks from [`segment_all`], in input order.
pub fn best_masks(segs: &[Segmentation]) -> Vec<ForegroundMask> {
    segs.iter().flat_map(|s| s.best().iter().cloned()).collect()
}

/// Masked image and object patches for each image.
pub fn extract_all(images: &[Image], masks: &[ForegroundMask]) -> Result<Vec<(Image, Vec<ObjectPatch>)>> {
    if images.len() != masks.len() {
        return Err(Error::arg("images and masks differ in number"));
    }
    images
        .par_iter()
        .zip(masks)
        .map(|(img, m)| {
            if img.id != m.image_id {
                return Err(Error::arg(format!("mask {} paired with image {}", m.image_id, img.id)));
            }
            remap_and_extract(img, m)
        })
        .collect()
}

/// Latent means of each image's patches.
pub fn encode_all(model: &VaeModel, patches: &[Vec<ObjectPatch>]) -> Result<Vec<Vec<Vec<f64>>>> {
    patches
        .par_iter()
        .map(|ps| {
            let refs: Vec<&[f32]> = ps.iter().map(ObjectPatch::pixels).collect();
            model.encode_means(&refs)
        })
        .collect()
}

/// Joint representations for each image; images without foreground are
/// dropped with a warning.
pub fn joint_all(globals: &[GlobalFeature], latents: &[Vec<Vec<f64>>]) -> Result<Vec<JointRepresentation>> {
    if globals.len() != latents.len() {
        return Err(Error::arg("globals and latents differ in number"));
    }
    let mut out = Vec::with_capacity(globals.len());
    for (g, z) in globals.iter().zip(latents) {
        match build_joint(g, z) {
            Ok(r) => out.push(r),
            Err(Error::Representation(msg)) => warn!("excluded: {msg}"),
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}
