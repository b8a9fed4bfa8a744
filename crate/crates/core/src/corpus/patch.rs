//! Object patches: image crops resized to the fixed VAE input resolution.

use super::image::CHANNELS;
use super::oadf::Tensor3;
use crate::error::{Error, Result};

pub const PATCH_SIDE: usize = 64;
pub const PATCH_LEN: usize = PATCH_SIDE * PATCH_SIDE * CHANNELS;

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectPatch {
    pub image_id: String,
    /// Row-major grid index of the source patch.
    pub patch_index: usize,
    pixels: Vec<f32>,
}

impl ObjectPatch {
    pub fn new(image_id: impl Into<String>, patch_index: usize, pixels: Vec<f32>) -> Result<Self> {
        if pixels.len() != PATCH_LEN {
            return Err(Error::arg(format!(
                "object patch must hold {PATCH_LEN} values, got {}",
                pixels.len()
            )));
        }
        if pixels.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::arg("object patch values must lie in [0, 1]"));
        }
        Ok(Self {
            image_id: image_id.into(),
            patch_index,
            pixels,
        })
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }
}

/// Bilinear resize of an interleaved RGB crop with half-pixel-centred
/// sampling: output pixel `d` samples source coordinate
/// `(d + 0.5) * src / dst - 0.5`, clamped to the source extent.
pub fn resize_bilinear(
    src: &[f32],
    src_h: usize,
    src_w: usize,
    dst_h: usize,
    dst_w: usize,
) -> Result<Vec<f32>> {
    if src_h == 0 || src_w == 0 {
        return Err(Error::arg("cannot resize an empty crop"));
    }
    if src.len() != src_h * src_w * CHANNELS {
        return Err(Error::arg("crop buffer does not match its dimensions"));
    }
    let axis = |d: usize, src_n: usize, dst_n: usize| -> (usize, usize, f32) {
        let x = ((d as f64 + 0.5) * src_n as f64 / dst_n as f64 - 0.5).clamp(0.0, (src_n - 1) as f64);
        let lo = x.floor() as usize;
        let hi = (lo + 1).min(src_n - 1);
        (lo, hi, (x - lo as f64) as f32)
    };
    let cols: Vec<_> = (0..dst_w).map(|c| axis(c, src_w, dst_w)).collect();
    let mut out = Vec::with_capacity(dst_h * dst_w * CHANNELS);
    for r in 0..dst_h {
        let (r0, r1, fy) = axis(r, src_h, dst_h);
        for &(c0, c1, fx) in &cols {
            for ch in 0..CHANNELS {
                let at = |rr: usize, cc: usize| src[(rr * src_w + cc) * CHANNELS + ch];
                let top = at(r0, c0) + fx * (at(r0, c1) - at(r0, c0));
                let bottom = at(r1, c0) + fx * (at(r1, c1) - at(r1, c0));
                out.push((top + fy * (bottom - top)).clamp(0.0, 1.0));
            }
        }
    }
    Ok(out)
}

/// Resize an `h x w` crop to a 64x64 object patch.
pub fn to_object_patch(
    image_id: &str,
    patch_index: usize,
    crop: &[f32],
    h: usize,
    w: usize,
) -> Result<ObjectPatch> {
    let pixels = resize_bilinear(crop, h, w, PATCH_SIDE, PATCH_SIDE)?;
    ObjectPatch::new(image_id, patch_index, pixels)
}

/// Pack the patches of one image into an OADF tensor (m x 1 grid).
pub fn patches_to_tensor(patches: &[ObjectPatch]) -> Tensor3 {
    Tensor3 {
        grid_h: patches.len(),
        grid_w: 1,
        dim: PATCH_LEN,
        data: patches.iter().flat_map(|p| p.pixels.iter().copied()).collect(),
    }
}

pub fn patches_from_tensor(image_id: &str, indices: &[usize], t: Tensor3) -> Result<Vec<ObjectPatch>> {
    if t.dim != PATCH_LEN || t.rows() != indices.len() {
        return Err(Error::format(
            8,
            format!(
                "patch tensor is {}x{}, expected {}x{PATCH_LEN}",
                t.rows(),
                t.dim,
                indices.len()
            ),
        ));
    }
    t.data
        .chunks_exact(PATCH_LEN)
        .zip(indices)
        .map(|(px, &i)| ObjectPatch::new(image_id, i, px.to_vec()))
        .collect()
}
