//! PCA foreground segmentation over batches of patch embeddings.
//!
//! Pass one fits PCA on every patch of a batch, orients the first
//! component so that border patches (mostly background) project low, and
//! keeps patches strictly above the batch median. Pass two refits PCA on
//! the masked matrix (background rows zeroed, foreground rows kept),
//! projects every patch onto the new first component and splits the
//! projections at the two-class variance optimum, choosing the side that
//! best agrees with the first-pass mask.

use std::fs;
use std::ops::Range;
use std::path::Path;

use crate::corpus::image::{Image, CHANNELS};
use crate::corpus::oadf::PatchEmbeddingSet;
use crate::corpus::patch::{to_object_patch, ObjectPatch};
use crate::error::{io_at, Error, Result};
use crate::pca::{fit_pca_with, median, PcaBasis};

/// Default number of images per PCA batch.
pub const DEFAULT_BATCH: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskPass {
    First,
    Refined,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ForegroundMask {
    pub image_id: String,
    pub grid_h: usize,
    pub grid_w: usize,
    pub bits: Vec<bool>,
    pub pass: MaskPass,
}

impl ForegroundMask {
    pub fn new(
        image_id: impl Into<String>,
        grid_h: usize,
        grid_w: usize,
        bits: Vec<bool>,
        pass: MaskPass,
    ) -> Result<Self> {
        if bits.len() != grid_h * grid_w {
            return Err(Error::arg(format!(
                "mask has {} bits for a {grid_h}x{grid_w} grid",
                bits.len()
            )));
        }
        Ok(Self {
            image_id: image_id.into(),
            grid_h,
            grid_w,
            bits,
            pass,
        })
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    /// Indices of foreground patches in row-major order.
    pub fn foreground(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits.iter().enumerate().filter(|(_, b)| **b).map(|(i, _)| i)
    }
}

/// Fraction of bits on which two equally shaped mask lists agree.
pub fn mask_accuracy(pred: &[ForegroundMask], truth: &[ForegroundMask]) -> f64 {
    let mut agree = 0usize;
    let mut total = 0usize;
    for (p, t) in pred.iter().zip(truth) {
        total += p.bits.len();
        agree += p.bits.iter().zip(&t.bits).filter(|(a, b)| a == b).count();
    }
    if total == 0 {
        return 1.0;
    }
    agree as f64 / total as f64
}

fn check_batch(batch: &[PatchEmbeddingSet]) -> Result<(usize, usize, usize)> {
    let first = batch
        .first()
        .ok_or_else(|| Error::arg("segmentation batch is empty"))?;
    let shape = (first.grid_h, first.grid_w, first.dim);
    for set in batch {
        if (set.grid_h, set.grid_w, set.dim) != shape {
            return Err(Error::arg(format!(
                "image {} has grid {}x{} dim {}, batch expects {}x{} dim {}",
                set.image_id, set.grid_h, set.grid_w, set.dim, shape.0, shape.1, shape.2
            )));
        }
    }
    Ok(shape)
}

fn split_masks(
    batch: &[PatchEmbeddingSet],
    bits: Vec<bool>,
    pass: MaskPass,
) -> Vec<ForegroundMask> {
    let p = batch[0].patches();
    batch
        .iter()
        .zip(bits.chunks(p))
        .map(|(set, b)| ForegroundMask {
            image_id: set.image_id.clone(),
            grid_h: set.grid_h,
            grid_w: set.grid_w,
            bits: b.to_vec(),
            pass,
        })
        .collect()
}

fn project_all(batch: &[PatchEmbeddingSet], basis: &PcaBasis) -> Vec<f64> {
    batch
        .iter()
        .flat_map(|set| (0..set.patches()).map(move |i| basis.project(set.embedding(i), 0)))
        .collect()
}

/// First pass: batch PCA and a strict median threshold on the first
/// component.
pub fn first_pass_mask(batch: &[PatchEmbeddingSet]) -> Result<(PcaBasis, Vec<ForegroundMask>)> {
    let (_, _, dim) = check_batch(batch)?;
    let p = batch[0].patches();
    let n = batch.len() * p;
    if n < 2 {
        return Err(Error::arg("first pass needs at least 2 patches in the batch"));
    }
    let mut basis = fit_pca_with(n, dim, 1, |i, out| {
        for (o, &v) in out.iter_mut().zip(batch[i / p].embedding(i % p)) {
            *o = v as f64;
        }
    })?;
    let mut z = project_all(batch, &basis);

    // background dominates image borders: orient so borders project low
    let (mut border, mut nb, mut interior, mut ni) = (0.0, 0usize, 0.0, 0usize);
    for (i, &v) in z.iter().enumerate() {
        if batch[i / p].is_border(i % p) {
            border += v;
            nb += 1;
        } else {
            interior += v;
            ni += 1;
        }
    }
    if nb > 0 && ni > 0 && border / nb as f64 > interior / ni as f64 {
        basis.negate(0);
        for v in &mut z {
            *v = -*v;
        }
    }

    let threshold = median(&z).expect("non-empty projections");
    let bits = z.iter().map(|&v| v > threshold).collect();
    Ok((basis, split_masks(batch, bits, MaskPass::First)))
}

/// Split point maximising the between-class variance of `values`.
///
/// Returns a threshold strictly between two distinct sorted values, or
/// `None` when all values are equal.
pub fn two_class_threshold(values: &[f64]) -> Option<f64> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let total: f64 = sorted.iter().sum();
    let mut left = 0.0;
    let mut best: Option<(f64, f64)> = None;
    for k in 1..n {
        left += sorted[k - 1];
        if sorted[k - 1] == sorted[k] {
            continue;
        }
        let (w0, w1) = (k as f64, (n - k) as f64);
        let gap = left / w0 - (total - left) / w1;
        let score = w0 * w1 * gap * gap;
        if best.is_none_or(|(s, _)| score > s) {
            best = Some((score, 0.5 * (sorted[k - 1] + sorted[k])));
        }
    }
    best.map(|(_, t)| t)
}

/// Second pass: PCA over the first-pass-masked matrix, re-thresholded.
pub fn second_pass_refine(
    batch: &[PatchEmbeddingSet],
    _basis1: &PcaBasis,
    masks1: &[ForegroundMask],
) -> Result<(PcaBasis, Vec<ForegroundMask>)> {
    let (_, _, dim) = check_batch(batch)?;
    if masks1.len() != batch.len() {
        return Err(Error::arg("first-pass masks do not match the batch"));
    }
    for (set, m) in batch.iter().zip(masks1) {
        if m.image_id != set.image_id || m.bits.len() != set.patches() {
            return Err(Error::arg(format!("mask for {} does not match its embeddings", set.image_id)));
        }
        if m.pass != MaskPass::First {
            return Err(Error::arg("refinement needs first-pass masks"));
        }
    }
    let p = batch[0].patches();
    let selected: Vec<bool> = masks1.iter().flat_map(|m| m.bits.iter().copied()).collect();
    let n_fg = selected.iter().filter(|b| **b).count();
    if n_fg < 2 {
        return Err(Error::Refinement(format!(
            "second pass needs at least 2 foreground patches, batch has {n_fg}"
        )));
    }

    let n = batch.len() * p;
    let basis = fit_pca_with(n, dim, 1, |i, out| {
        if selected[i] {
            for (o, &v) in out.iter_mut().zip(batch[i / p].embedding(i % p)) {
                *o = v as f64;
            }
        } else {
            out.fill(0.0);
        }
    })?;
    let z = project_all(batch, &basis);
    let threshold = two_class_threshold(&z)
        .ok_or_else(|| Error::Refinement("all projections coincide".into()))?;

    let above: Vec<bool> = z.iter().map(|&v| v > threshold).collect();
    let agree_above = above.iter().zip(&selected).filter(|(a, s)| a == s).count();
    // the below-threshold side agrees exactly where the above side disagrees
    let keep_above = 2 * agree_above >= n;
    let bits = above.into_iter().map(|a| a == keep_above).collect();
    let mut basis = basis;
    if !keep_above {
        basis.negate(0);
    }
    Ok((basis, split_masks(batch, bits, MaskPass::Refined)))
}

/// Outcome of segmenting one batch.
#[derive(Debug, Clone)]
pub struct Segmentation {
    pub first: Vec<ForegroundMask>,
    /// `None` when refinement was disabled or fell back to pass one.
    pub refined: Option<Vec<ForegroundMask>>,
}

impl Segmentation {
    pub fn best(&self) -> &[ForegroundMask] {
        self.refined.as_deref().unwrap_or(&self.first)
    }
}

/// Both passes, falling back to the first-pass mask when refinement fails.
pub fn segment_batch(batch: &[PatchEmbeddingSet], refine: bool) -> Result<Segmentation> {
    let (basis1, first) = first_pass_mask(batch)?;
    let refined = if refine {
        match second_pass_refine(batch, &basis1, &first) {
            Ok((_, m)) => Some(m),
            Err(Error::Refinement(msg)) => {
                log::warn!("keeping first-pass masks: {msg}");
                None
            }
            Err(e) => return Err(e),
        }
    } else {
        None
    };
    Ok(Segmentation { first, refined })
}

/// Split `n` images into consecutive batches of `t`. A trailing batch with
/// a single image is merged into the previous one.
pub fn plan_batches(n: usize, t: usize) -> Vec<Range<usize>> {
    let t = t.max(1);
    let mut out: Vec<Range<usize>> = (0..n).step_by(t).map(|s| s..(s + t).min(n)).collect();
    if out.len() > 1 && out.last().is_some_and(|r| r.len() < 2) {
        let last = out.pop().unwrap();
        out.last_mut().unwrap().end = last.end;
    }
    out
}

/// Pixel rectangle `(top, left, rows, cols)` of a grid cell, with
/// `s = ceil(extent / grid)` and the last row/column clipped.
pub fn cell_rect(image: &Image, grid_h: usize, grid_w: usize, index: usize) -> (usize, usize, usize, usize) {
    let sh = image.height.div_ceil(grid_h);
    let sw = image.width.div_ceil(grid_w);
    let (r, c) = (index / grid_w, index % grid_w);
    let top = r * sh;
    let left = c * sw;
    (top, left, sh.min(image.height - top), sw.min(image.width - left))
}

fn check_tiling(image: &Image, mask: &ForegroundMask) -> Result<()> {
    let ok = |extent: usize, grid: usize| grid > 0 && grid <= extent && (grid - 1) * extent.div_ceil(grid) < extent;
    if !ok(image.height, mask.grid_h) || !ok(image.width, mask.grid_w) {
        return Err(Error::arg(format!(
            "a {}x{} patch grid does not tile a {}x{} image",
            mask.grid_h, mask.grid_w, image.height, image.width
        )));
    }
    Ok(())
}

/// Map a patch mask to pixels: returns the background-zeroed image and the
/// foreground crops (row-major grid order) resized to 64x64.
pub fn remap_and_extract(image: &Image, mask: &ForegroundMask) -> Result<(Image, Vec<ObjectPatch>)> {
    check_tiling(image, mask)?;
    let mut masked = Image::filled(image.id.clone(), image.width, image.height, [0.0; 3]);
    let mut patches = Vec::with_capacity(mask.count());
    for idx in mask.foreground() {
        let (top, left, rows, cols) = cell_rect(image, mask.grid_h, mask.grid_w, idx);
        for r in top..top + rows {
            for c in left..left + cols {
                masked.set_pixel(r, c, image.pixel(r, c));
            }
        }
        let crop = image.crop(top, left, rows, cols);
        patches.push(to_object_patch(&image.id, idx, &crop, rows, cols)?);
    }
    Ok((masked, patches))
}

/// Mean RGB over the pixels of foreground cells, or `None` for an empty
/// mask.
pub fn mean_foreground_rgb(image: &Image, mask: &ForegroundMask) -> Result<Option<[f64; 3]>> {
    check_tiling(image, mask)?;
    let mut sum = [0.0f64; 3];
    let mut count = 0usize;
    for idx in mask.foreground() {
        let (top, left, rows, cols) = cell_rect(image, mask.grid_h, mask.grid_w, idx);
        for r in top..top + rows {
            for c in left..left + cols {
                let px = image.pixel(r, c);
                for ch in 0..CHANNELS {
                    sum[ch] += px[ch] as f64;
                }
                count += 1;
            }
        }
    }
    Ok((count > 0).then(|| sum.map(|s| s / count as f64)))
}

pub const MASK_MAGIC: &[u8; 4] = b"OAMK";
pub const MASK_VERSION: u32 = 1;

/// Layout: magic "OAMK", version u32, grid_h u32, grid_w u32, pass u32
/// (0 = first, 1 = refined), then each grid row packed LSB-first into
/// `ceil(grid_w / 8)` bytes. All integers little-endian.
pub fn encode_mask(mask: &ForegroundMask) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MASK_MAGIC);
    out.extend_from_slice(&MASK_VERSION.to_le_bytes());
    out.extend_from_slice(&(mask.grid_h as u32).to_le_bytes());
    out.extend_from_slice(&(mask.grid_w as u32).to_le_bytes());
    let pass: u32 = match mask.pass {
        MaskPass::First => 0,
        MaskPass::Refined => 1,
    };
    out.extend_from_slice(&pass.to_le_bytes());
    let row_bytes = mask.grid_w.div_ceil(8);
    for row in mask.bits.chunks(mask.grid_w.max(1)) {
        let mut packed = vec![0u8; row_bytes];
        for (c, &b) in row.iter().enumerate() {
            if b {
                packed[c / 8] |= 1 << (c % 8);
            }
        }
        out.extend_from_slice(&packed);
    }
    out
}

pub fn decode_mask(bytes: &[u8], image_id: impl Into<String>) -> Result<ForegroundMask> {
    if bytes.len() < 20 {
        return Err(Error::format(bytes.len() as u64, "mask shorter than its 20-byte header"));
    }
    if &bytes[..4] != MASK_MAGIC {
        return Err(Error::format(0, "bad magic, expected \"OAMK\""));
    }
    let word = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    if word(4) != MASK_VERSION {
        return Err(Error::format(4, format!("unsupported mask version {}", word(4))));
    }
    let grid_h = word(8) as usize;
    let grid_w = word(12) as usize;
    let pass = match word(16) {
        0 => MaskPass::First,
        1 => MaskPass::Refined,
        other => return Err(Error::format(16, format!("unknown mask pass {other}"))),
    };
    let row_bytes = grid_w.div_ceil(8);
    let need = grid_h * row_bytes;
    if bytes.len() - 20 != need {
        return Err(Error::format(
            20,
            format!("mask payload is {} bytes, header implies {need}", bytes.len() - 20),
        ));
    }
    let mut bits = Vec::with_capacity(grid_h * grid_w);
    for r in 0..grid_h {
        let row = &bytes[20 + r * row_bytes..20 + (r + 1) * row_bytes];
        bits.extend((0..grid_w).map(|c| row[c / 8] >> (c % 8) & 1 == 1));
    }
    ForegroundMask::new(image_id, grid_h, grid_w, bits, pass)
}

pub fn write_mask(mask: &ForegroundMask, path: &Path) -> Result<()> {
    fs::write(path, encode_mask(mask)).map_err(io_at(path))
}

pub fn read_mask(path: &Path) -> Result<ForegroundMask> {
    let bytes = fs::read(path).map_err(io_at(path))?;
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    decode_mask(&bytes, id)
}

/// White-on-black rendering of a mask, `scale` pixels per grid cell.
pub fn mask_visualization(mask: &ForegroundMask, scale: usize) -> Image {
    let scale = scale.max(1);
    let mut img = Image::filled(mask.image_id.clone(), mask.grid_w * scale, mask.grid_h * scale, [0.0; 3]);
    for idx in mask.foreground() {
        let (r, c) = (idx / mask.grid_w, idx % mask.grid_w);
        for y in r * scale..(r + 1) * scale {
            for x in c * scale..(c + 1) * scale {
                img.set_pixel(y, x, [1.0; 3]);
            }
        }
    }
    img
}
