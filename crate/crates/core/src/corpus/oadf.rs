//! OADF: a fixed little-endian tensor container.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "OADF"
//! 4       4     version (u32, = 1)
//! 8       4     grid_h  (u32)
//! 12      4     grid_w  (u32)
//! 16      4     n_y     (u32)
//! 20      ...   grid_h * grid_w * n_y binary32 values, patch-major
//! ```
//!
//! The same layout carries patch embeddings, global features (1x1 grid),
//! extracted object patches and joint representations (m x 1 grid).

use std::fs;
use std::path::Path;

use crate::error::{io_at, Error, Result};

pub const MAGIC: &[u8; 4] = b"OADF";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 20;

/// Raw decoded OADF payload.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    pub grid_h: usize,
    pub grid_w: usize,
    pub dim: usize,
    pub data: Vec<f32>,
}

impl Tensor3 {
    pub fn rows(&self) -> usize {
        self.grid_h * self.grid_w
    }
}

pub fn encode(t: &Tensor3) -> Result<Vec<u8>> {
    let dims = [t.grid_h, t.grid_w, t.dim];
    if dims.iter().any(|&d| d > u32::MAX as usize) {
        return Err(Error::arg("tensor dimension exceeds u32"));
    }
    if t.data.len() != t.grid_h * t.grid_w * t.dim {
        return Err(Error::arg(format!(
            "payload has {} values, header implies {}",
            t.data.len(),
            t.grid_h * t.grid_w * t.dim
        )));
    }
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * t.data.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for d in dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in &t.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

fn u32_at(bytes: &[u8], offset: usize) -> u32 {
    u32::from_le_bytes(bytes[offset..offset + 4].try_into().unwrap())
}

pub fn decode(bytes: &[u8]) -> Result<Tensor3> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::format(bytes.len() as u64, "file shorter than the 20-byte header"));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::format(0, "bad magic, expected \"OADF\""));
    }
    let version = u32_at(bytes, 4);
    if version != VERSION {
        return Err(Error::format(4, format!("unsupported version {version}")));
    }
    let grid_h = u32_at(bytes, 8) as usize;
    let grid_w = u32_at(bytes, 12) as usize;
    let dim = u32_at(bytes, 16) as usize;
    let count = grid_h
        .checked_mul(grid_w)
        .and_then(|p| p.checked_mul(dim))
        .ok_or_else(|| Error::format(8, "header dimensions overflow"))?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != count * 4 {
        return Err(Error::format(
            HEADER_LEN as u64,
            format!("payload is {} bytes, header implies {}", payload.len(), count * 4),
        ));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(Tensor3 {
        grid_h,
        grid_w,
        dim,
        data,
    })
}

pub fn read(path: &Path) -> Result<Tensor3> {
    decode(&fs::read(path).map_err(io_at(path))?)
}

pub fn write(t: &Tensor3, path: &Path) -> Result<()> {
    fs::write(path, encode(t)?).map_err(io_at(path))
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Backbone patch vectors of one image on a `grid_h x grid_w` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchEmbeddingSet {
    pub image_id: String,
    pub grid_h: usize,
    pub grid_w: usize,
    pub dim: usize,
    data: Vec<f32>,
}

impl PatchEmbeddingSet {
    pub fn new(
        image_id: impl Into<String>,
        grid_h: usize,
        grid_w: usize,
        dim: usize,
        data: Vec<f32>,
    ) -> Result<Self> {
        if grid_h * grid_w == 0 || dim == 0 {
            return Err(Error::arg("embedding set needs at least one patch and dimension"));
        }
        if data.len() != grid_h * grid_w * dim {
            return Err(Error::arg(format!(
                "embedding payload has {} values, expected {}",
                data.len(),
                grid_h * grid_w * dim
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::arg("embedding contains non-finite values"));
        }
        Ok(Self {
            image_id: image_id.into(),
            grid_h,
            grid_w,
            dim,
            data,
        })
    }

    pub fn patches(&self) -> usize {
        self.grid_h * self.grid_w
    }

    pub fn embedding(&self, patch: usize) -> &[f32] {
        &self.data[patch * self.dim..(patch + 1) * self.dim]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn to_tensor(&self) -> Tensor3 {
        Tensor3 {
            grid_h: self.grid_h,
            grid_w: self.grid_w,
            dim: self.dim,
            data: self.data.clone(),
        }
    }

    pub fn from_tensor(image_id: impl Into<String>, t: Tensor3) -> Result<Self> {
        Self::new(image_id, t.grid_h, t.grid_w, t.dim, t.data)
    }

    /// Every patch in the first or last grid row or column.
    pub fn is_border(&self, patch: usize) -> bool {
        let (r, c) = (patch / self.grid_w, patch % self.grid_w);
        r == 0 || c == 0 || r + 1 == self.grid_h || c + 1 == self.grid_w
    }
}

pub fn write_embeddings(set: &PatchEmbeddingSet, path: &Path) -> Result<()> {
    write(&set.to_tensor(), path)
}

/// The image id is taken from the file stem.
pub fn read_embeddings(path: &Path) -> Result<PatchEmbeddingSet> {
    let t = read(path)?;
    if t.rows() == 0 {
        return Err(Error::format(8, "embedding file has an empty grid"));
    }
    PatchEmbeddingSet::from_tensor(stem(path), t)
        .map_err(|e| Error::format(HEADER_LEN as u64, e.to_string()))
}

/// Whole-image descriptor (class token of the backbone).
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalFeature {
    pub image_id: String,
    pub values: Vec<f32>,
}

impl GlobalFeature {
    pub fn new(image_id: impl Into<String>, values: Vec<f32>) -> Result<Self> {
        if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
            return Err(Error::arg("global feature must be non-empty and finite"));
        }
        if values.iter().all(|&v| v == 0.0) {
            return Err(Error::arg("global feature has zero norm"));
        }
        Ok(Self {
            image_id: image_id.into(),
            values,
        })
    }
}

pub fn write_global(g: &GlobalFeature, path: &Path) -> Result<()> {
    let t = Tensor3 {
        grid_h: 1,
        grid_w: 1,
        dim: g.values.len(),
        data: g.values.clone(),
    };
    write(&t, path)
}

pub fn read_global(path: &Path) -> Result<GlobalFeature> {
    let t = read(path)?;
    if t.rows() != 1 {
        return Err(Error::format(8, "global feature files must have a 1x1 grid"));
    }
    GlobalFeature::new(stem(path), t.data).map_err(|e| Error::format(HEADER_LEN as u64, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tiny_layout() {
        let set = PatchEmbeddingSet::new("a", 1, 1, 2, vec![1.5, -2.0]).unwrap();
        let bytes = encode(&set.to_tensor()).unwrap();
        assert_eq!(bytes.len(), 28);
        assert_eq!(&bytes[..4], b"OADF");
        assert_eq!(&bytes[4..8], &[1, 0, 0, 0]);
        assert_eq!(&bytes[16..20], &[2, 0, 0, 0]);
        assert_eq!(&bytes[20..24], &1.5f32.to_le_bytes());
        assert_eq!(&bytes[24..28], &(-2.0f32).to_le_bytes());
    }

    #[test]
    fn bad_magic() {
        let mut bytes = encode(&Tensor3 { grid_h: 1, grid_w: 1, dim: 1, data: vec![0.0] }).unwrap();
        bytes[..4].copy_from_slice(b"XXXX");
        assert!(matches!(decode(&bytes), Err(Error::Format { offset: 0, .. })));
    }

    #[test]
    fn bad_version_and_size() {
        let good = encode(&Tensor3 { grid_h: 1, grid_w: 2, dim: 1, data: vec![0.0, 1.0] }).unwrap();
        let mut v2 = good.clone();
        v2[4] = 2;
        assert!(matches!(decode(&v2), Err(Error::Format { offset: 4, .. })));
        let short = &good[..good.len() - 1];
        assert!(matches!(decode(short), Err(Error::Format { offset: 20, .. })));
        assert!(decode(&good[..10]).is_err());
    }

    #[test]
    fn non_finite_embeddings_rejected() {
        assert!(PatchEmbeddingSet::new("x", 1, 1, 1, vec![f32::NAN]).is_err());
        assert!(GlobalFeature::new("x", vec![0.0, 0.0]).is_err());
    }

    #[test]
    fn border_patches() {
        let set = PatchEmbeddingSet::new("b", 3, 4, 1, vec![0.0; 12]).unwrap();
        let border: Vec<bool> = (0..12).map(|i| set.is_border(i)).collect();
        assert_eq!(border.iter().filter(|b| !**b).count(), 2);
        assert!(!set.is_border(5) && !set.is_border(6));
    }
}
