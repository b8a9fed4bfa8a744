//! Joint global+latent representations and max-cosine patch-set scoring.

use std::cmp::Ordering;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{oadf, GlobalFeature, Tensor3};
use crate::error::{Error, Result};
use crate::linalg::{gemm, Op};

/// One vector per foreground patch: the image's global feature followed by
/// that patch's latent code.
#[derive(Debug, Clone, PartialEq)]
pub struct JointRepresentation {
    pub image_id: String,
    n_g: usize,
    n_z: usize,
    data: Vec<f64>,
}

/// Layout of the vectors in a set of joint representations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct JointLayout {
    pub n_g: usize,
    pub n_z: usize,
}

impl JointRepresentation {
    pub fn new(image_id: impl Into<String>, n_g: usize, n_z: usize, data: Vec<f64>) -> Result<Self> {
        let image_id = image_id.into();
        let n_v = n_g + n_z;
        if n_v == 0 {
            return Err(Error::arg("representation vectors must have positive length"));
        }
        if data.is_empty() || !data.len().is_multiple_of(n_v) {
            return Err(Error::Representation(format!(
                "{image_id}: {} values do not form vectors of length {n_v}",
                data.len()
            )));
        }
        for (i, v) in data.chunks_exact(n_v).enumerate() {
            let norm = dot(v, v).sqrt();
            if !norm.is_finite() || norm == 0.0 {
                return Err(Error::Representation(format!(
                    "{image_id}: vector {i} has zero or non-finite norm"
                )));
            }
        }
        Ok(Self {
            image_id,
            n_g,
            n_z,
            data,
        })
    }

    /// A single-vector representation holding only the global feature.
    pub fn global_only(global: &GlobalFeature) -> Result<Self> {
        let data = global.values.iter().map(|&v| v as f64).collect();
        Self::new(global.image_id.clone(), global.values.len(), 0, data)
    }

    pub fn layout(&self) -> JointLayout {
        JointLayout {
            n_g: self.n_g,
            n_z: self.n_z,
        }
    }

    pub fn dim(&self) -> usize {
        self.n_g + self.n_z
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn vector(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.data[i * d..(i + 1) * d]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Multiply every vector by `c`.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        Self::new(
            self.image_id.clone(),
            self.n_g,
            self.n_z,
            self.data.iter().map(|v| v * c).collect(),
        )
    }

    fn unit_rows(&self) -> Vec<f64> {
        let mut out = self.data.clone();
        for v in out.chunks_exact_mut(self.dim()) {
            let n = dot(v, v).sqrt();
            v.iter_mut().for_each(|x| *x /= n);
        }
        out
    }

    /// OADF with an `m x 1` grid; the layout travels separately.
    pub fn to_tensor(&self) -> Tensor3 {
        Tensor3 {
            grid_h: self.len(),
            grid_w: 1,
            dim: self.dim(),
            data: self.data.iter().map(|&v| v as f32).collect(),
        }
    }

    pub fn from_tensor(image_id: impl Into<String>, layout: JointLayout, t: Tensor3) -> Result<Self> {
        if t.dim != layout.n_g + layout.n_z {
            return Err(Error::arg(format!(
                "tensor vectors have length {}, layout expects {}",
                t.dim,
                layout.n_g + layout.n_z
            )));
        }
        let data = t.data.iter().map(|&v| v as f64).collect();
        Self::new(image_id, layout.n_g, layout.n_z, data)
    }
}

pub fn write_joint(rep: &JointRepresentation, path: &Path) -> Result<()> {
    oadf::write(&rep.to_tensor(), path)
}

pub fn read_joint(path: &Path, layout: JointLayout) -> Result<JointRepresentation> {
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    JointRepresentation::from_tensor(id, layout, oadf::read(path)?)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Concatenate the global feature with each latent code.
pub fn build_joint(global: &GlobalFeature, latents: &[Vec<f64>]) -> Result<JointRepresentation> {
    if latents.is_empty() {
        return Err(Error::Representation(format!(
            "{} has no foreground patches",
            global.image_id
        )));
    }
    let n_z = latents[0].len();
    let n_g = global.values.len();
    let mut data = Vec::with_capacity(latents.len() * (n_g + n_z));
    for z in latents {
        if z.len() != n_z {
            return Err(Error::arg("latent codes differ in length"));
        }
        data.extend(global.values.iter().map(|&v| v as f64));
        data.extend_from_slice(z);
    }
    JointRepresentation::new(global.image_id.clone(), n_g, n_z, data)
}

/// Pairwise cosine similarities between the patches of two images.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    pub query_id: String,
    pub candidate_id: String,
    pub rows: usize,
    pub cols: usize,
    pub entries: Vec<f64>,
}

impl SimilarityMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.cols + j]
    }
}

fn check_dims(a: &JointRepresentation, b: &JointRepresentation) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::arg(format!(
            "vector length mismatch: {} has {}, {} has {}",
            a.image_id,
            a.dim(),
            b.image_id,
            b.dim()
        )));
    }
    Ok(())
}

pub fn cosine_matrix(a: &JointRepresentation, b: &JointRepresentation) -> Result<SimilarityMatrix> {
    check_dims(a, b)?;
    let (ua, ub) = (a.unit_rows(), b.unit_rows());
    let d = a.dim();
    let mut entries = Vec::with_capacity(a.len() * b.len());
    for u in ua.chunks_exact(d) {
        for v in ub.chunks_exact(d) {
            entries.push(dot(u, v).clamp(-1.0, 1.0));
        }
    }
    Ok(SimilarityMatrix {
        query_id: a.image_id.clone(),
        candidate_id: b.image_id.clone(),
        rows: a.len(),
        cols: b.len(),
        entries,
    })
}

/// Mean over `a`'s patches of the best cosine match among `b`'s patches.
pub fn score(a: &JointRepresentation, b: &JointRepresentation) -> Result<f64> {
    let s = cosine_matrix(a, b)?;
    Ok(row_max_mean(&s.entries, s.cols))
}

fn row_max_mean(entries: &[f64], cols: usize) -> f64 {
    let rows = entries.len() / cols;
    let total: f64 = entries
        .chunks_exact(cols)
        .map(|r| r.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .sum();
    total / rows as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedEntry {
    pub candidate_id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub query_id: String,
    pub entries: Vec<RankedEntry>,
}

impl RankedList {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("rank,candidate_id,score\n");
        for (i, e) in self.entries.iter().enumerate() {
            let _ = writeln!(out, "{},{},{:.9}", i + 1, e.candidate_id, e.score);
        }
        out
    }

    pub fn parse_csv(query_id: impl Into<String>, text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (n, line) in text.lines().enumerate().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split(',');
            let (_, id, s) = match (parts.next(), parts.next(), parts.next()) {
                (Some(r), Some(id), Some(s)) => (r, id, s),
                _ => return Err(Error::Schema(format!("ranked list line {}: expected 3 fields", n + 1))),
            };
            let score = s
                .trim()
                .parse()
                .map_err(|_| Error::Schema(format!("ranked list line {}: bad score {s:?}", n + 1)))?;
            entries.push(RankedEntry {
                candidate_id: id.to_string(),
                score,
            });
        }
        Ok(Self {
            query_id: query_id.into(),
            entries,
        })
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.candidate_id.as_str())
    }
}

fn by_score_then_id(a: &RankedEntry, b: &RankedEntry) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.candidate_id.cmp(&b.candidate_id))
}

/// Candidate pool with unit-normalised patch vectors packed for scoring many
/// queries against the same pool.
#[derive(Debug, Clone)]
pub struct CandidateIndex {
    dim: usize,
    ids: Vec<String>,
    offsets: Vec<usize>,
    units: Vec<f64>,
}

const SCORE_BLOCK: usize = 256;

impl CandidateIndex {
    pub fn new(candidates: &[JointRepresentation]) -> Result<Self> {
        let Some(first) = candidates.first() else {
            return Err(Error::arg("candidate pool is empty"));
        };
        let dim = first.dim();
        let mut ids = Vec::with_capacity(candidates.len());
        let mut offsets = vec![0];
        let mut units = Vec::new();
        for c in candidates {
            check_dims(first, c)?;
            ids.push(c.image_id.clone());
            units.extend(c.unit_rows());
            offsets.push(units.len() / dim);
        }
        Ok(Self {
            dim,
            ids,
            offsets,
            units,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    /// Score the query against every candidate, in index order.
    pub fn scores(&self, query: &JointRepresentation) -> Result<Vec<f64>> {
        if query.dim() != self.dim {
            return Err(Error::arg(format!(
                "query {} has vectors of length {}, pool has {}",
                query.image_id,
                query.dim(),
                self.dim
            )));
        }
        let q = query.unit_rows();
        let m = query.len();
        let blocks: Vec<usize> = (0..self.len()).step_by(SCORE_BLOCK).collect();
        let per_block: Vec<Vec<f64>> = blocks
            .par_iter()
            .map(|&start| {
                let end = (start + SCORE_BLOCK).min(self.len());
                let (lo, hi) = (self.offsets[start], self.offsets[end]);
                let cols = hi - lo;
                let mut sims = vec![0.0; m * cols];
                gemm(
                    m,
                    self.dim,
                    cols,
                    1.0,
                    &q,
                    Op::N,
                    &self.units[lo * self.dim..hi * self.dim],
                    Op::T,
                    0.0,
                    &mut sims,
                );
                (start..end)
                    .map(|c| {
                        let (a, b) = (self.offsets[c] - lo, self.offsets[c + 1] - lo);
                        let total: f64 = (0..m)
                            .map(|i| {
                                sims[i * cols + a..i * cols + b]
                                    .iter()
                                    .copied()
                                    .fold(f64::NEG_INFINITY, f64::max)
                                    .clamp(-1.0, 1.0)
                            })
                            .sum();
                        total / m as f64
                    })
                    .collect()
            })
            .collect();
        Ok(per_block.concat())
    }

    pub fn rank(&self, query: &JointRepresentation) -> Result<RankedList> {
        let scores = self.scores(query)?;
        let mut entries: Vec<RankedEntry> = self
            .ids
            .iter()
            .zip(scores)
            .map(|(id, score)| RankedEntry {
                candidate_id: id.clone(),
                score,
            })
            .collect();
        entries.sort_by(by_score_then_id);
        Ok(RankedList {
            query_id: query.image_id.clone(),
            entries,
        })
    }
}

/// Rank every candidate by its score against `query`.
pub fn rank_candidates(
    query: &JointRepresentation,
    candidates: &[JointRepresentation],
) -> Result<RankedList> {
    CandidateIndex::new(candidates)?.rank(query)
}
