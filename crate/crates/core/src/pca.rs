//! Principal component analysis on row-major sample matrices.
//!
//! The covariance is accumulated in f64 over fixed-size row chunks (so a
//! batch of 50 x 1369 DINO patches never needs a second dense copy) and
//! decomposed with a symmetric tridiagonal QR solver, which is
//! deterministic for a given input.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

const CHUNK_ROWS: usize = 4096;
const EIGEN_MAX_ITER: usize = 10_000;

#[derive(Debug, Clone, PartialEq)]
pub struct PcaBasis {
    pub mean: Vec<f64>,
    /// `K` orthonormal components, each of length `dim`.
    pub components: Vec<Vec<f64>>,
    /// Sample variance along each component, nonincreasing.
    pub explained_variance: Vec<f64>,
    /// Total variance (trace of the covariance).
    pub total_variance: f64,
}

impl PcaBasis {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Coordinate of `row` along component `k`.
    pub fn project(&self, row: &[f32], k: usize) -> f64 {
        self.components[k]
            .iter()
            .zip(row)
            .zip(&self.mean)
            .map(|((c, &x), m)| c * (x as f64 - m))
            .sum()
    }

    pub fn explained_ratio(&self, k: usize) -> f64 {
        if self.total_variance > 0.0 {
            self.explained_variance[k] / self.total_variance
        } else {
            0.0
        }
    }

    /// Flip the sign of component `k`.
    pub fn negate(&mut self, k: usize) {
        for c in &mut self.components[k] {
            *c = -*c;
        }
    }
}

/// Fit PCA to `rows` (row-major, `rows.len() / dim` samples) keeping `k`
/// components.
pub fn fit_pca(rows: &[f64], dim: usize, k: usize) -> Result<PcaBasis> {
    if dim == 0 || !rows.len().is_multiple_of(dim) {
        return Err(Error::arg("row buffer length is not a multiple of the dimension"));
    }
    fit_pca_with(rows.len() / dim, dim, k, |i, out| {
        out.copy_from_slice(&rows[i * dim..(i + 1) * dim])
    })
}

/// Same as [`fit_pca`], pulling row `i` through `fill_row(i, buf)`.
pub fn fit_pca_with(
    n: usize,
    dim: usize,
    k: usize,
    fill_row: impl Fn(usize, &mut [f64]),
) -> Result<PcaBasis> {
    if n < 2 {
        return Err(Error::arg(format!("PCA needs at least 2 rows, got {n}")));
    }
    if k == 0 || k > dim.min(n - 1) {
        return Err(Error::arg(format!(
            "component count {k} must be in 1..={} for {n} rows of dimension {dim}",
            dim.min(n - 1)
        )));
    }

    let mut row = vec![0.0; dim];
    let mut mean = vec![0.0; dim];
    for i in 0..n {
        fill_row(i, &mut row);
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::arg(format!("row {i} contains non-finite values")));
        }
        for (m, v) in mean.iter_mut().zip(&row) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }

    // upper-left accumulation of X_c^T X_c, chunk by chunk
    let mut cov = vec![0.0; dim * dim];
    let mut chunk = vec![0.0; CHUNK_ROWS.min(n) * dim];
    let mut start = 0;
    while start < n {
        let rows = CHUNK_ROWS.min(n - start);
        for r in 0..rows {
            let dst = &mut chunk[r * dim..(r + 1) * dim];
            fill_row(start + r, dst);
            for (v, m) in dst.iter_mut().zip(&mean) {
                *v -= m;
            }
        }
        unsafe {
            // cov (dim x dim) += chunk^T (dim x rows) * chunk (rows x dim)
            matrixmultiply::dgemm(
                dim,
                rows,
                dim,
                1.0,
                chunk.as_ptr(),
                1,
                dim as isize,
                chunk.as_ptr(),
                dim as isize,
                1,
                1.0,
                cov.as_mut_ptr(),
                dim as isize,
                1,
            );
        }
        start += rows;
    }
    let scale = 1.0 / (n - 1) as f64;
    // symmetrize explicitly so the solver sees an exactly symmetric matrix
    let cov = DMatrix::from_fn(dim, dim, |i, j| 0.5 * (cov[i * dim + j] + cov[j * dim + i]) * scale);
    let total_variance = cov.trace();

    let eig = cov
        .clone()
        .try_symmetric_eigen(f64::EPSILON, EIGEN_MAX_ITER)
        .ok_or_else(|| {
            let off: f64 = (0..dim)
                .flat_map(|i| (0..dim).filter(move |&j| j != i).map(move |j| (i, j)))
                .map(|(i, j)| cov[(i, j)].powi(2))
                .sum::<f64>()
                .sqrt();
            Error::Numerical(format!(
                "symmetric eigensolver did not converge in {EIGEN_MAX_ITER} iterations \
                 (off-diagonal norm {off:.3e})"
            ))
        })?;

    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .total_cmp(&eig.eigenvalues[a])
            .then(a.cmp(&b))
    });

    let mut components = Vec::with_capacity(k);
    let mut explained_variance = Vec::with_capacity(k);
    for &idx in order.iter().take(k) {
        let mut v: Vec<f64> = eig.eigenvectors.column(idx).iter().copied().collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        for x in &mut v {
            *x /= norm;
        }
        apply_sign_convention(&mut v);
        components.push(v);
        explained_variance.push(eig.eigenvalues[idx].max(0.0));
    }

    Ok(PcaBasis {
        mean,
        components,
        explained_variance,
        total_variance,
    })
}

/// Make the largest-magnitude coordinate positive; ties go to the lowest
/// index.
pub fn apply_sign_convention(v: &mut [f64]) {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        for x in v.iter_mut() {
            *x = -*x;
        }
    }
}

/// Median with the even-count midpoint rule.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    Some(if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    })
}
