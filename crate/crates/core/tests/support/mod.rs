//! Independent reference implementations used as test oracles.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Sample covariance with the `n - 1` divisor, by direct summation.
pub fn covariance(rows: &[f64], n: usize, d: usize) -> Vec<f64> {
    let mut mean = vec![0.0; d];
    for r in rows.chunks_exact(d) {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut c = vec![0.0; d * d];
    for r in rows.chunks_exact(d) {
        for i in 0..d {
            for j in 0..d {
                c[i * d + j] += (r[i] - mean[i]) * (r[j] - mean[j]);
            }
        }
    }
    c.iter_mut().for_each(|v| *v /= (n - 1) as f64);
    c
}

/// Cyclic Jacobi eigen-decomposition of a symmetric `d x d` matrix.
/// Returns eigenvalues in descending order and matching unit eigenvectors,
/// each oriented so its largest-magnitude coordinate (lowest index on ties)
/// is positive.
pub fn jacobi_eigen(a: &[f64], d: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
    let mut a = a.to_vec();
    let mut v = vec![0.0; d * d];
    for i in 0..d {
        v[i * d + i] = 1.0;
    }
    for _sweep in 0..100 {
        let off: f64 = (0..d)
            .flat_map(|i| (0..d).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i * d + j].powi(2))
            .sum();
        let scale: f64 = a.iter().map(|x| x * x).sum();
        if off <= 1e-30 * scale.max(f64::MIN_POSITIVE) {
            break;
        }
        for p in 0..d {
            for q in p + 1..d {
                let apq = a[p * d + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q * d + q] - a[p * d + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..d {
                    let akp = a[k * d + p];
                    let akq = a[k * d + q];
                    a[k * d + p] = c * akp - s * akq;
                    a[k * d + q] = s * akp + c * akq;
                }
                for k in 0..d {
                    let apk = a[p * d + k];
                    let aqk = a[q * d + k];
                    a[p * d + k] = c * apk - s * aqk;
                    a[q * d + k] = s * apk + c * aqk;
                }
                for k in 0..d {
                    let vkp = v[k * d + p];
                    let vkq = v[k * d + q];
                    v[k * d + p] = c * vkp - s * vkq;
                    v[k * d + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| a[j * d + j].total_cmp(&a[i * d + i]));
    let values = order.iter().map(|&i| a[i * d + i]).collect();
    let vectors = order
        .iter()
        .map(|&i| {
            let mut col: Vec<f64> = (0..d).map(|k| v[k * d + i]).collect();
            orient(&mut col);
            col
        })
        .collect();
    (values, vectors)
}

pub fn orient(v: &mut [f64]) {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i].abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// Central difference `(f(x + h e_i) - f(x - h e_i)) / 2h` for each listed
/// coordinate.
pub fn central_differences(x: &[f64], coords: &[usize], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut buf = x.to_vec();
    coords
        .iter()
        .map(|&i| {
            let orig = buf[i];
            buf[i] = orig + h;
            let up = f(&buf);
            buf[i] = orig - h;
            let down = f(&buf);
            buf[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Direct-loop top-k precision over a ranked list of match flags.
pub fn brute_top_k(flags: &[bool], k: usize) -> f64 {
    let mut hits = 0usize;
    let mut i = 0;
    while i < k {
        if i < flags.len() && flags[i] {
            hits += 1;
        }
        i += 1;
    }
    hits as f64 / k as f64
}

pub fn brute_weighted(flags: &[bool], k: usize) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for rank in 1..=k {
        den += 1.0 / rank as f64;
        if rank <= flags.len() && flags[rank - 1] {
            num += 1.0 / rank as f64;
        }
    }
    num / den
}

/// Error rate with queries lacking any valid candidate excluded.
pub fn brute_error_rate(lists: &[Vec<bool>], k: usize) -> f64 {
    let mut num = 0usize;
    let mut den = 0usize;
    for l in lists {
        let mut any = false;
        for &f in l {
            any |= f;
        }
        if !any {
            continue;
        }
        den += 1;
        let mut top = false;
        for (i, &f) in l.iter().enumerate() {
            if i < k {
                top |= f;
            }
        }
        if !top {
            num += 1;
        }
    }
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Random flags with the given match probability.
pub fn random_flags(r: &mut ChaCha8Rng, len: usize, p: f64) -> Vec<bool> {
    (0..len).map(|_| r.random_bool(p)).collect()
}

pub fn gaussian_rows(r: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<f64> {
    use rand_distr::{Distribution, StandardNormal};
    // columns with distinct scales keep the spectrum well separated
    let scales: Vec<f64> = (0..d).map(|j| 1.0 + 0.5 * j as f64 + r.random::<f64>()).collect();
    let mix: Vec<f64> = (0..d * d).map(|_| StandardNormal.sample(&mut *r)).collect();
    let mut out = Vec::with_capacity(n * d);
    for _ in 0..n {
        let raw: Vec<f64> = (0..d)
            .map(|j| {
                let g: f64 = StandardNormal.sample(&mut *r);
                scales[j] * g + 0.1 * j as f64
            })
            .collect();
        for j in 0..d {
            // a fixed random rotation-like mix so the basis is not axis aligned
            let v: f64 = (0..d).map(|i| raw[i] * (if i == j { 1.0 } else { 0.2 * mix[i * d + j] })).sum();
            out.push(v);
        }
    }
    out
}
