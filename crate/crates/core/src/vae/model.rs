//! Fully connected beta-VAE with hand-written forward and backward passes.
//!
//! Encoder: `input -> h1 (relu) -> h2 (relu) -> {mu, logvar}` (linear heads,
//! logvar clamped to [-10, 10]). Decoder mirrors it:
//! `n_z -> h2 (relu) -> h1 (relu) -> input (sigmoid)`.
//!
//! Per-sample loss is `sum((x_hat - x)^2) + beta * KL(q(z|x) || N(0, I))`
//! with `z = mu + exp(logvar / 2) * noise`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};

use crate::linalg::{gemm, Op};
use crate::corpus::patch::PATCH_LEN;
use crate::error::{Error, Result};

pub const LOGVAR_MIN: f64 = -10.0;
pub const LOGVAR_MAX: f64 = 10.0;
pub const DEFAULT_LATENT: usize = 32;
pub const DEFAULT_BETA: f64 = 1e-4;
pub const DEFAULT_HIDDEN: [usize; 2] = [512, 128];

/// Layer order inside the flat parameter vector.
pub const LAYER_NAMES: [&str; 7] = ["enc1", "enc2", "mu", "logvar", "dec1", "dec2", "dec3"];
const ENC1: usize = 0;
const ENC2: usize = 1;
const MU: usize = 2;
const LOGVAR: usize = 3;
const DEC1: usize = 4;
const DEC2: usize = 5;
const DEC3: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerShape {
    pub input: usize,
    pub output: usize,
}

impl LayerShape {
    /// Weights (`output x input`, row-major) followed by `output` biases.
    pub fn param_count(&self) -> usize {
        self.output * (self.input + 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Architecture {
    pub input: usize,
    pub hidden: [usize; 2],
    pub latent: usize,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            input: PATCH_LEN,
            hidden: DEFAULT_HIDDEN,
            latent: DEFAULT_LATENT,
        }
    }
}

impl Architecture {
    pub fn layers(&self) -> [LayerShape; 7] {
        let [h1, h2] = self.hidden;
        let l = |input, output| LayerShape { input, output };
        [
            l(self.input, h1),
            l(h1, h2),
            l(h2, self.latent),
            l(h2, self.latent),
            l(self.latent, h2),
            l(h2, h1),
            l(h1, self.input),
        ]
    }

    /// Recover the architecture from a layer table, checking that the
    /// table is internally consistent.
    pub fn from_layers(layers: &[LayerShape]) -> Result<Self> {
        if layers.len() != 7 {
            return Err(Error::arg(format!("expected 7 layers, got {}", layers.len())));
        }
        let arch = Architecture {
            input: layers[ENC1].input,
            hidden: [layers[ENC1].output, layers[ENC2].output],
            latent: layers[MU].output,
        };
        arch.validate()?;
        if arch.layers() != layers {
            return Err(Error::arg("layer table is inconsistent"));
        }
        Ok(arch)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input == 0 || self.hidden.contains(&0) || self.latent == 0 {
            return Err(Error::arg("all layer widths must be positive"));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.layers().iter().map(LayerShape::param_count).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VaeModel {
    arch: Architecture,
    pub beta: f64,
    params: Vec<f64>,
    offsets: [usize; 7],
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentCode {
    pub mu: Vec<f64>,
    pub logvar: Vec<f64>,
    pub sample: Option<Vec<f64>>,
}

/// Per-sample loss terms.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossTerms {
    pub total: f64,
    pub recon: f64,
    pub kl: f64,
}

fn offsets(arch: &Architecture) -> [usize; 7] {
    let mut out = [0; 7];
    let mut acc = 0;
    for (o, l) in out.iter_mut().zip(arch.layers()) {
        *o = acc;
        acc += l.param_count();
    }
    out
}

impl VaeModel {
    /// Glorot-uniform weights, zero biases.
    pub fn new(arch: Architecture, beta: f64, seed: u64) -> Result<Self> {
        let mut model = Self::zeros(arch, beta)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (i, l) in arch.layers().iter().enumerate() {
            let bound = (6.0 / (l.input + l.output) as f64).sqrt();
            let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
            let start = model.offsets[i];
            for w in &mut model.params[start..start + l.input * l.output] {
                *w = dist.sample(&mut rng);
            }
        }
        Ok(model)
    }

    pub fn zeros(arch: Architecture, beta: f64) -> Result<Self> {
        arch.validate()?;
        if !(beta >= 0.0 && beta.is_finite()) {
            return Err(Error::arg(format!("beta must be finite and >= 0, got {beta}")));
        }
        Ok(Self {
            arch,
            beta,
            params: vec![0.0; arch.param_count()],
            offsets: offsets(&arch),
        })
    }

    pub fn from_params(arch: Architecture, beta: f64, params: Vec<f64>) -> Result<Self> {
        let mut m = Self::zeros(arch, beta)?;
        if params.len() != m.params.len() {
            return Err(Error::arg(format!(
                "expected {} parameters, got {}",
                m.params.len(),
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::arg("parameters must be finite"));
        }
        m.params = params;
        Ok(m)
    }

    pub fn arch(&self) -> Architecture {
        self.arch
    }

    pub fn latent_dim(&self) -> usize {
        self.arch.latent
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// `(weights, bias)` slices of layer `i`.
    pub fn layer(&self, i: usize) -> (&[f64], &[f64]) {
        let l = self.arch.layers()[i];
        let s = self.offsets[i];
        let w_end = s + l.input * l.output;
        (&self.params[s..w_end], &self.params[w_end..w_end + l.output])
    }

    /// Parameter range `(weights, bias)` of layer `i` within the flat vector.
    pub fn layer_ranges(&self, i: usize) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        let l = self.arch.layers()[i];
        let s = self.offsets[i];
        let w_end = s + l.input * l.output;
        (s..w_end, w_end..w_end + l.output)
    }

    fn check_input(&self, x: &[f32]) -> Result<()> {
        if x.len() != self.arch.input {
            return Err(Error::arg(format!(
                "input has {} values, model expects {}",
                x.len(),
                self.arch.input
            )));
        }
        Ok(())
    }

    /// `out = act(x W^T + b)` for a batch of `rows` inputs.
    fn dense(&self, layer: usize, x: &[f64], rows: usize, out: &mut Vec<f64>) {
        let l = self.arch.layers()[layer];
        let (w, b) = self.layer(layer);
        out.clear();
        out.extend(std::iter::repeat_n(b, rows).flatten());
        gemm(rows, l.input, l.output, 1.0, x, Op::N, w, Op::T, 1.0, out);
    }

    /// Encoder forward pass for a batch; fills `cache` with the
    /// intermediate activations needed by backward.
    fn encode_batch(&self, x: &[f64], rows: usize, cache: &mut Cache) {
        self.dense(ENC1, x, rows, &mut cache.e1);
        relu(&mut cache.e1);
        self.dense(ENC2, &cache.e1, rows, &mut cache.e2);
        relu(&mut cache.e2);
        self.dense(MU, &cache.e2, rows, &mut cache.mu);
        self.dense(LOGVAR, &cache.e2, rows, &mut cache.logvar_raw);
        cache.logvar.clear();
        cache
            .logvar
            .extend(cache.logvar_raw.iter().map(|v| v.clamp(LOGVAR_MIN, LOGVAR_MAX)));
    }

    fn decode_batch(&self, z: &[f64], rows: usize, cache: &mut Cache) {
        self.dense(DEC1, z, rows, &mut cache.d1);
        relu(&mut cache.d1);
        self.dense(DEC2, &cache.d1, rows, &mut cache.d2);
        relu(&mut cache.d2);
        self.dense(DEC3, &cache.d2, rows, &mut cache.out);
        for v in &mut cache.out {
            *v = sigmoid(*v);
        }
    }

    pub fn encode(&self, x: &[f32]) -> Result<LatentCode> {
        self.check_input(x)?;
        let xd: Vec<f64> = x.iter().map(|&v| v as f64).collect();
        let mut cache = Cache::default();
        self.encode_batch(&xd, 1, &mut cache);
        Ok(LatentCode {
            mu: cache.mu,
            logvar: cache.logvar,
            sample: None,
        })
    }

    pub fn decode(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.arch.latent || z.iter().any(|v| !v.is_finite()) {
            return Err(Error::arg("latent must be finite with the model's latent size"));
        }
        let mut cache = Cache::default();
        self.decode_batch(z, 1, &mut cache);
        Ok(cache.out)
    }

    /// Posterior means for many inputs, encoded in chunks.
    pub fn encode_means(&self, inputs: &[&[f32]]) -> Result<Vec<Vec<f64>>> {
        const CHUNK: usize = 256;
        let mut out = Vec::with_capacity(inputs.len());
        let mut cache = Cache::default();
        for chunk in inputs.chunks(CHUNK) {
            let mut xd = Vec::with_capacity(chunk.len() * self.arch.input);
            for x in chunk {
                self.check_input(x)?;
                xd.extend(x.iter().map(|&v| v as f64));
            }
            self.encode_batch(&xd, chunk.len(), &mut cache);
            out.extend(cache.mu.chunks(self.arch.latent).map(<[f64]>::to_vec));
        }
        Ok(out)
    }

    /// Loss of a single input under fixed reparameterization noise.
    pub fn loss(&self, x: &[f32], noise: &[f64]) -> Result<LossTerms> {
        let (terms, _) = self.batch_loss_grad(&[x], noise, false)?;
        Ok(terms[0])
    }

    /// Exact gradient of the single-sample total loss.
    pub fn backward(&self, x: &[f32], noise: &[f64]) -> Result<Vec<f64>> {
        let (_, grad) = self.batch_loss_grad(&[x], noise, true)?;
        Ok(grad.expect("gradient requested"))
    }

    /// Per-sample losses and, if requested, the gradient of the mean total
    /// loss over the batch. `noise` holds `batch.len() * n_z` values.
    pub fn batch_loss_grad(
        &self,
        batch: &[&[f32]],
        noise: &[f64],
        want_grad: bool,
    ) -> Result<(Vec<LossTerms>, Option<Vec<f64>>)> {
        let rows = batch.len();
        let nz = self.arch.latent;
        let input = self.arch.input;
        if rows == 0 {
            return Err(Error::arg("empty batch"));
        }
        if noise.len() != rows * nz {
            return Err(Error::arg(format!(
                "noise has {} values, expected {}",
                noise.len(),
                rows * nz
            )));
        }
        let mut x = Vec::with_capacity(rows * input);
        for s in batch {
            self.check_input(s)?;
            x.extend(s.iter().map(|&v| v as f64));
        }

        let mut c = Cache::default();
        self.encode_batch(&x, rows, &mut c);
        let std: Vec<f64> = c.logvar.iter().map(|lv| (0.5 * lv).exp()).collect();
        let z: Vec<f64> = c
            .mu
            .iter()
            .zip(&std)
            .zip(noise)
            .map(|((m, s), e)| m + s * e)
            .collect();
        self.decode_batch(&z, rows, &mut c);

        let terms: Vec<LossTerms> = (0..rows)
            .map(|r| {
                let recon: f64 = c.out[r * input..(r + 1) * input]
                    .iter()
                    .zip(&x[r * input..(r + 1) * input])
                    .map(|(o, t)| (o - t) * (o - t))
                    .sum();
                let kl = kl_terms(&c.mu[r * nz..(r + 1) * nz], &c.logvar[r * nz..(r + 1) * nz]);
                LossTerms {
                    total: recon + self.beta * kl,
                    recon,
                    kl,
                }
            })
            .collect();
        if !want_grad {
            return Ok((terms, None));
        }

        let layers = self.arch.layers();
        let mut grad = vec![0.0; self.params.len()];
        let scale = 1.0 / rows as f64;

        // decoder output: d/dpre of sum (sigmoid(pre) - x)^2
        let mut delta: Vec<f64> = c
            .out
            .iter()
            .zip(&x)
            .map(|(o, t)| 2.0 * (o - t) * o * (1.0 - o) * scale)
            .collect();
        self.accumulate(DEC3, &delta, &c.d2, rows, &mut grad);
        let mut back = self.propagate(DEC3, &delta, rows);
        relu_mask(&mut back, &c.d2);
        delta = back;
        self.accumulate(DEC2, &delta, &c.d1, rows, &mut grad);
        let mut back = self.propagate(DEC2, &delta, rows);
        relu_mask(&mut back, &c.d1);
        delta = back;
        self.accumulate(DEC1, &delta, &z, rows, &mut grad);
        let dz = self.propagate(DEC1, &delta, rows);

        // reparameterization and KL
        let beta = self.beta;
        let d_mu: Vec<f64> = dz
            .iter()
            .zip(&c.mu)
            .map(|(g, m)| g + beta * m * scale)
            .collect();
        let d_logvar: Vec<f64> = (0..rows * nz)
            .map(|i| {
                let raw = c.logvar_raw[i];
                if raw <= LOGVAR_MIN || raw >= LOGVAR_MAX {
                    return 0.0;
                }
                let lv = c.logvar[i];
                dz[i] * noise[i] * 0.5 * std[i] + beta * 0.5 * (lv.exp() - 1.0) * scale
            })
            .collect();
        self.accumulate(MU, &d_mu, &c.e2, rows, &mut grad);
        self.accumulate(LOGVAR, &d_logvar, &c.e2, rows, &mut grad);
        let mut back = self.propagate(MU, &d_mu, rows);
        let lv_back = self.propagate(LOGVAR, &d_logvar, rows);
        for (b, l) in back.iter_mut().zip(&lv_back) {
            *b += l;
        }
        relu_mask(&mut back, &c.e2);
        self.accumulate(ENC2, &back, &c.e1, rows, &mut grad);
        let mut back = self.propagate(ENC2, &back, rows);
        relu_mask(&mut back, &c.e1);
        self.accumulate(ENC1, &back, &x, rows, &mut grad);
        debug_assert_eq!(layers.len(), 7);
        Ok((terms, Some(grad)))
    }

    /// `dW += delta^T input`, `db += column sums of delta`.
    fn accumulate(&self, layer: usize, delta: &[f64], input: &[f64], rows: usize, grad: &mut [f64]) {
        let l = self.arch.layers()[layer];
        let (wr, br) = self.layer_ranges(layer);
        gemm(l.output, rows, l.input, 1.0, delta, Op::T, input, Op::N, 1.0, &mut grad[wr]);
        let gb = &mut grad[br];
        for row in delta.chunks(l.output) {
            for (g, d) in gb.iter_mut().zip(row) {
                *g += d;
            }
        }
    }

    /// `delta W`: gradient with respect to the layer input.
    fn propagate(&self, layer: usize, delta: &[f64], rows: usize) -> Vec<f64> {
        let l = self.arch.layers()[layer];
        let (w, _) = self.layer(layer);
        let mut out = vec![0.0; rows * l.input];
        gemm(rows, l.output, l.input, 1.0, delta, Op::N, w, Op::N, 0.0, &mut out);
        out
    }
}

#[derive(Default)]
struct Cache {
    e1: Vec<f64>,
    e2: Vec<f64>,
    mu: Vec<f64>,
    logvar_raw: Vec<f64>,
    logvar: Vec<f64>,
    d1: Vec<f64>,
    d2: Vec<f64>,
    out: Vec<f64>,
}

fn relu(v: &mut [f64]) {
    for x in v {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
}

/// Zero gradient entries whose activation was clipped by the relu.
fn relu_mask(grad: &mut [f64], activation: &[f64]) {
    for (g, a) in grad.iter_mut().zip(activation) {
        if *a <= 0.0 {
            *g = 0.0;
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `z = mu + exp(logvar / 2) * noise`.
pub fn reparameterize(code: &LatentCode, noise: &[f64]) -> Result<Vec<f64>> {
    if noise.len() != code.mu.len() {
        return Err(Error::arg("noise length must equal the latent size"));
    }
    Ok(code
        .mu
        .iter()
        .zip(&code.logvar)
        .zip(noise)
        .map(|((m, lv), e)| m + (0.5 * lv).exp() * e)
        .collect())
}

fn kl_terms(mu: &[f64], logvar: &[f64]) -> f64 {
    // -1/2 sum(1 + lv - mu^2 - e^lv), written as a sum of nonnegative terms
    mu.iter()
        .zip(logvar)
        .map(|(m, lv)| 0.5 * (m * m + (lv.exp_m1() - lv).max(0.0)))
        .sum()
}

/// KL divergence of `N(mu, exp(logvar))` from the standard normal prior.
pub fn kl_divergence(code: &LatentCode) -> f64 {
    kl_terms(&code.mu, &code.logvar)
}
