//! Minibatch training with adaptive moment estimation.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::model::VaeModel;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            batch_size: 128,
            epochs: 50,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be finite and nonnegative, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("moment decay rates must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Mean loss terms over one epoch (evaluated before each update).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLoss {
    pub epoch: usize,
    pub total: f64,
    pub recon: f64,
    pub kl: f64,
    /// Smallest per-sample KL seen during the epoch.
    pub min_kl: f64,
}

pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
    lr: f64,
    b1: f64,
    b2: f64,
    eps: f64,
}

impl Adam {
    pub fn new(n: usize, cfg: &TrainConfig) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
            lr: cfg.learning_rate,
            b1: cfg.beta1,
            b2: cfg.beta2,
            eps: cfg.epsilon,
        }
    }

    pub fn update(&mut self, params: &mut [f64], grad: &[f64]) {
        self.step += 1;
        let c1 = 1.0 - self.b1.powi(self.step);
        let c2 = 1.0 - self.b2.powi(self.step);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grad)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = self.b1 * *m + (1.0 - self.b1) * g;
            *v = self.b2 * *v + (1.0 - self.b2) * g * g;
            *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
        }
    }
}

/// Train `model` on `samples` (each of the model's input length).
///
/// Sample order is reshuffled every epoch and reparameterization noise is
/// drawn from the same seeded stream, so a run is bit-reproducible.
/// `on_epoch` sees each epoch's mean losses and the updated model.
pub fn train(
    model: &mut VaeModel,
    samples: &[&[f32]],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLoss, &VaeModel),
) -> Result<Vec<EpochLoss>> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::arg("training needs at least one sample"));
    }
    let nz = model.latent_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(model.params().len(), cfg);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut trace = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let (mut total, mut recon, mut kl, mut min_kl) = (0.0, 0.0, 0.0, f64::INFINITY);
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&[f32]> = idx.iter().map(|&i| samples[i]).collect();
            let noise: Vec<f64> = (0..batch.len() * nz)
                .map(|_| StandardNormal.sample(&mut rng))
                .collect();
            let (terms, grad) = model.batch_loss_grad(&batch, &noise, true)?;
            let grad = grad.expect("gradient requested");
            for t in &terms {
                if !t.total.is_finite() {
                    return Err(Error::Numerical(format!(
                        "non-finite loss at epoch {epoch}, batch {b}"
                    )));
                }
                total += t.total;
                recon += t.recon;
                kl += t.kl;
                min_kl = min_kl.min(t.kl);
            }
            if grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Numerical(format!(
                    "non-finite gradient at epoch {epoch}, batch {b}"
                )));
            }
            adam.update(model.params_mut(), &grad);
        }
        let n = samples.len() as f64;
        let e = EpochLoss {
            epoch,
            total: total / n,
            recon: recon / n,
            kl: kl / n,
            min_kl,
        };
        on_epoch(&e, model);
        trace.push(e);
    }
    Ok(trace)
}

/// Loss trace as CSV: `epoch,total,recon,kl`.
pub fn trace_csv(trace: &[EpochLoss]) -> String {
    let mut out = String::from("epoch,total,recon,kl\n");
    for e in trace {
        let _ = writeln!(out, "{},{:.9},{:.9},{:.9}", e.epoch, e.total, e.recon, e.kl);
    }
    out
}
