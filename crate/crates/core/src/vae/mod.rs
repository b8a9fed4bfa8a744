//! Fully connected beta-VAE over flattened object patches.

pub mod checkpoint;
pub mod model;
pub mod train;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint};
pub use model::{
    kl_divergence, reparameterize, Architecture, LatentCode, LayerShape, LossTerms, VaeModel,
    DEFAULT_BETA, DEFAULT_HIDDEN, DEFAULT_LATENT, LAYER_NAMES, LOGVAR_MAX, LOGVAR_MIN,
};
pub use train::{train, trace_csv, Adam, EpochLoss, TrainConfig};

/// Posterior means for every patch, in input order.
pub fn extract_latents(model: &VaeModel, patches: &[&[f32]]) -> crate::Result<Vec<Vec<f64>>> {
    model.encode_means(patches)
}
