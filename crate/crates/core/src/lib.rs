pub mod cli;
pub mod corpus;
pub mod error;
pub mod eval;
mod linalg;
pub mod pca;
pub mod pipeline;
pub mod segment;
pub mod similarity;
pub mod synth;
pub mod vae;

pub use error::{Error, Result};
