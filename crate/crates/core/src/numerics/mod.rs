//! Dense-network engine: forward/backward passes, Adam, diagonal Gaussians,
//! a finite-difference gradient oracle, and the checkpoint file format.

mod adam;
mod checkpoint;
mod gaussian;
mod gradcheck;
mod mlp;

pub use adam::{adam_step, AdamState};
pub use checkpoint::{NetworkEntry, OptimizerEntry, TensorEntry, TensorStore};
pub use gaussian::{gaussian_sample, kl_rows_with_grad, split_mean_log_std, DiagGaussian};
pub use gradcheck::{finite_diff_check, max_relative_error, numeric_gradient, numeric_gradient_4th};
pub use mlp::{soft_update, Activation, Dense, Mlp, MlpCache, MlpGrads};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NumericsError {
    #[error("dimension mismatch at layer {layer}: expected {expected}, got {got}")]
    DimensionMismatch {
        layer: usize,
        expected: usize,
        got: usize,
    },
    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("network has no layers")]
    EmptyNetwork,
    #[error("cache does not belong to this network")]
    CacheMismatch,
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
