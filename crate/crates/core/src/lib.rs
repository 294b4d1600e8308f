//! Residual policy learning for long-term engagement on a simulated
//! recommender: a conditional VAE reconstructs the logging policy, a residual
//! actor improves on its samples, and twin critics pick among candidates.

pub mod actor;
pub mod baselines;
pub mod critic;
pub mod cvae;
pub mod env;
mod error;
pub mod evaluator;
pub mod numerics;
pub mod policy;
pub mod regularizers;
pub mod trainer;

pub use error::{Error, Result};
