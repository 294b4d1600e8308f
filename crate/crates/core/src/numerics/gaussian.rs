use ndarray::{Array1, Array2, ArrayView2, Zip};
use serde::{Deserialize, Serialize};

use super::NumericsError;

/// Diagonal Gaussian parameterized by mean and log standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagGaussian {
    pub mean: Vec<f64>,
    pub log_std: Vec<f64>,
}

impl DiagGaussian {
    pub fn new(mean: Vec<f64>, log_std: Vec<f64>) -> Result<Self, NumericsError> {
        if mean.len() != log_std.len() {
            return Err(NumericsError::ShapeMismatch {
                expected: vec![mean.len()],
                got: vec![log_std.len()],
            });
        }
        Ok(DiagGaussian { mean, log_std })
    }

    pub fn standard(dim: usize) -> Self {
        DiagGaussian {
            mean: vec![0.0; dim],
            log_std: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Reparameterized draw `mean + exp(log_std) ⊙ noise`.
    pub fn sample(&self, noise: &[f64]) -> Result<Vec<f64>, NumericsError> {
        if noise.len() != self.dim() {
            return Err(NumericsError::ShapeMismatch {
                expected: vec![self.dim()],
                got: vec![noise.len()],
            });
        }
        Ok(self
            .mean
            .iter()
            .zip(&self.log_std)
            .zip(noise)
            .map(|((m, s), e)| m + s.exp() * e)
            .collect())
    }

    /// `KL(self ‖ N(0, I))`.
    pub fn kl_to_standard_normal(&self) -> f64 {
        self.mean
            .iter()
            .zip(&self.log_std)
            .map(|(&m, &s)| kl_term(m, s))
            .sum()
    }
}

fn kl_term(mean: f64, log_std: f64) -> f64 {
    0.5 * (mean * mean + (2.0 * log_std).exp() - 1.0 - 2.0 * log_std)
}

/// Batched reparameterized sampling; rows are samples.
pub fn gaussian_sample(
    mean: ArrayView2<f64>,
    log_std: ArrayView2<f64>,
    noise: ArrayView2<f64>,
) -> Result<Array2<f64>, NumericsError> {
    if mean.dim() != log_std.dim() || mean.dim() != noise.dim() {
        return Err(NumericsError::ShapeMismatch {
            expected: vec![mean.nrows(), mean.ncols()],
            got: vec![noise.nrows(), noise.ncols()],
        });
    }
    let mut out = Array2::zeros(mean.raw_dim());
    Zip::from(&mut out)
        .and(mean)
        .and(log_std)
        .and(noise)
        .for_each(|o, &m, &s, &e| *o = m + s.exp() * e);
    Ok(out)
}

/// Per-row KL to the standard normal, with gradients `(∂/∂mean, ∂/∂log_std)`.
pub fn kl_rows_with_grad(
    mean: ArrayView2<f64>,
    log_std: ArrayView2<f64>,
) -> (Array1<f64>, Array2<f64>, Array2<f64>) {
    let kl = Zip::from(mean.rows())
        .and(log_std.rows())
        .map_collect(|m, s| m.iter().zip(s).map(|(&m, &s)| kl_term(m, s)).sum());
    let d_mean = mean.to_owned();
    let d_log_std = log_std.mapv(|s| (2.0 * s).exp() - 1.0);
    (kl, d_mean, d_log_std)
}

/// Splits a `[mean | log_std]` network output into its halves.
pub fn split_mean_log_std(out: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
    let d = out.ncols() / 2;
    (
        out.slice(ndarray::s![.., ..d]).to_owned(),
        out.slice(ndarray::s![.., d..]).to_owned(),
    )
}
