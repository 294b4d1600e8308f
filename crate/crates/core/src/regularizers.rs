//! Expressiveness and conciseness losses on the session-level embedding.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::numerics::{kl_rows_with_grad, Activation, Mlp, MlpGrads, NumericsError};

/// Number of reward levels seen by the categorical head.
pub const REWARD_LEVELS: usize = 6;

/// Family of the variational reward model `o(r | z_h)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardHead {
    /// Unit-variance Gaussian: cross-entropy reduces to half squared error.
    #[default]
    Gaussian,
    /// Softmax over the integer rewards `0..=5`.
    Categorical,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RewardEstimator {
    pub o: Mlp,
    pub head: RewardHead,
}

#[derive(Debug, Clone)]
pub struct ExpressivenessOutput {
    pub loss: f64,
    pub estimator_grads: MlpGrads,
    pub d_z_h: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct ConcisenessOutput {
    pub loss: f64,
    pub d_mu: Array2<f64>,
    pub d_log_sigma: Array2<f64>,
}

impl RewardEstimator {
    pub fn new<R: Rng + ?Sized>(z_h_dim: usize, hidden: &[usize], head: RewardHead, rng: &mut R) -> Self {
        let mut sizes = vec![z_h_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(match head {
            RewardHead::Gaussian => 1,
            RewardHead::Categorical => REWARD_LEVELS,
        });
        RewardEstimator {
            o: Mlp::new(&sizes, Activation::Tanh, Activation::Identity, rng),
            head,
        }
    }

    /// Predicted mean reward per row.
    pub fn predict(&self, z_h: ArrayView2<f64>) -> Result<Array1<f64>, NumericsError> {
        let out = self.o.predict(z_h)?;
        Ok(match self.head {
            RewardHead::Gaussian => out.column(0).to_owned(),
            RewardHead::Categorical => softmax_rows(&out)
                .rows()
                .into_iter()
                .map(|p| p.iter().enumerate().map(|(k, v)| k as f64 * v).sum())
                .collect(),
        })
    }
}

fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut p = logits.clone();
    for mut row in p.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let z = row.sum();
        row /= z;
    }
    p
}

/// Cross-entropy between the observed rewards and `o(r | z_h)`, averaged
/// over the batch, with gradients for `o` and for `z_h`.
pub fn expressiveness_loss(
    estimator: &RewardEstimator,
    z_h: ArrayView2<f64>,
    rewards: ArrayView1<f64>,
) -> Result<ExpressivenessOutput, NumericsError> {
    let b = z_h.nrows();
    if b == 0 || rewards.len() != b {
        return Err(NumericsError::InvalidArgument(format!(
            "expressiveness loss needs a non-empty batch with one reward per row ({b} rows, {} rewards)",
            rewards.len()
        )));
    }
    let bf = b as f64;
    let cache = estimator.o.forward(z_h)?;
    let (loss, upstream) = match estimator.head {
        RewardHead::Gaussian => {
            let err = &cache.output().column(0) - &rewards;
            let loss = 0.5 * err.mapv(|v| v * v).sum() / bf;
            (loss, (err / bf).insert_axis(Axis(1)))
        }
        RewardHead::Categorical => {
            let p = softmax_rows(cache.output());
            let mut up = p.clone();
            let mut loss = 0.0;
            for (i, &r) in rewards.iter().enumerate() {
                let k = r.round();
                if (r - k).abs() > 1e-9 || !(0.0..REWARD_LEVELS as f64).contains(&k) {
                    return Err(NumericsError::InvalidArgument(format!(
                        "categorical reward head needs integer rewards in 0..={}, got {r}",
                        REWARD_LEVELS - 1
                    )));
                }
                let k = k as usize;
                loss -= p[[i, k]].max(f64::MIN_POSITIVE).ln();
                up[[i, k]] -= 1.0;
            }
            (loss / bf, up / bf)
        }
    };
    let (estimator_grads, d_z_h) = estimator.o.backward(&cache, upstream.view())?;
    Ok(ExpressivenessOutput {
        loss,
        estimator_grads,
        d_z_h,
    })
}

/// Batch mean of `KL(N(μ_h, σ_h) ‖ N(0, I))`.
pub fn conciseness_loss(mu: ArrayView2<f64>, log_sigma: ArrayView2<f64>) -> Result<ConcisenessOutput, NumericsError> {
    if mu.dim() != log_sigma.dim() || mu.nrows() == 0 {
        return Err(NumericsError::ShapeMismatch {
            expected: vec![mu.nrows(), mu.ncols()],
            got: vec![log_sigma.nrows(), log_sigma.ncols()],
        });
    }
    let bf = mu.nrows() as f64;
    let (kl, d_mu, d_ls) = kl_rows_with_grad(mu, log_sigma);
    Ok(ConcisenessOutput {
        loss: kl.sum() / bf,
        d_mu: d_mu / bf,
        d_log_sigma: d_ls / bf,
    })
}
