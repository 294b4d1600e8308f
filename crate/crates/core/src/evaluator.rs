//! Off-policy value estimates from logged trajectories.

use std::ops::Range;

use ndarray::{Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{behavior_mean, LoggedDataset, Population};
use crate::policy::ActionModel;
use crate::trainer::state_matrix;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// Cap `c` on each importance ratio.
    pub clip_c: f64,
    /// Shared std of the Gaussian action densities around each policy's mean.
    pub proxy_std: f64,
    /// Discount used by rollout cross-checks.
    pub gamma: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            clip_c: 10.0,
            proxy_std: 0.2,
            gamma: 0.9,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.clip_c > 0.0 && self.proxy_std > 0.0) {
            return Err(Error::Config("clip_c and proxy_std must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NcisReport {
    pub ncis: f64,
    /// Kish effective sample size of all capped weights.
    pub ess: f64,
    pub clip_fraction: f64,
    pub n_trajectories: usize,
    /// Trajectories whose weights all underflowed.
    pub skipped: usize,
    pub config: EvalConfig,
}

/// Mean over trajectories of `Σ ρ̃·r / Σ ρ̃`, with
/// `ρ̃ = min(c, φ_π(a) / φ_β(a))` and both densities Gaussian with std `σ`.
pub fn ncis_value(
    trajectories: &[Range<usize>],
    rewards: &[f64],
    logged: ArrayView2<f64>,
    eval_means: ArrayView2<f64>,
    behavior_means: ArrayView2<f64>,
    config: &EvalConfig,
) -> Result<NcisReport> {
    config.validate()?;
    let n = rewards.len();
    if logged.nrows() != n || eval_means.dim() != logged.dim() || behavior_means.dim() != logged.dim() {
        return Err(Error::Config("ncis inputs must have one row per logged transition".into()));
    }
    let inv_two_var = 1.0 / (2.0 * config.proxy_std * config.proxy_std);
    let log_cap = config.clip_c.ln();
    let mut total = 0.0;
    let mut used = 0usize;
    let mut skipped = 0usize;
    let mut clipped = 0usize;
    let mut steps = 0usize;
    let (mut w_sum, mut w_sq) = (0.0, 0.0);
    for range in trajectories {
        if range.is_empty() {
            return Err(Error::Config("empty trajectory".into()));
        }
        let (mut num, mut den) = (0.0, 0.0);
        for i in range.clone() {
            let (mut d_eval, mut d_beh) = (0.0, 0.0);
            for j in 0..logged.ncols() {
                let a = logged[[i, j]];
                d_eval += (a - eval_means[[i, j]]).powi(2);
                d_beh += (a - behavior_means[[i, j]]).powi(2);
            }
            let log_ratio = (d_beh - d_eval) * inv_two_var;
            if log_ratio > log_cap {
                clipped += 1;
            }
            let w = log_ratio.min(log_cap).exp();
            num += w * rewards[i];
            den += w;
            w_sum += w;
            w_sq += w * w;
            steps += 1;
        }
        if den > 0.0 {
            total += num / den;
            used += 1;
        } else {
            skipped += 1;
        }
    }
    Ok(NcisReport {
        ncis: if used > 0 { total / used as f64 } else { f64::NAN },
        ess: if w_sq > 0.0 { w_sum * w_sum / w_sq } else { 0.0 },
        clip_fraction: clipped as f64 / steps.max(1) as f64,
        n_trajectories: trajectories.len(),
        skipped,
        config: *config,
    })
}

/// Noise-free logging-policy action for every transition, from the
/// simulator's own users.
pub fn exact_behavior_means(ds: &LoggedDataset) -> Array2<f64> {
    let pop = Population::from_dataset(ds);
    let mut out = Array2::zeros((ds.len(), ds.stats.config.action_dim));
    for (profile, range) in pop.profiles.iter().zip(ds.user_ranges()) {
        let m = ndarray::Array1::from(behavior_mean(profile));
        for i in range.clone() {
            out.row_mut(i).assign(&m);
        }
    }
    out
}

/// Where the behavior-policy means come from.
pub enum BehaviorProxy<'a> {
    /// The simulator's exact logging policy.
    Exact,
    /// A learned model of it, usually a CVAE decoded at the prior mode.
    Model(&'a dyn ActionModel),
}

impl BehaviorProxy<'_> {
    pub fn means(&self, ds: &LoggedDataset) -> Result<Array2<f64>> {
        match self {
            BehaviorProxy::Exact => Ok(exact_behavior_means(ds)),
            BehaviorProxy::Model(m) => {
                let mut rng = ChaCha8Rng::seed_from_u64(0);
                m.act_batch(state_matrix(ds).view(), &mut rng)
            }
        }
    }

    pub fn label(&self) -> String {
        match self {
            BehaviorProxy::Exact => "exact".into(),
            BehaviorProxy::Model(m) => format!("model:{}", m.name()),
        }
    }
}

/// Runs `model` on every logged state and scores it with NCIS.
pub fn evaluate_model(
    model: &dyn ActionModel,
    ds: &LoggedDataset,
    behavior_means: ArrayView2<f64>,
    config: &EvalConfig,
    seed: u64,
) -> Result<NcisReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let states = state_matrix(ds);
    let eval_means = model.act_batch(states.view(), &mut rng)?;
    let logged = crate::trainer::action_matrix(ds);
    let rewards: Vec<f64> = ds.transitions.iter().map(|t| t.r).collect();
    ncis_value(
        ds.user_ranges(),
        &rewards,
        logged.view(),
        eval_means.view(),
        behavior_means,
        config,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn hand_case() {
        // raw ratios (5, 0.5) built from log-density gaps with σ = 1
        let sigma = 1.0f64;
        let cfg = EvalConfig {
            clip_c: 1.0,
            proxy_std: sigma,
            gamma: 0.9,
        };
        // with a = 0, ratio = exp((b² − e²)/2) for means e (eval) and b (behavior)
        let logged = array![[0.0], [0.0]];
        let eval = array![[0.0], [(2.0 * 2f64.ln()).sqrt()]];
        let beh = array![[(2.0 * 5f64.ln()).sqrt()], [0.0]];
        let r = ncis_value(&[0..2], &[1.0, 2.0], logged.view(), eval.view(), beh.view(), &cfg).unwrap();
        assert!((r.ncis - 4.0 / 3.0).abs() < 1e-9, "{}", r.ncis);
        assert_eq!(r.clip_fraction, 0.5);
    }

    #[test]
    fn identical_policies_give_plain_means() {
        let cfg = EvalConfig::default();
        let logged = array![[0.1, 0.2], [0.3, -0.2], [0.5, 0.5]];
        let means = array![[0.0, 0.1], [0.2, 0.2], [-0.5, 0.4]];
        let r = ncis_value(&[0..2, 2..3], &[1.0, 3.0, 4.0], logged.view(), means.view(), means.view(), &cfg).unwrap();
        assert!((r.ncis - (2.0 + 4.0) / 2.0).abs() < 1e-12);
        assert_eq!(r.clip_fraction, 0.0);
    }

    #[test]
    fn underflowing_trajectories_are_skipped() {
        let cfg = EvalConfig {
            clip_c: 10.0,
            proxy_std: 0.01,
            gamma: 0.9,
        };
        let logged = array![[0.0], [0.0]];
        let eval = array![[0.0], [1.0]];
        let beh = array![[0.0], [0.0]];
        let r = ncis_value(&[0..1, 1..2], &[2.0, 5.0], logged.view(), eval.view(), beh.view(), &cfg).unwrap();
        assert_eq!(r.skipped, 1);
        assert_eq!(r.ncis, 2.0);
    }
}
