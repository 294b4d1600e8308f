use serde::{Deserialize, Serialize};

use crate::regularizers::RewardHead;
use crate::{Error, Result};

/// Training hyper-parameters. `Default` is the full-size profile; [`TrainConfig::desk`]
/// is the small profile used for experiments on a single machine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub gamma: f64,
    pub tau: f64,
    pub n_estimators: usize,
    /// Residual actor and reward estimator.
    pub actor_lr: f64,
    pub critic_lr: f64,
    /// CVAE encoder and decoder.
    pub cvae_lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Overrides `epochs` when set.
    pub iterations: Option<usize>,
    pub w_exp: f64,
    pub w_con: f64,
    pub normalize_observations: bool,
    pub seed: u64,
    pub hidden: Vec<usize>,
    /// Defaults to the action dimension.
    pub latent_dim: Option<usize>,
    pub z_h_dim: usize,
    pub z_l_dim: usize,
    pub rho_max: f64,
    pub reward_head: RewardHead,
    /// Iterations between validation evaluations; 0 disables them.
    pub eval_interval: usize,
    /// Iterations between metric rows.
    pub log_interval: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            gamma: 0.9,
            tau: 1e-2,
            n_estimators: 20,
            actor_lr: 5e-6,
            critic_lr: 5e-5,
            cvae_lr: 5e-6,
            batch_size: 4096,
            epochs: 5,
            iterations: None,
            w_exp: 5e-2,
            w_con: 5e-1,
            normalize_observations: true,
            seed: 0,
            hidden: vec![256, 256, 256],
            latent_dim: None,
            z_h_dim: 16,
            z_l_dim: 16,
            rho_max: 0.5,
            reward_head: RewardHead::Gaussian,
            eval_interval: 250,
            log_interval: 10,
        }
    }
}

impl TrainConfig {
    pub fn desk() -> Self {
        TrainConfig {
            n_estimators: 5,
            actor_lr: 1e-4,
            critic_lr: 1e-3,
            cvae_lr: 1e-3,
            batch_size: 256,
            iterations: Some(5000),
            hidden: vec![64, 64],
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(0.0..1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1)");
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad("tau must lie in (0, 1]");
        }
        if !(self.actor_lr > 0.0 && self.critic_lr > 0.0 && self.cvae_lr > 0.0) {
            return bad("learning rates must be positive");
        }
        if self.n_estimators == 0 || self.batch_size == 0 {
            return bad("n_estimators and batch_size must be positive");
        }
        if self.iterations.is_none() && self.epochs == 0 {
            return bad("need epochs or an explicit iteration count");
        }
        if self.iterations == Some(0) {
            return bad("iterations must be positive");
        }
        if self.w_exp < 0.0 || self.w_con < 0.0 {
            return bad("regularizer weights must be non-negative");
        }
        if self.z_h_dim == 0 || self.z_l_dim == 0 || self.latent_dim == Some(0) {
            return bad("embedding sizes must be positive");
        }
        if !(self.rho_max > 0.0) {
            return bad("rho_max must be positive");
        }
        if self.log_interval == 0 {
            return bad("log_interval must be positive");
        }
        Ok(())
    }

    /// `epochs · ⌈transitions / batch⌉` unless overridden.
    pub fn total_iterations(&self, n_transitions: usize) -> usize {
        self.iterations
            .unwrap_or_else(|| self.epochs * n_transitions.div_ceil(self.batch_size).max(1))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        TrainConfig::default().validate().unwrap();
        TrainConfig::desk().validate().unwrap();
        assert_eq!(TrainConfig::default().total_iterations(8193), 15);
        assert_eq!(TrainConfig::desk().total_iterations(10), 5000);
    }

    #[test]
    fn rejects_bad_values() {
        for c in [
            TrainConfig { gamma: 1.0, ..TrainConfig::desk() },
            TrainConfig { tau: 0.0, ..TrainConfig::desk() },
            TrainConfig { critic_lr: 0.0, ..TrainConfig::desk() },
            TrainConfig { n_estimators: 0, ..TrainConfig::desk() },
        ] {
            assert!(c.validate().is_err());
        }
    }
}
