//! Synthetic sequential-recommendation environment.
//!
//! Users open sessions, receive one recommendation (an action vector) per
//! request, and either consume it or quit. Satisfaction with a request is
//! `sigmoid(κ·⟨action, preference⟩)`; it drives both continuation and the
//! time until the user returns. Logged data comes from a biased, noisy
//! online-serving policy.

mod behavior;
mod dataset;
mod reward;
mod rollout;
mod user;

pub use behavior::{behavior_action, behavior_mean, BehaviorNoise, BehaviorPolicy};
pub use dataset::{
    generate_dataset, shared_bias, DatasetStats, LoggedDataset, Population, Transition, UserLog,
    UserStats, STATS_FILE, TRANSITIONS_FILE,
};
pub use reward::{combined_reward, reward_return_time, reward_session_length, RewardMode};
pub use rollout::{rollout_policy, Policy, RandomPolicy, RolloutSummary};
pub use user::{return_time, sigmoid, Event, StepOutcome, UserProfile, UserSim, UserState};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("return time must be positive, got {0}")]
    NonPositiveReturnTime(f64),
    #[error("invalid environment config: {0}")]
    InvalidConfig(String),
    #[error("dataset: {0}")]
    Dataset(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Simulator constants. Everything is configurable; defaults give the
/// behavior policy mid-range rewards with room to improve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    pub n_users: usize,
    pub sessions_per_user: usize,
    pub action_dim: usize,
    /// Number of past per-request satisfactions kept in the request-level state.
    pub history_len: usize,
    /// Satisfaction sharpness κ.
    pub kappa: f64,
    /// Sensitivity β of return time to the engagement EMA.
    pub return_decay: f64,
    /// EMA decay ρ for all running statistics.
    pub ema_decay: f64,
    pub base_continue: f64,
    /// Reference return time in hours.
    pub delta_base: f64,
    /// Per-coordinate std σ_b of the behavior policy's exploration noise.
    pub behavior_noise: f64,
    /// AR(1) coefficient of the behavior noise within a session (1 = fixed per session).
    pub noise_persistence: f64,
    /// Norm of the behavior policy's systematic bias.
    pub bias_scale: f64,
    /// Seed of the shared behavior bias; fixed across train/test populations.
    pub behavior_seed: u64,
    pub max_session_len: usize,
    pub activity_min: f64,
    pub activity_max: f64,
    /// Half-width of the uniform multiplicative jitter on return time.
    pub return_jitter: f64,
    /// Std of the observation noise on the user's profile features.
    pub feature_noise: f64,
    pub reward_mode: RewardMode,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            n_users: 200,
            sessions_per_user: 30,
            action_dim: 8,
            history_len: 6,
            kappa: 5.0,
            return_decay: 3.0,
            ema_decay: 0.9,
            base_continue: 0.8,
            delta_base: 24.0,
            behavior_noise: 0.3,
            noise_persistence: 1.0,
            bias_scale: 1.5,
            behavior_seed: 2022,
            max_session_len: 50,
            activity_min: 0.3,
            activity_max: 1.0,
            return_jitter: 0.2,
            feature_noise: 0.05,
            reward_mode: RewardMode::Both,
        }
    }
}

impl EnvConfig {
    pub const SESSION_DIM: usize = 4;

    pub fn session_dim(&self) -> usize {
        Self::SESSION_DIM
    }

    /// position, satisfaction history, last-action summary, profile features.
    pub fn request_dim(&self) -> usize {
        1 + self.history_len + 1 + self.action_dim
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        let fail = |m: &str| Err(EnvError::InvalidConfig(m.to_string()));
        if self.n_users == 0 || self.sessions_per_user == 0 {
            return fail("need at least one user and one session");
        }
        if self.action_dim == 0 {
            return fail("action_dim must be positive");
        }
        if !(0.0..1.0).contains(&self.ema_decay) {
            return fail("ema_decay must lie in [0, 1)");
        }
        if !(self.base_continue > 0.0 && self.base_continue < 1.0) {
            return fail("base_continue must lie in (0, 1)");
        }
        if self.delta_base <= 0.0 || self.behavior_noise < 0.0 || self.bias_scale < 0.0 {
            return fail("delta_base must be positive; noise and bias non-negative");
        }
        if !(0.0..=1.0).contains(&self.noise_persistence) {
            return fail("noise_persistence must lie in [0, 1]");
        }
        if !(self.activity_min > 0.0 && self.activity_min <= self.activity_max && self.activity_max <= 1.0)
        {
            return fail("activity range must satisfy 0 < min <= max <= 1");
        }
        if !(0.0..1.0).contains(&self.return_jitter) {
            return fail("return_jitter must lie in [0, 1)");
        }
        if self.max_session_len == 0 {
            return fail("max_session_len must be positive");
        }
        Ok(())
    }
}

/// Per-user RNG stream: independent of how many users are generated and in
/// which order.
pub(crate) fn user_rng(seed: u64, user_id: u64) -> rand_chacha::ChaCha8Rng {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(user_id);
    rng
}
