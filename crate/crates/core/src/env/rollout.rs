use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::{
    reward_return_time, reward_session_length, user_rng, Event, Population, RewardMode, UserProfile,
    UserSim, UserState,
};

/// Anything that can serve recommendations in the simulator.
///
/// `profile` is passed so the logging policy can be replayed; learned
/// policies must only look at `state`.
pub trait Policy {
    fn begin_session(&mut self, _rng: &mut dyn RngCore) {}
    fn act(&mut self, profile: &UserProfile, state: &UserState, rng: &mut dyn RngCore) -> Vec<f64>;
}

/// Uniform actions in `[-1, 1]^d`.
#[derive(Debug, Clone, Copy)]
pub struct RandomPolicy {
    pub action_dim: usize,
}

impl Policy for RandomPolicy {
    fn act(&mut self, _profile: &UserProfile, _state: &UserState, rng: &mut dyn RngCore) -> Vec<f64> {
        (0..self.action_dim).map(|_| rng.gen_range(-1.0..=1.0)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutSummary {
    /// Mean over sessions of the discounted return from the session's first request.
    pub mean_return: f64,
    /// Mean over users of (total reward / total requests).
    pub mean_trajectory_reward: f64,
    pub mean_session_reward: f64,
    pub mean_return_time: f64,
    pub mean_session_length: f64,
    pub mean_satisfaction: f64,
    pub n_users: usize,
    pub n_sessions: usize,
    pub n_steps: usize,
    pub clamped_steps: usize,
}

/// Runs `policy` on every user of `population` for `sessions_per_user`
/// sessions. Rewards follow the logged-data convention, including a zero
/// return-time reward for each user's final session.
pub fn rollout_policy(
    policy: &mut dyn Policy,
    population: &Population,
    sessions_per_user: usize,
    gamma: f64,
    mode: RewardMode,
    seed: u64,
) -> RolloutSummary {
    let cfg = &population.config;
    let mut total_return = 0.0;
    let mut total_session_reward = 0.0;
    let mut total_return_time = 0.0;
    let mut total_length = 0usize;
    let mut total_satisfaction = 0.0;
    let mut trajectory_sum = 0.0;
    let mut clamped_steps = 0usize;
    let mut n_sessions = 0usize;

    for profile in &population.profiles {
        let mut rng = user_rng(seed, profile.user_id);
        let mut sim = UserSim::new(profile.clone(), cfg);
        let mut user_reward = 0.0;
        let mut user_steps = 0usize;
        for session in 0..sessions_per_user {
            policy.begin_session(&mut rng);
            loop {
                let state = sim.state();
                let action = policy.act(profile, &state, &mut rng);
                let out = sim.step(&action, &mut rng);
                total_satisfaction += out.satisfaction;
                clamped_steps += out.clamped as usize;
                user_steps += 1;
                if out.event == Event::SessionEnd {
                    let delta = out.return_time.expect("session end carries a return time");
                    let eta = out.session_length.expect("session end carries a length");
                    let r_delta = if session + 1 < sessions_per_user {
                        reward_return_time(delta, profile.delta_avg, population.delta_p75)
                            .expect("simulated return times are positive")
                    } else {
                        0
                    };
                    let r = mode.reward(r_delta, reward_session_length(eta, profile.eta_avg));
                    total_return += gamma.powi(eta as i32 - 1) * r;
                    total_session_reward += r;
                    total_return_time += delta;
                    total_length += eta;
                    user_reward += r;
                    n_sessions += 1;
                    break;
                }
            }
        }
        trajectory_sum += user_reward / user_steps as f64;
    }

    let n_users = population.profiles.len();
    let ns = n_sessions.max(1) as f64;
    RolloutSummary {
        mean_return: total_return / ns,
        mean_trajectory_reward: trajectory_sum / n_users.max(1) as f64,
        mean_session_reward: total_session_reward / ns,
        mean_return_time: total_return_time / ns,
        mean_session_length: total_length as f64 / ns,
        mean_satisfaction: total_satisfaction / total_length.max(1) as f64,
        n_users,
        n_sessions,
        n_steps: total_length,
        clamped_steps,
    }
}
