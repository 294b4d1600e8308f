use std::collections::VecDeque;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::EnvConfig;

/// Hidden per-user parameters plus the running statistics used for rewards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserProfile {
    pub user_id: u64,
    /// Unit vector in action space.
    pub preference: Vec<f64>,
    /// Systematic error of the online-serving policy for this user.
    pub bias: Vec<f64>,
    pub base_continue: f64,
    /// Return time in hours at zero engagement.
    pub delta_base: f64,
    pub activity: f64,
    /// Observable profile features: the preference seen through noise.
    pub features: Vec<f64>,
    pub delta_avg: f64,
    pub eta_avg: f64,
}

impl UserProfile {
    pub fn sample<R: Rng + ?Sized>(
        user_id: u64,
        cfg: &EnvConfig,
        bias: &[f64],
        rng: &mut R,
    ) -> Self {
        let preference = random_unit(cfg.action_dim, rng);
        let activity = rng.gen_range(cfg.activity_min..=cfg.activity_max);
        let features = preference
            .iter()
            .map(|p| {
                let e: f64 = StandardNormal.sample(rng);
                p + cfg.feature_noise * e
            })
            .collect();
        let delta_base = cfg.delta_base / activity;
        UserProfile {
            user_id,
            preference,
            bias: bias.to_vec(),
            base_continue: cfg.base_continue,
            delta_base,
            activity,
            features,
            delta_avg: delta_base,
            eta_avg: 1.0 / (1.0 - cfg.base_continue),
        }
    }
}

pub(crate) fn random_unit<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Observed user state, split into session-level and request-level parts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserState {
    /// EMA return time, EMA session length, session count, engagement EMA.
    pub s_h: Vec<f64>,
    /// Position in session, recent satisfactions, last-action size, profile features.
    pub s_l: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Event {
    Consumed,
    SessionEnd,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub event: Event,
    pub satisfaction: f64,
    /// Hours until the next session; present on session end.
    pub return_time: Option<f64>,
    /// Session length, present on session end.
    pub session_length: Option<usize>,
    /// True when the action had to be clamped into `[-1, 1]`.
    pub clamped: bool,
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `delta_base · exp(−β·engagement) · (1 + ξ)`.
pub fn return_time(delta_base: f64, beta: f64, engagement: f64, xi: f64) -> f64 {
    delta_base * (-beta * engagement).exp() * (1.0 + xi)
}

/// One simulated user: hidden profile plus the dynamic quantities behind
/// the observed state.
#[derive(Debug, Clone)]
pub struct UserSim {
    pub profile: UserProfile,
    cfg: EnvConfig,
    engagement: f64,
    ema_return_time: f64,
    ema_session_length: f64,
    session_index: usize,
    position: usize,
    history: VecDeque<f64>,
    last_action_size: f64,
}

impl UserSim {
    pub fn new(profile: UserProfile, cfg: &EnvConfig) -> Self {
        UserSim {
            profile,
            cfg: cfg.clone(),
            engagement: 0.5,
            ema_return_time: cfg.delta_base,
            ema_session_length: 0.0,
            session_index: 0,
            position: 0,
            history: VecDeque::from(vec![0.0; cfg.history_len]),
            last_action_size: 0.0,
        }
    }

    pub fn engagement(&self) -> f64 {
        self.engagement
    }

    pub fn session_index(&self) -> usize {
        self.session_index
    }

    pub fn position(&self) -> usize {
        self.position
    }

    pub fn state(&self) -> UserState {
        let cfg = &self.cfg;
        let s_h = vec![
            self.ema_return_time / cfg.delta_base,
            self.ema_session_length / 10.0,
            self.session_index as f64 / cfg.sessions_per_user as f64,
            self.engagement,
        ];
        let mut s_l = Vec::with_capacity(cfg.request_dim());
        s_l.push(self.position as f64 / cfg.max_session_len as f64);
        s_l.extend(self.history.iter().copied());
        s_l.push(self.last_action_size);
        s_l.extend_from_slice(&self.profile.features);
        UserState { s_h, s_l }
    }

    /// Serves one recommendation and advances the user.
    pub fn step<R: Rng + ?Sized>(&mut self, action: &[f64], rng: &mut R) -> StepOutcome {
        let cfg = &self.cfg;
        let mut clamped = false;
        let action: Vec<f64> = action
            .iter()
            .map(|&a| {
                if !(-1.0..=1.0).contains(&a) {
                    clamped = true;
                }
                a.clamp(-1.0, 1.0)
            })
            .collect();
        let affinity: f64 = action
            .iter()
            .zip(&self.profile.preference)
            .map(|(a, p)| a * p)
            .sum();
        let q = sigmoid(cfg.kappa * affinity);
        let rho = cfg.ema_decay;
        self.engagement = rho * self.engagement + (1.0 - rho) * q;
        if cfg.history_len > 0 {
            self.history.pop_front();
            self.history.push_back(q);
        }
        self.last_action_size =
            (action.iter().map(|a| a * a).sum::<f64>() / action.len() as f64).sqrt();
        self.position += 1;

        let continues = rng.gen::<f64>() < self.profile.base_continue * q;
        if continues && self.position < cfg.max_session_len {
            return StepOutcome {
                event: Event::Consumed,
                satisfaction: q,
                return_time: None,
                session_length: None,
                clamped,
            };
        }
        let xi = rng.gen_range(-cfg.return_jitter..=cfg.return_jitter);
        let delta = return_time(self.profile.delta_base, cfg.return_decay, self.engagement, xi);
        let length = self.position;
        self.ema_return_time = rho * self.ema_return_time + (1.0 - rho) * delta;
        self.ema_session_length = rho * self.ema_session_length + (1.0 - rho) * length as f64;
        self.session_index += 1;
        self.position = 0;
        self.history.iter_mut().for_each(|h| *h = 0.0);
        StepOutcome {
            event: Event::SessionEnd,
            satisfaction: q,
            return_time: Some(delta),
            session_length: Some(length),
            clamped,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sim_with_preference(cfg: &EnvConfig, preference: Vec<f64>) -> UserSim {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut profile = UserProfile::sample(0, cfg, &vec![0.0; cfg.action_dim], &mut rng);
        profile.preference = preference;
        UserSim::new(profile, cfg)
    }

    #[test]
    fn aligned_action_satisfies_almost_surely() {
        let cfg = EnvConfig {
            kappa: 10.0,
            ..EnvConfig::default()
        };
        let mut pref = vec![0.0; 8];
        pref[0] = 1.0;
        let mut sim = sim_with_preference(&cfg, pref.clone());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let out = sim.step(&pref, &mut rng);
        assert!((out.satisfaction - 0.999_954_602_131_297_6).abs() < 1e-12);

        // continuation frequency ≈ base_continue · q
        let mut cont = 0usize;
        let trials = 20_000;
        for _ in 0..trials {
            let mut s = sim_with_preference(&cfg, pref.clone());
            if s.step(&pref, &mut rng).event == Event::Consumed {
                cont += 1;
            }
        }
        let freq = cont as f64 / trials as f64;
        assert!((freq - 0.8 * 0.999_954_6).abs() < 0.01, "freq {freq}");
    }

    #[test]
    fn orthogonal_action_gives_half_satisfaction() {
        let cfg = EnvConfig::default();
        let mut pref = vec![0.0; 8];
        pref[0] = 1.0;
        let mut sim = sim_with_preference(&cfg, pref);
        let mut action = vec![0.0; 8];
        action[1] = 1.0;
        let out = sim.step(&action, &mut ChaCha8Rng::seed_from_u64(2));
        assert_eq!(out.satisfaction, 0.5);
    }

    #[test]
    fn return_time_at_zero_engagement_is_base() {
        assert_eq!(return_time(24.0, 3.0, 0.0, 0.0), 24.0);
        assert!((return_time(24.0, 1.0, 1.0, 0.1) - 24.0 * (-1f64).exp() * 1.1).abs() < 1e-12);
    }

    #[test]
    fn out_of_range_actions_are_clamped_and_flagged() {
        let cfg = EnvConfig::default();
        let mut sim = sim_with_preference(&cfg, {
            let mut p = vec![0.0; 8];
            p[0] = 1.0;
            p
        });
        let mut action = vec![0.0; 8];
        action[0] = 3.0;
        let out = sim.step(&action, &mut ChaCha8Rng::seed_from_u64(3));
        assert!(out.clamped);
        assert!((out.satisfaction - sigmoid(5.0)).abs() < 1e-15);
    }

    #[test]
    fn sessions_end_and_reset_request_state() {
        let cfg = EnvConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let profile = UserProfile::sample(0, &cfg, &vec![0.0; 8], &mut rng);
        let mut sim = UserSim::new(profile, &cfg);
        let action = vec![0.0; 8];
        let mut ended = 0;
        for _ in 0..500 {
            let out = sim.step(&action, &mut rng);
            assert!(sim.position() < cfg.max_session_len);
            if out.event == Event::SessionEnd {
                ended += 1;
                assert!(out.return_time.unwrap() > 0.0);
                let s = sim.state();
                assert_eq!(s.s_l[0], 0.0);
                assert!(s.s_l[1..1 + cfg.history_len].iter().all(|&h| h == 0.0));
            }
        }
        assert_eq!(sim.session_index(), ended);
        let s = sim.state();
        assert_eq!(s.s_h.len(), 4);
        assert_eq!(s.s_l.len(), cfg.request_dim());
    }

    #[test]
    fn session_length_is_capped() {
        let cfg = EnvConfig {
            base_continue: 0.999_999,
            max_session_len: 7,
            ..EnvConfig::default()
        };
        let pref = {
            let mut p = vec![0.0; 8];
            p[0] = 1.0;
            p
        };
        let mut sim = sim_with_preference(&cfg, pref.clone());
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut len = 0;
        loop {
            len += 1;
            if sim.step(&pref, &mut rng).event == Event::SessionEnd {
                break;
            }
        }
        assert!(len <= 7);
    }
}
