use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::rollout::Policy;
use super::{UserProfile, UserState};

/// Noise-free serving action: the normalized sum of preference and bias,
/// clamped into the action box.
pub fn behavior_mean(profile: &UserProfile) -> Vec<f64> {
    let raw: Vec<f64> = profile
        .preference
        .iter()
        .zip(&profile.bias)
        .map(|(p, b)| p + b)
        .collect();
    let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = if norm > 1e-12 { 1.0 / norm } else { 0.0 };
    raw.iter().map(|x| (x * scale).clamp(-1.0, 1.0)).collect()
}

pub fn behavior_action(profile: &UserProfile, noise: &[f64]) -> Vec<f64> {
    behavior_mean(profile)
        .iter()
        .zip(noise)
        .map(|(m, e)| (m + e).clamp(-1.0, 1.0))
        .collect()
}

/// Exploration noise of the serving policy.
///
/// A fresh offset `N(0, σ²)` is drawn at the start of every session and then
/// evolves as an AR(1) process with coefficient `persistence`, so the
/// marginal std stays `σ` for every request.
#[derive(Debug, Clone)]
pub struct BehaviorNoise {
    sigma: f64,
    persistence: f64,
    current: Vec<f64>,
}

impl BehaviorNoise {
    pub fn new(dim: usize, sigma: f64, persistence: f64) -> Self {
        BehaviorNoise {
            sigma,
            persistence,
            current: vec![0.0; dim],
        }
    }

    pub fn start_session<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        for e in &mut self.current {
            let z: f64 = StandardNormal.sample(rng);
            *e = self.sigma * z;
        }
    }

    /// Advances the process by one request.
    pub fn advance<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        if self.persistence >= 1.0 {
            return;
        }
        let innovation = (1.0 - self.persistence * self.persistence).sqrt() * self.sigma;
        for e in &mut self.current {
            let z: f64 = StandardNormal.sample(rng);
            *e = self.persistence * *e + innovation * z;
        }
    }

    pub fn current(&self) -> &[f64] {
        &self.current
    }
}

/// The online-serving policy that produced the logs.
#[derive(Debug, Clone)]
pub struct BehaviorPolicy {
    noise: BehaviorNoise,
    fresh: bool,
}

impl BehaviorPolicy {
    pub fn new(dim: usize, sigma: f64, persistence: f64) -> Self {
        BehaviorPolicy {
            noise: BehaviorNoise::new(dim, sigma, persistence),
            fresh: true,
        }
    }
}

impl Policy for BehaviorPolicy {
    fn begin_session(&mut self, rng: &mut dyn rand::RngCore) {
        self.noise.start_session(rng);
        self.fresh = true;
    }

    fn act(&mut self, profile: &UserProfile, _state: &UserState, rng: &mut dyn rand::RngCore) -> Vec<f64> {
        if !self.fresh {
            self.noise.advance(rng);
        }
        self.fresh = false;
        behavior_action(profile, self.noise.current())
    }
}
