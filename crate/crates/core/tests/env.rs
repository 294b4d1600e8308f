use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use resact::env::{
    behavior_action, generate_dataset, rollout_policy, sigmoid, BehaviorPolicy, EnvConfig,
    LoggedDataset, Policy, Population, RandomPolicy, RewardMode, UserProfile, UserState,
};

fn config(n_users: usize, sessions: usize) -> EnvConfig {
    EnvConfig {
        n_users,
        sessions_per_user: sessions,
        ..EnvConfig::default()
    }
}

/// Serves the preference itself.
struct Oracle;

impl Policy for Oracle {
    fn act(&mut self, p: &UserProfile, _s: &UserState, _r: &mut dyn rand::RngCore) -> Vec<f64> {
        p.preference.clone()
    }
}

#[test]
fn same_seed_gives_identical_files() {
    let cfg = config(10, 5);
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    generate_dataset(&cfg, 42).unwrap().save(a.path()).unwrap();
    generate_dataset(&cfg, 42).unwrap().save(b.path()).unwrap();
    for f in ["transitions.jsonl", "stats.json"] {
        let x = std::fs::read(a.path().join(f)).unwrap();
        let y = std::fs::read(b.path().join(f)).unwrap();
        assert_eq!(x, y, "{f} differs");
    }
}

#[test]
fn save_load_round_trips() {
    let ds = generate_dataset(&config(6, 4), 9).unwrap();
    let dir = tempfile::tempdir().unwrap();
    ds.save(dir.path()).unwrap();
    let back = LoggedDataset::load(dir.path()).unwrap();
    assert_eq!(back, ds);
}

#[test]
fn load_rejects_truncated_file() {
    let ds = generate_dataset(&config(4, 3), 10).unwrap();
    let dir = tempfile::tempdir().unwrap();
    ds.save(dir.path()).unwrap();
    let path = dir.path().join("transitions.jsonl");
    let text = std::fs::read_to_string(&path).unwrap();
    let kept: Vec<&str> = text.lines().skip(1).collect();
    std::fs::write(&path, kept.join("\n")).unwrap();
    assert!(LoggedDataset::load(dir.path()).is_err());
}

#[test]
fn behavior_noise_std_matches_sigma() {
    let cfg = EnvConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let profile = UserProfile::sample(0, &cfg, &vec![0.0; 8], &mut rng);
    // a mean well inside the box so clamping does not bite
    let mut profile = profile;
    profile.preference = vec![0.0; 8];
    profile.preference[0] = 1.0;
    let normal = Normal::new(0.0, 0.3).unwrap();
    let n = 100_000;
    let mut sum = 0.0;
    let mut sq = 0.0;
    for _ in 0..n {
        let eps: Vec<f64> = (0..8).map(|_| normal.sample(&mut rng)).collect();
        let a = behavior_action(&profile, &eps)[3];
        sum += a;
        sq += a * a;
    }
    let mean = sum / n as f64;
    let std = (sq / n as f64 - mean * mean).sqrt();
    assert!((std - 0.3).abs() < 0.015, "std {std}");
}

fn satisfaction(p: &UserProfile, eps: &[f64], kappa: f64) -> f64 {
    let a = behavior_action(p, eps);
    let dot: f64 = a.iter().zip(&p.preference).map(|(x, y)| x * y).sum();
    sigmoid(kappa * dot)
}

/// Fresh noise per request: each user's sessions are geometric with
/// continuation `base_continue · E[q | user]`.
#[test]
fn session_length_follows_geometric_model() {
    let cfg = EnvConfig {
        noise_persistence: 0.0,
        ..config(100, 20)
    };
    let ds = generate_dataset(&cfg, 11).unwrap();
    let pop = Population::from_dataset(&ds);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let normal = Normal::new(0.0, cfg.behavior_noise).unwrap();
    let draws = 2000;
    let mut predicted = 0.0;
    for p in &pop.profiles {
        let mut q = 0.0;
        for _ in 0..draws {
            let eps: Vec<f64> = (0..cfg.action_dim).map(|_| normal.sample(&mut rng)).collect();
            q += satisfaction(p, &eps, cfg.kappa);
        }
        predicted += 1.0 / (1.0 - cfg.base_continue * q / draws as f64);
    }
    predicted /= pop.profiles.len() as f64;
    let observed = ds.stats.mean_session_length;
    assert!(
        (observed / predicted - 1.0).abs() < 0.10,
        "observed {observed}, predicted {predicted}"
    );
}

/// Noise fixed per session: each session is geometric given its own offset.
#[test]
fn persistent_noise_sessions_are_a_geometric_mixture() {
    let cfg = config(100, 20);
    let ds = generate_dataset(&cfg, 11).unwrap();
    let pop = Population::from_dataset(&ds);
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let normal = Normal::new(0.0, cfg.behavior_noise).unwrap();
    let draws = 2000;
    let mut predicted = 0.0;
    for p in &pop.profiles {
        for _ in 0..draws {
            let eps: Vec<f64> = (0..cfg.action_dim).map(|_| normal.sample(&mut rng)).collect();
            predicted += 1.0 / (1.0 - cfg.base_continue * satisfaction(p, &eps, cfg.kappa));
        }
    }
    predicted /= (draws * pop.profiles.len()) as f64;
    let observed = ds.stats.mean_session_length;
    assert!(
        (observed / predicted - 1.0).abs() < 0.10,
        "observed {observed}, predicted {predicted}"
    );
}

#[test]
fn behavior_beats_random_on_satisfaction() {
    let ds = generate_dataset(&config(50, 20), 13).unwrap();
    let pop = Population::from_dataset(&ds);
    let cfg = &pop.config;
    let mut behavior = BehaviorPolicy::new(8, cfg.behavior_noise, cfg.noise_persistence);
    let b = rollout_policy(&mut behavior, &pop, 20, 0.9, RewardMode::Both, 14);
    let r = rollout_policy(&mut RandomPolicy { action_dim: 8 }, &pop, 20, 0.9, RewardMode::Both, 14);
    assert!(b.n_sessions >= 1000);
    assert!(b.mean_satisfaction > r.mean_satisfaction);
}

#[test]
fn preference_aligned_policy_is_best() {
    let ds = generate_dataset(&config(50, 10), 15).unwrap();
    let pop = Population::from_dataset(&ds);
    let mut unbiased = pop.clone();
    for p in &mut unbiased.profiles {
        p.bias = vec![0.0; 8];
    }
    let noiseless = rollout_policy(&mut BehaviorPolicy::new(8, 0.0, 1.0), &unbiased, 10, 0.9, RewardMode::Both, 16);
    let logged = rollout_policy(&mut BehaviorPolicy::new(8, 0.3, 1.0), &pop, 10, 0.9, RewardMode::Both, 16);
    let random = rollout_policy(&mut RandomPolicy { action_dim: 8 }, &pop, 10, 0.9, RewardMode::Both, 16);
    assert!(noiseless.mean_satisfaction > logged.mean_satisfaction);
    assert!(noiseless.mean_satisfaction > random.mean_satisfaction);
    let oracle = rollout_policy(&mut Oracle, &pop, 10, 0.9, RewardMode::Both, 16);
    assert!((oracle.mean_satisfaction - noiseless.mean_satisfaction).abs() < 1e-12);
}

#[test]
fn zero_discount_counts_only_first_step_rewards() {
    let ds = generate_dataset(&config(20, 10), 17).unwrap();
    let pop = Population::from_dataset(&ds);
    let mut policy = BehaviorPolicy::new(8, 0.3, 1.0);
    let s0 = rollout_policy(&mut policy, &pop, 10, 0.0, RewardMode::SessionLength, 18);
    let s1 = rollout_policy(&mut policy, &pop, 10, 1.0, RewardMode::SessionLength, 18);
    // γ = 1 gives the undiscounted session reward
    assert!((s1.mean_return - s1.mean_session_reward).abs() < 1e-12);
    assert!(s0.mean_return <= s1.mean_return);
}

#[test]
fn rollout_of_logging_policy_reproduces_dataset_statistics() {
    let cfg = config(100, 20);
    let ds = generate_dataset(&cfg, 19).unwrap();
    let pop = Population::from_dataset(&ds);
    let mut policy = BehaviorPolicy::new(8, cfg.behavior_noise, cfg.noise_persistence);
    let s = rollout_policy(&mut policy, &pop, 20, 0.9, RewardMode::Both, 20);
    let rel = s.mean_session_length / ds.stats.mean_session_length - 1.0;
    assert!(rel.abs() < 0.10, "rollout {} vs logged {}", s.mean_session_length, ds.stats.mean_session_length);
}

#[test]
fn oracle_has_headroom_over_logging_policy() {
    let cfg = config(100, 20);
    let ds = generate_dataset(&cfg, 21).unwrap();
    let pop = Population::from_dataset(&ds);
    let mut policy = BehaviorPolicy::new(8, cfg.behavior_noise, cfg.noise_persistence);
    for mode in RewardMode::ALL {
        let b = rollout_policy(&mut policy, &pop, 20, 0.9, mode, 22);
        let o = rollout_policy(&mut Oracle, &pop, 20, 0.9, mode, 22);
        assert!(o.mean_return > 1.2 * b.mean_return, "{mode:?}: {} vs {}", o.mean_return, b.mean_return);
    }
}
