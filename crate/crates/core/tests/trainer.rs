use std::collections::BTreeSet;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use resact::env::{generate_dataset, EnvConfig, LoggedDataset};
use resact::evaluator::{exact_behavior_means, EvalConfig};
use resact::numerics::Mlp;
use resact::trainer::{
    composite_objective, compute_gradients, fit_normalizer, group_gradients, train, train_step, Batch, Group,
    LossTerm, ModelBundle, ObsNormalizer, Observations, StepNoise, TrainConfig, TrainOptions, TrainingData,
    Validation,
};
use resact::{trainer, Error};

fn tiny_env() -> EnvConfig {
    EnvConfig {
        n_users: 12,
        sessions_per_user: 4,
        action_dim: 3,
        history_len: 2,
        ..EnvConfig::default()
    }
}

fn tiny_config() -> TrainConfig {
    TrainConfig {
        hidden: vec![6, 5],
        z_h_dim: 3,
        z_l_dim: 2,
        batch_size: 16,
        iterations: Some(3),
        eval_interval: 0,
        log_interval: 1,
        ..TrainConfig::desk()
    }
}

struct Fixture {
    bundle: ModelBundle,
    batch: Batch,
    noise: StepNoise,
}

fn fixture(cfg: &TrainConfig, seed: u64) -> Fixture {
    let ds = generate_dataset(&tiny_env(), seed).unwrap();
    let norm = fit_normalizer(&ds, true);
    let data = TrainingData::new(&ds, &norm).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bundle = ModelBundle::new(cfg, trainer::dims_of(&ds), norm, &mut rng).unwrap();
    // Leave the zero-initialized residual head so every path carries gradient.
    randomize(bundle.net_mut(Group::ResidualHead), 0.3, &mut rng);
    bundle.target.actor.f_a = bundle.actor.f_a.clone();
    let idx: Vec<usize> = (0..cfg.batch_size).map(|_| rng.gen_range(0..data.len())).collect();
    let batch = data.batch(&idx);
    let noise = StepNoise::draw(&bundle, batch.len(), &mut rng);
    Fixture { bundle, batch, noise }
}

fn randomize(net: &mut Mlp, scale: f64, rng: &mut ChaCha8Rng) {
    let p: Vec<f64> = (0..net.num_params()).map(|_| rng.gen_range(-scale..scale)).collect();
    net.set_flat_params(&p).unwrap();
}

fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic.iter().zip(numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
    let norm: f64 = numeric.iter().map(|n| n * n).sum::<f64>().sqrt();
    diff / norm.max(1e-12)
}

/// The scalar each group descends, evaluated with frozen noise.
fn group_loss(bundle: &ModelBundle, f: &Fixture, group: Group) -> f64 {
    let (l, _) = compute_gradients(bundle, &f.batch, &f.noise).unwrap();
    match group {
        Group::Q1 => l.td1,
        Group::Q2 => l.td2,
        _ => composite_objective(&l, bundle.config.w_exp, bundle.config.w_con),
    }
}

#[test]
fn composite_gradient_matches_finite_differences() {
    let f = fixture(&tiny_config(), 1);
    let (_, contributions) = compute_gradients(&f.bundle, &f.batch, &f.noise).unwrap();
    for (group, grads) in group_gradients(&f.bundle, &contributions) {
        let params = f.bundle.net(group).flat_params();
        let h = 1e-6;
        let mut probe = f.bundle.clone();
        let numeric: Vec<f64> = (0..params.len())
            .map(|i| {
                let mut p = params.clone();
                p[i] += h;
                probe.net_mut(group).set_flat_params(&p).unwrap();
                let up = group_loss(&probe, &f, group);
                p[i] -= 2.0 * h;
                probe.net_mut(group).set_flat_params(&p).unwrap();
                let down = group_loss(&probe, &f, group);
                (up - down) / (2.0 * h)
            })
            .collect();
        let err = rel_err(&grads.flat(), &numeric);
        assert!(err < 1e-4, "{}: relative error {err}", group.name());
    }
}

#[test]
fn each_group_hears_only_its_losses() {
    let cfg = tiny_config();
    let mut f = fixture(&cfg, 2);
    for _ in 0..3 {
        train_step(&mut f.bundle, &f.batch, &f.noise).unwrap();
    }
    let report = train_step(&mut f.bundle, &f.batch, &f.noise).unwrap();
    use LossTerm::*;
    let expected: [(Group, &[LossTerm]); 8] = [
        (Group::Encoder, &[Reconstruction]),
        (Group::Decoder, &[Reconstruction, Objective]),
        (Group::SessionEncoder, &[Objective, Expressiveness, Conciseness]),
        (Group::RequestEncoder, &[Objective]),
        (Group::ResidualHead, &[Objective]),
        (Group::Q1, &[TemporalDifference]),
        (Group::Q2, &[TemporalDifference]),
        (Group::RewardEstimator, &[Expressiveness]),
    ];
    for (group, terms) in expected {
        let want: BTreeSet<LossTerm> = terms.iter().copied().collect();
        assert_eq!(report.taps.terms_for(group), want, "{}", group.name());
    }
}

#[test]
fn zero_critic_sends_no_policy_gradient() {
    let mut f = fixture(&tiny_config(), 3);
    let q1 = f.bundle.net_mut(Group::Q1);
    let zeros = vec![0.0; q1.num_params()];
    q1.set_flat_params(&zeros).unwrap();
    let (_, contributions) = compute_gradients(&f.bundle, &f.batch, &f.noise).unwrap();
    for c in contributions.iter().filter(|c| c.term == LossTerm::Objective) {
        assert_eq!(c.grads.max_abs(), 0.0, "{}", c.group.name());
    }
    let before = f.bundle.clone();
    train_step(&mut f.bundle, &f.batch, &f.noise).unwrap();
    for g in [Group::RequestEncoder, Group::ResidualHead] {
        assert_eq!(f.bundle.net(g), before.net(g), "{} moved", g.name());
    }
    for g in [Group::Encoder, Group::Decoder, Group::SessionEncoder, Group::RewardEstimator] {
        assert_ne!(f.bundle.net(g), before.net(g), "{} did not move", g.name());
    }
}

#[test]
fn small_policy_step_does_not_lower_mean_q() {
    let f = fixture(&tiny_config(), 4);
    let (before, contributions) = compute_gradients(&f.bundle, &f.batch, &f.noise).unwrap();
    let lr = 1e-8;
    let mut moved = f.bundle.clone();
    let mut predicted = 0.0;
    for c in contributions.iter().filter(|c| c.term == LossTerm::Objective) {
        let g = c.grads.flat();
        predicted += lr * g.iter().map(|v| v * v).sum::<f64>();
        let p: Vec<f64> = moved.net(c.group).flat_params().iter().zip(&g).map(|(p, g)| p - lr * g).collect();
        moved.net_mut(c.group).set_flat_params(&p).unwrap();
    }
    let (after, _) = compute_gradients(&moved, &f.batch, &f.noise).unwrap();
    let gain = after.mean_q - before.mean_q;
    assert!(predicted > 0.0);
    assert!(gain >= 0.0, "mean Q fell by {}", -gain);
    assert!((gain - predicted).abs() < 0.01 * predicted, "gain {gain} vs first-order {predicted}");
}

#[test]
fn without_regularizers_the_session_encoder_follows_the_objective_only() {
    let cfg = TrainConfig {
        w_exp: 0.0,
        w_con: 0.0,
        ..tiny_config()
    };
    let f = fixture(&cfg, 5);
    let (_, contributions) = compute_gradients(&f.bundle, &f.batch, &f.noise).unwrap();
    let totals = group_gradients(&f.bundle, &contributions);
    let objective = contributions
        .iter()
        .find(|c| c.group == Group::SessionEncoder && c.term == LossTerm::Objective)
        .unwrap();
    let total = &totals.iter().find(|(g, _)| *g == Group::SessionEncoder).unwrap().1;
    assert_eq!(total, &objective.grads);
    let o = &totals.iter().find(|(g, _)| *g == Group::RewardEstimator).unwrap().1;
    assert_eq!(o.max_abs(), 0.0);
}

#[test]
fn full_soft_update_copies_live_parameters() {
    let cfg = TrainConfig {
        tau: 1.0,
        ..tiny_config()
    };
    let mut f = fixture(&cfg, 6);
    train_step(&mut f.bundle, &f.batch, &f.noise).unwrap();
    let b = &f.bundle;
    assert_eq!(b.target.decoder, b.cvae.decoder);
    assert_eq!(b.target.actor, b.actor);
    assert_eq!(b.target.critic, b.critic);
}

#[test]
fn non_finite_parameters_abort_with_the_iteration() {
    let mut f = fixture(&tiny_config(), 7);
    train_step(&mut f.bundle, &f.batch, &f.noise).unwrap();
    let mut p = f.bundle.net(Group::Decoder).flat_params();
    p[0] = f64::NAN;
    f.bundle.net_mut(Group::Decoder).set_flat_params(&p).unwrap();
    match train_step(&mut f.bundle, &f.batch, &f.noise) {
        Err(Error::NonFinite { iteration, .. }) => assert_eq!(iteration, 1),
        other => panic!("expected a non-finite abort, got {other:?}"),
    }
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let mut f = fixture(&tiny_config(), 8);
    train_step(&mut f.bundle, &f.batch, &f.noise).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.bin");
    f.bundle.save(&path).unwrap();
    let mut loaded = ModelBundle::load(&path).unwrap();
    assert_eq!(loaded.to_store().to_bytes().unwrap(), f.bundle.to_store().to_bytes().unwrap());
    let a = train_step(&mut f.bundle, &f.batch, &f.noise).unwrap();
    let b = train_step(&mut loaded, &f.batch, &f.noise).unwrap();
    assert_eq!(a.losses, b.losses);
    assert_eq!(loaded.to_store().to_bytes().unwrap(), f.bundle.to_store().to_bytes().unwrap());
}

#[test]
fn double_normalization_is_rejected() {
    let states = Array2::from_shape_fn((5, 2), |(i, j)| (i * 2 + j) as f64);
    let norm = ObsNormalizer::fit(states.view());
    let once = norm.apply(Observations::raw(states.clone())).unwrap();
    assert!(once.is_normalized());
    assert!(matches!(norm.apply(once.clone()), Err(Error::DoubleNormalization)));
    let back = norm.inverse(once.values());
    for (a, b) in back.iter().zip(states.iter()) {
        assert!((a - b).abs() < 1e-12);
    }
}

fn smoke_data() -> (LoggedDataset, LoggedDataset) {
    let env = EnvConfig {
        n_users: 50,
        sessions_per_user: 10,
        ..EnvConfig::default()
    };
    let val = EnvConfig { n_users: 10, ..env.clone() };
    (generate_dataset(&env, 21).unwrap(), generate_dataset(&val, 22).unwrap())
}

#[test]
fn smoke_run_reduces_reconstruction_loss() {
    let (ds, _) = smoke_data();
    let cfg = TrainConfig {
        iterations: Some(200),
        eval_interval: 0,
        log_interval: 1,
        ..TrainConfig::desk()
    };
    let out = train(&ds, &cfg, &TrainOptions::default()).unwrap();
    assert_eq!(out.metrics.len(), 200);
    for m in &out.metrics {
        for v in [m.rec, m.td1, m.td2, m.exp, m.con, m.mean_q] {
            assert!(v.is_finite(), "{m:?}");
        }
    }
    let (first, last) = (out.metrics[0].rec, out.metrics[199].rec);
    assert!(last <= 0.5 * first, "L^Rec {first} → {last}");
    assert_eq!(out.bundle.iteration, 200);
}

#[test]
fn same_seed_gives_identical_metrics_files() {
    let (ds, val) = smoke_data();
    let means = exact_behavior_means(&val);
    let cfg = TrainConfig {
        iterations: Some(40),
        eval_interval: 20,
        log_interval: 10,
        ..tiny_config()
    };
    let run = |dir: &std::path::Path| {
        let opts = TrainOptions {
            validation: Some(Validation {
                dataset: &val,
                behavior_means: &means,
                config: EvalConfig::default(),
            }),
            out_dir: Some(dir.to_path_buf()),
        };
        train(&ds, &cfg, &opts).unwrap();
        std::fs::read_to_string(dir.join("metrics.csv")).unwrap()
    };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let csv = run(a.path());
    assert_eq!(csv, run(b.path()));
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], trainer::METRICS_HEADER);
    assert_eq!(lines.len(), 1 + 4);
    assert!(lines[2].split(',').last().unwrap().parse::<f64>().is_ok(), "validation column at 20");
    assert!(lines[1].ends_with(','), "no validation at 10");
    for f in ["config.json", "checkpoint.bin", "checkpoint_000020.bin", "checkpoint_000040.bin"] {
        assert!(a.path().join(f).exists(), "{f}");
    }
}

#[test]
fn incompatible_inputs_fail_before_training() {
    let (ds, _) = smoke_data();
    let bad = TrainConfig {
        gamma: 1.0,
        ..tiny_config()
    };
    assert!(matches!(train(&ds, &bad, &TrainOptions::default()), Err(Error::Config(_))));

    let other = generate_dataset(&tiny_env(), 3).unwrap();
    let means = exact_behavior_means(&other);
    let opts = TrainOptions {
        validation: Some(Validation {
            dataset: &other,
            behavior_means: &means,
            config: EvalConfig::default(),
        }),
        out_dir: None,
    };
    assert!(matches!(train(&ds, &tiny_config(), &opts), Err(Error::Config(_))));
}
