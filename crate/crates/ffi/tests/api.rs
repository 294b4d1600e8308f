use std::ffi::{CStr, CString};
use std::path::Path;
use std::ptr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use resact::baselines::{load_model, train_bc};
use resact::env::{generate_dataset, reward_return_time, reward_session_length, EnvConfig, LoggedDataset};
use resact::evaluator::{evaluate_model, exact_behavior_means, EvalConfig};
use resact::trainer::{state_matrix, TrainConfig, TrainOptions};
use resact_ffi::*;

fn dataset(users: usize, seed: u64) -> LoggedDataset {
    let cfg = EnvConfig {
        n_users: users,
        sessions_per_user: 4,
        ..EnvConfig::default()
    };
    generate_dataset(&cfg, seed).unwrap()
}

/// Writes a dataset and a short BC checkpoint under `dir`.
fn fixtures(dir: &Path) -> (LoggedDataset, CString, CString) {
    let ds = dataset(6, 3);
    ds.save(&dir.join("data")).unwrap();
    let cfg = TrainConfig {
        iterations: Some(20),
        hidden: vec![16, 16],
        batch_size: 64,
        eval_interval: 0,
        log_interval: 10,
        ..TrainConfig::desk()
    };
    let opts = TrainOptions {
        validation: None,
        out_dir: Some(dir.join("bc")),
    };
    train_bc(&ds, &cfg, &opts).unwrap();
    let c = |p: &Path| CString::new(p.to_str().unwrap()).unwrap();
    (ds, c(&dir.join("bc/checkpoint.bin")), c(&dir.join("data")))
}

fn last_error() -> String {
    let p = resact_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn model_acts_like_the_library() {
    let dir = tempfile::tempdir().unwrap();
    let (ds, ckpt, _) = fixtures(dir.path());
    let mut model = ptr::null_mut();
    unsafe {
        assert_eq!(resact_model_load(ckpt.as_ptr(), 0, &mut model), ResactStatus::Ok);
        let states = state_matrix(&ds);
        let (n, sd) = states.dim();
        assert_eq!(resact_model_state_dim(model), sd);
        let ad = resact_model_action_dim(model);
        assert_eq!(ad, ds.transitions[0].a.len());

        let flat: Vec<f64> = states.iter().copied().collect();
        let mut out = vec![0.0; n * ad];
        let st = resact_model_act(model, flat.as_ptr(), n, 5, out.as_mut_ptr(), out.len());
        assert_eq!(st, ResactStatus::Ok);
        let direct = load_model(Path::new(ckpt.to_str().unwrap()), None).unwrap();
        let want = direct.act_batch(states.view(), &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(out, want.iter().copied().collect::<Vec<_>>());

        let st = resact_model_act(model, flat.as_ptr(), n, 5, out.as_mut_ptr(), out.len() - 1);
        assert_eq!(st, ResactStatus::BufferTooSmall);
        assert!(last_error().contains("needed"));
        resact_model_free(model);
    }
}

#[test]
fn evaluate_matches_the_library() {
    let dir = tempfile::tempdir().unwrap();
    let (_, ckpt, data) = fixtures(dir.path());
    unsafe {
        let mut model = ptr::null_mut();
        let mut ds = ptr::null_mut();
        assert_eq!(resact_model_load(ckpt.as_ptr(), 0, &mut model), ResactStatus::Ok);
        assert_eq!(resact_dataset_load(data.as_ptr(), &mut ds), ResactStatus::Ok);
        let loaded = LoggedDataset::load(Path::new(data.to_str().unwrap())).unwrap();
        assert_eq!(resact_dataset_len(ds), loaded.len());

        let mut report = ResactNcisReport::default();
        assert_eq!(resact_evaluate(model, ds, 10.0, 0.2, 9, &mut report), ResactStatus::Ok);
        let direct = load_model(Path::new(ckpt.to_str().unwrap()), None).unwrap();
        let means = exact_behavior_means(&loaded);
        let want = evaluate_model(direct.as_ref(), &loaded, means.view(), &EvalConfig::default(), 9).unwrap();
        assert_eq!(report.ncis, want.ncis);
        assert_eq!(report.ess, want.ess);
        assert_eq!(report.n_trajectories, want.n_trajectories);

        assert_eq!(resact_evaluate(model, ds, -1.0, 0.2, 9, &mut report), ResactStatus::Config);
        resact_dataset_free(ds);
        resact_model_free(model);
    }
}

#[test]
fn ncis_over_raw_arrays() {
    // two one-step trajectories; the second ratio is capped at c = 1 and both weights normalize away
    let offsets = [0usize, 1, 2];
    let rewards = [1.0, 3.0];
    let logged = [0.0, 0.0];
    let eval = [0.0, 0.5];
    let behavior = [0.0, 0.0];
    let mut r = ResactNcisReport::default();
    let st = unsafe {
        resact_ncis_value(
            offsets.as_ptr(),
            2,
            rewards.as_ptr(),
            logged.as_ptr(),
            eval.as_ptr(),
            behavior.as_ptr(),
            2,
            1,
            1.0,
            1.0,
            &mut r,
        )
    };
    assert_eq!(st, ResactStatus::Ok);
    assert_eq!(r.ncis, 2.0);
    assert_eq!(r.n_trajectories, 2);

    let bad = [0usize, 2, 1];
    let st = unsafe {
        resact_ncis_value(
            bad.as_ptr(),
            2,
            rewards.as_ptr(),
            logged.as_ptr(),
            eval.as_ptr(),
            behavior.as_ptr(),
            2,
            1,
            1.0,
            1.0,
            &mut r,
        )
    };
    assert_eq!(st, ResactStatus::InvalidArgument);
}

#[test]
fn rewards_match_the_library() {
    let mut level = 9u8;
    unsafe {
        assert_eq!(resact_reward_return_time(2.0, 10.0, 8.0, &mut level), ResactStatus::Ok);
        assert_eq!(level, reward_return_time(2.0, 10.0, 8.0).unwrap());
        assert_eq!(resact_reward_return_time(0.0, 10.0, 8.0, &mut level), ResactStatus::Env);
        assert!(last_error().contains("positive"));
        assert_eq!(resact_reward_session_length(7, 3.0, &mut level), ResactStatus::Ok);
        assert_eq!(level, reward_session_length(7, 3.0));
        assert_eq!(resact_reward_session_length(7, 0.0, &mut level), ResactStatus::InvalidArgument);
    }
}

#[test]
fn bad_inputs_return_codes() {
    unsafe {
        let mut model = ptr::null_mut();
        assert_eq!(resact_model_load(ptr::null(), 0, &mut model), ResactStatus::NullPointer);
        let missing = CString::new("/nonexistent/checkpoint.bin").unwrap();
        assert_eq!(resact_model_load(missing.as_ptr(), 0, &mut model), ResactStatus::Io);
        assert!(model.is_null());
        assert_eq!(resact_model_state_dim(ptr::null()), 0);
        let mut out = [0.0; 1];
        assert_eq!(
            resact_model_act(ptr::null(), ptr::null(), 0, 0, out.as_mut_ptr(), 1),
            ResactStatus::NullPointer
        );
        let mut ds = ptr::null_mut();
        assert_ne!(resact_dataset_load(missing.as_ptr(), &mut ds), ResactStatus::Ok);
        resact_model_free(ptr::null_mut());
        resact_dataset_free(ptr::null_mut());
        let v = CStr::from_ptr(resact_version()).to_str().unwrap();
        assert_eq!(v, env!("CARGO_PKG_VERSION"));
    }
}
