use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process;

use anyhow::{bail, Context};
use log::info;
use ndarray::Array2;
use serde::Serialize;

use resact::baselines::{load_model, train_bc, train_cvae_bc, train_td3_direct, CvaePolicy, Method};
use resact::env::{generate_dataset, rollout_policy, BehaviorPolicy, LoggedDataset, Policy, Population, RandomPolicy, RewardMode};
use resact::evaluator::{evaluate_model, exact_behavior_means, ncis_value, BehaviorProxy};
use resact::policy::{ActionModel, ModelPolicy};
use resact::trainer::{action_matrix, train as train_resact, MetricsRow, TrainOptions, Validation};

use crate::run_config::{dataset_hash, run_root, RunConfig};
use crate::{EvalArgs, GenDataArgs, RolloutArgs, TrainArgs};

pub fn write_json(path: &Path, value: &impl Serialize) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn emit(out: Option<&Path>, value: &impl Serialize) -> anyhow::Result<()> {
    match out {
        Some(path) => write_json(path, value),
        None => {
            let mut out = std::io::stdout().lock();
            writeln!(out, "{}", serde_json::to_string_pretty(value)?)?;
            Ok(())
        }
    }
}

fn load_dataset(dir: &Path, mode: Option<RewardMode>) -> anyhow::Result<LoggedDataset> {
    let mut ds = LoggedDataset::load(dir).with_context(|| format!("loading dataset {}", dir.display()))?;
    if let Some(mode) = mode {
        ds.relabel(mode)?;
    }
    Ok(ds)
}

pub fn gen_data(a: GenDataArgs) -> anyhow::Result<()> {
    let mut rc = RunConfig::load(&a.cfg)?;
    if let Some(u) = a.users {
        rc.env.n_users = u;
    }
    if let Some(s) = a.sessions {
        rc.env.sessions_per_user = s;
    }
    if let Some(m) = a.reward_mode {
        rc.env.reward_mode = m;
    }
    rc.validate()?;
    let out = a.out.unwrap_or_else(|| run_root().join(format!("data-seed{}", a.seed)));
    let ds = generate_dataset(&rc.env, a.seed)?;
    ds.save(&out).with_context(|| format!("writing dataset to {}", out.display()))?;
    write_json(&out.join("run_config.json"), &rc)?;
    let s = &ds.stats;
    println!("{:<28}{:>12}", "users", ds.n_users());
    println!("{:<28}{:>12}", "sessions", s.n_sessions);
    println!("{:<28}{:>12}", "requests", s.n_transitions);
    println!("{:<28}{:>12.3}", "mean session length", s.mean_session_length);
    println!("{:<28}{:>12.3}", "mean return time (h)", s.mean_return_time);
    println!("{:<28}{:>12.3}", "return time p75 (h)", s.delta_p75);
    println!("{:<28}{:>12.4}", "mean reward per request", s.mean_reward);
    println!("{:<28}{:>12}", "reward mode", s.reward_mode.as_str());
    info!("dataset written to {}", out.display());
    Ok(())
}

#[derive(Serialize)]
struct RunRecord<'a> {
    method: Method,
    dataset: &'a Path,
    dataset_sha256: String,
    validation: Option<&'a Path>,
    validation_sha256: Option<String>,
    reward_mode: RewardMode,
}

pub fn train(a: TrainArgs) -> anyhow::Result<()> {
    let mut rc = RunConfig::load(&a.cfg)?;
    let t = &mut rc.train;
    if let Some(v) = a.seed {
        t.seed = v;
    }
    if let Some(v) = a.iterations {
        t.iterations = Some(v);
    }
    if let Some(v) = a.n_estimators {
        t.n_estimators = v;
    }
    if let Some(v) = a.w_exp {
        t.w_exp = v;
    }
    if let Some(v) = a.w_con {
        t.w_con = v;
    }
    if let Some(v) = a.eval_interval {
        t.eval_interval = v;
    }
    if let Some(v) = a.log_interval {
        t.log_interval = v;
    }
    rc.validate()?;
    if let Some(seeds) = &a.sweep {
        let root = a.out.clone().unwrap_or_else(|| run_root().join(format!("sweep-{}", a.method)));
        return sweep(seeds, &root);
    }
    let out = a
        .out
        .clone()
        .unwrap_or_else(|| run_root().join(format!("train-{}-seed{}", a.method, rc.train.seed)));
    let ds = load_dataset(&a.data, a.reward_mode)?;
    let val = a.val.as_deref().map(|p| load_dataset(p, a.reward_mode)).transpose()?;
    let means: Option<Array2<f64>> = val.as_ref().map(exact_behavior_means);
    let validation = match (&val, &means) {
        (Some(dataset), Some(behavior_means)) => Some(Validation {
            dataset,
            behavior_means,
            config: rc.eval,
        }),
        _ => None,
    };
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    write_json(&out.join("run_config.json"), &rc)?;
    write_json(
        &out.join("run.json"),
        &RunRecord {
            method: a.method,
            dataset: &a.data,
            dataset_sha256: dataset_hash(&a.data)?,
            validation: a.val.as_deref(),
            validation_sha256: a.val.as_deref().map(dataset_hash).transpose()?,
            reward_mode: ds.stats.reward_mode,
        },
    )?;
    let opts = TrainOptions {
        validation,
        out_dir: Some(out.clone()),
    };
    info!("training {} for {} iterations", a.method, rc.train.total_iterations(ds.len()));
    let metrics: Vec<MetricsRow> = match a.method {
        Method::Resact => train_resact(&ds, &rc.train, &opts)?.metrics,
        Method::Bc => train_bc(&ds, &rc.train, &opts)?.metrics,
        Method::CvaeBc => train_cvae_bc(&ds, &rc.train, &opts)?.metrics,
        Method::Td3 => train_td3_direct(&ds, &rc.train, rc.td3, &opts)?.metrics,
    };
    if let Some(last) = metrics.last() {
        info!("final: {}", last.csv());
    }
    info!("run written to {}", out.display());
    Ok(())
}

/// Re-runs this command once per seed as a child process.
fn sweep(seeds: &[u64], root: &Path) -> anyhow::Result<()> {
    let exe = std::env::current_exe()?;
    let mut base = Vec::new();
    let mut args = std::env::args().skip(1);
    while let Some(arg) = args.next() {
        let flag = arg.split('=').next().unwrap_or("");
        if matches!(flag, "--sweep" | "--seed" | "--out") {
            if !arg.contains('=') {
                args.next();
            }
            continue;
        }
        base.push(arg);
    }
    for seed in seeds {
        let dir = root.join(format!("seed-{seed}"));
        info!("sweep: seed {seed} → {}", dir.display());
        let status = process::Command::new(&exe)
            .args(&base)
            .arg("--seed")
            .arg(seed.to_string())
            .arg("--out")
            .arg(&dir)
            .status()?;
        if !status.success() {
            bail!("sweep run for seed {seed} failed ({status})");
        }
    }
    Ok(())
}

/// Loads the `--behavior-proxy` choice: `exact` or a checkpoint with a decoder.
fn proxy_means(spec: &str, ds: &LoggedDataset) -> anyhow::Result<(Array2<f64>, String)> {
    if spec == "exact" {
        let p = BehaviorProxy::Exact;
        return Ok((p.means(ds)?, p.label()));
    }
    let model = CvaePolicy::load(Path::new(spec)).with_context(|| format!("loading behavior proxy {spec}"))?;
    let p = BehaviorProxy::Model(&model);
    Ok((p.means(ds)?, format!("{}:{spec}", p.label())))
}

fn behavior_policy(ds: &LoggedDataset) -> BehaviorPolicy {
    let c = &ds.stats.config;
    BehaviorPolicy::new(c.action_dim, c.behavior_noise, c.noise_persistence)
}

pub fn eval(a: EvalArgs) -> anyhow::Result<()> {
    let rc = RunConfig::load(&a.cfg)?;
    rc.eval.validate()?;
    let ds = load_dataset(&a.data, a.reward_mode)?;
    let (bmeans, proxy_label) = proxy_means(&a.behavior_proxy, &ds)?;
    let model: Option<Box<dyn ActionModel>> = match &a.checkpoint {
        Some(path) => Some(load_model(path, a.n_estimators).with_context(|| format!("loading {}", path.display()))?),
        None => None,
    };
    let report = match &model {
        Some(m) => {
            if m.state_dim() != ds.stats.config.session_dim() + ds.stats.config.request_dim() {
                bail!("checkpoint state width {} does not match the dataset", m.state_dim());
            }
            evaluate_model(m.as_ref(), &ds, bmeans.view(), &rc.eval, a.seed)?
        }
        None => {
            let rewards: Vec<f64> = ds.transitions.iter().map(|t| t.r).collect();
            let exact = exact_behavior_means(&ds);
            ncis_value(ds.user_ranges(), &rewards, action_matrix(&ds).view(), exact.view(), bmeans.view(), &rc.eval)?
        }
    };
    let mut out = serde_json::to_value(&report)?;
    let fields = out.as_object_mut().expect("report is an object");
    fields.insert("method".into(), model.as_ref().map(|m| m.name()).unwrap_or("behavior").into());
    fields.insert("checkpoint".into(), serde_json::to_value(&a.checkpoint)?);
    fields.insert("n_estimators".into(), serde_json::to_value(a.n_estimators)?);
    fields.insert("behavior_proxy".into(), proxy_label.into());
    fields.insert("reward_mode".into(), ds.stats.reward_mode.as_str().into());
    fields.insert("dataset_sha256".into(), dataset_hash(&a.data)?.into());
    fields.insert("seed".into(), a.seed.into());
    if a.true_rollout {
        let pop = Population::from_dataset(&ds);
        let sessions = ds.stats.config.sessions_per_user;
        let mode = ds.stats.reward_mode;
        let summary = match &model {
            Some(m) => rollout_policy(&mut ModelPolicy { model: m.as_ref() }, &pop, sessions, rc.eval.gamma, mode, a.seed),
            None => rollout_policy(&mut behavior_policy(&ds), &pop, sessions, rc.eval.gamma, mode, a.seed),
        };
        fields.insert("true_rollout".into(), serde_json::to_value(summary)?);
        fields.insert(
            "logged".into(),
            serde_json::json!({
                "mean_session_length": ds.stats.mean_session_length,
                "mean_return_time": ds.stats.mean_return_time,
            }),
        );
    }
    emit(a.out.as_deref(), &out)
}

pub fn rollout(a: RolloutArgs) -> anyhow::Result<()> {
    if !(0.0..=1.0).contains(&a.gamma) {
        bail!("gamma must lie in [0, 1]");
    }
    let ds = load_dataset(&a.data, a.reward_mode)?;
    let pop = Population::from_dataset(&ds);
    let sessions = a.sessions.unwrap_or(ds.stats.config.sessions_per_user);
    let mode = ds.stats.reward_mode;
    let model;
    let mut policy: Box<dyn Policy + '_> = match a.policy.as_str() {
        "behavior" => Box::new(behavior_policy(&ds)),
        "random" => Box::new(RandomPolicy {
            action_dim: ds.stats.config.action_dim,
        }),
        path => {
            model = load_model(&PathBuf::from(path), a.n_estimators).with_context(|| format!("loading {path}"))?;
            Box::new(ModelPolicy { model: model.as_ref() })
        }
    };
    let summary = rollout_policy(policy.as_mut(), &pop, sessions, a.gamma, mode, a.seed);
    let mut value = serde_json::to_value(summary)?;
    value["policy"] = a.policy.clone().into();
    value["reward_mode"] = mode.as_str().into();
    emit(a.out.as_deref(), &value)
}
