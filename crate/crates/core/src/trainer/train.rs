use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{state_matrix, train_step, Batch, ModelBundle, ObsNormalizer, StateDims, StepLosses, StepNoise, TrainConfig, TrainingData};
use crate::env::LoggedDataset;
use crate::evaluator::{evaluate_model, EvalConfig};
use crate::policy::{ActionModel, ServingPolicy};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub iteration: usize,
    pub rec: f64,
    pub td1: f64,
    pub td2: f64,
    pub exp: f64,
    pub con: f64,
    pub mean_q: f64,
    pub val_ncis: Option<f64>,
}

pub const METRICS_HEADER: &str = "iteration,rec,td1,td2,exp,con,mean_q,val_ncis";

impl MetricsRow {
    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.iteration,
            self.rec,
            self.td1,
            self.td2,
            self.exp,
            self.con,
            self.mean_q,
            self.val_ncis.map(|v| v.to_string()).unwrap_or_default()
        )
    }
}

pub fn write_metrics_csv(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{METRICS_HEADER}")?;
    for r in rows {
        writeln!(w, "{}", r.csv())?;
    }
    w.flush()?;
    Ok(())
}

/// Validation data with precomputed behavior means.
pub struct Validation<'a> {
    pub dataset: &'a LoggedDataset,
    pub behavior_means: &'a Array2<f64>,
    pub config: EvalConfig,
}

#[derive(Default)]
pub struct TrainOptions<'a> {
    pub validation: Option<Validation<'a>>,
    /// Receives `metrics.csv`, `config.json` and checkpoints.
    pub out_dir: Option<PathBuf>,
}

pub struct TrainOutcome {
    pub bundle: ModelBundle,
    pub metrics: Vec<MetricsRow>,
}

pub fn dims_of(ds: &LoggedDataset) -> StateDims {
    let cfg = &ds.stats.config;
    StateDims {
        session_dim: cfg.session_dim(),
        request_dim: cfg.request_dim(),
        action_dim: cfg.action_dim,
    }
}

/// Fits the observation normalizer on the training states (or the identity when disabled).
pub fn fit_normalizer(ds: &LoggedDataset, enabled: bool) -> ObsNormalizer {
    let states = state_matrix(ds);
    if enabled {
        ObsNormalizer::fit(states.view())
    } else {
        ObsNormalizer::identity(states.ncols())
    }
}

/// Minibatch indices drawn uniformly with replacement.
pub(crate) fn sample_indices<R: Rng + ?Sized>(n: usize, batch: usize, rng: &mut R) -> Vec<usize> {
    (0..batch).map(|_| rng.gen_range(0..n)).collect()
}

/// Averages step losses over a logging window.
#[derive(Default)]
pub(crate) struct Window {
    sum: StepLosses,
    count: usize,
}

impl Window {
    pub(crate) fn add(&mut self, l: &StepLosses) {
        self.sum.rec += l.rec;
        self.sum.td1 += l.td1;
        self.sum.td2 += l.td2;
        self.sum.exp += l.exp;
        self.sum.con += l.con;
        self.sum.mean_q += l.mean_q;
        self.count += 1;
    }

    pub(crate) fn flush(&mut self, iteration: usize, val_ncis: Option<f64>) -> MetricsRow {
        let k = self.count.max(1) as f64;
        let s = std::mem::take(&mut self.sum);
        self.count = 0;
        MetricsRow {
            iteration,
            rec: s.rec / k,
            td1: s.td1 / k,
            td2: s.td2 / k,
            exp: s.exp / k,
            con: s.con / k,
            mean_q: s.mean_q / k,
            val_ncis,
        }
    }
}

/// Writes the run config sidecar.
pub fn write_config_sidecar(dir: &Path, value: &impl Serialize) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut w = BufWriter::new(File::create(dir.join("config.json"))?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// One method's iteration and serving snapshot, driven by [`run_learner`].
pub trait Learner {
    fn step(&mut self, data: &TrainingData, rng: &mut ChaCha8Rng) -> Result<StepLosses>;
    fn policy(&self) -> Box<dyn ActionModel + '_>;
    fn save(&self, path: &Path) -> Result<()>;
}

/// Shared loop: `total` iterations with metric rows every `log_interval`,
/// validation NCIS and checkpoints every `eval_interval`.
pub fn run_learner(
    learner: &mut dyn Learner,
    data: &TrainingData,
    config: &TrainConfig,
    opts: &TrainOptions,
    total: usize,
) -> Result<Vec<MetricsRow>> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let mut metrics = Vec::new();
    let mut window = Window::default();
    for it in 1..=total {
        let losses = learner.step(data, &mut rng)?;
        window.add(&losses);
        let eval_now = config.eval_interval > 0 && (it % config.eval_interval == 0 || it == total);
        let val_ncis = match (&opts.validation, eval_now) {
            (Some(v), true) => {
                let policy = learner.policy();
                let r = evaluate_model(policy.as_ref(), v.dataset, v.behavior_means.view(), &v.config, config.seed)?;
                Some(r.ncis)
            }
            _ => None,
        };
        if it % config.log_interval == 0 || it == total || val_ncis.is_some() {
            metrics.push(window.flush(it, val_ncis));
        }
        if eval_now {
            if let Some(dir) = &opts.out_dir {
                learner.save(&dir.join(format!("checkpoint_{it:06}.bin")))?;
            }
        }
    }
    if let Some(dir) = &opts.out_dir {
        write_metrics_csv(&dir.join("metrics.csv"), &metrics)?;
        learner.save(&dir.join("checkpoint.bin"))?;
    }
    Ok(metrics)
}

/// Checks shared by every method before any work starts.
pub fn check_inputs(dataset: &LoggedDataset, config: &TrainConfig, opts: &TrainOptions) -> Result<()> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::Config("training dataset is empty".into()));
    }
    if let Some(v) = &opts.validation {
        v.config.validate()?;
        if v.dataset.stats.config.action_dim != dataset.stats.config.action_dim
            || v.dataset.stats.config.request_dim() != dataset.stats.config.request_dim()
        {
            return Err(Error::Config("validation data has a different state or action layout".into()));
        }
    }
    if let Some(dir) = &opts.out_dir {
        write_config_sidecar(dir, config)?;
    }
    Ok(())
}

struct ResActLearner {
    bundle: ModelBundle,
    batch_size: usize,
}

impl Learner for ResActLearner {
    fn step(&mut self, data: &TrainingData, rng: &mut ChaCha8Rng) -> Result<StepLosses> {
        let idx = sample_indices(data.len(), self.batch_size, rng);
        let batch: Batch = data.batch(&idx);
        let noise = StepNoise::draw(&self.bundle, batch.len(), rng);
        Ok(train_step(&mut self.bundle, &batch, &noise)?.losses)
    }

    fn policy(&self) -> Box<dyn ActionModel + '_> {
        Box::new(ServingPolicy::from_bundle(&self.bundle))
    }

    fn save(&self, path: &Path) -> Result<()> {
        self.bundle.save(path)
    }
}

/// Runs the full learning loop on `dataset`.
pub fn train(dataset: &LoggedDataset, config: &TrainConfig, opts: &TrainOptions) -> Result<TrainOutcome> {
    if config.reward_head == crate::regularizers::RewardHead::Categorical
        && dataset.transitions.iter().any(|t| t.r.fract() != 0.0)
    {
        return Err(Error::Config("the categorical reward head needs integer rewards".into()));
    }
    check_inputs(dataset, config, opts)?;
    let mut init_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let normalizer = fit_normalizer(dataset, config.normalize_observations);
    let data = TrainingData::new(dataset, &normalizer)?;
    let bundle = ModelBundle::new(config, dims_of(dataset), normalizer, &mut init_rng)?;
    let total = config.total_iterations(data.len());
    let mut learner = ResActLearner {
        bundle,
        batch_size: config.batch_size,
    };
    let metrics = run_learner(&mut learner, &data, config, opts, total)?;
    Ok(TrainOutcome {
        bundle: learner.bundle,
        metrics,
    })
}
