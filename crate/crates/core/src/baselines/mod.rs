//! Comparison learners on the same data, numerics and checkpoint format:
//! behavior cloning, CVAE imitation and a direct TD3 actor.

mod bc;
mod cvae_bc;
mod td3;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2};
use rand::RngCore;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub use bc::train_bc;
pub use cvae_bc::{train_cvae_bc, CvaePolicy};
pub use td3::{train_td3_direct, Td3Params};

use crate::env::LoggedDataset;
use crate::numerics::{Mlp, TensorStore};
use crate::policy::{ActionModel, ServingPolicy};
use crate::trainer::{check_inputs, fit_normalizer, MetricsRow, ModelBundle, ObsNormalizer, TrainConfig, TrainOptions, TrainingData};
use crate::{Error, Result};

/// Learning method selected on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Resact,
    Bc,
    CvaeBc,
    Td3,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Resact, Method::Bc, Method::CvaeBc, Method::Td3];

    /// Also the `kind` tag stored in checkpoints.
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Resact => "resact",
            Method::Bc => "bc",
            Method::CvaeBc => "cvae_bc",
            Method::Td3 => "td3",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown method `{s}` (expected resact, bc, cvae_bc or td3)")))
    }
}

/// A trained model together with its logged metrics.
pub struct Trained<M> {
    pub model: M,
    pub metrics: Vec<MetricsRow>,
}

/// Deterministic actor `s → tanh(·)`, used by both BC and TD3.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectPolicy {
    pub method: Method,
    pub normalizer: ObsNormalizer,
    pub net: Mlp,
}

impl DirectPolicy {
    pub fn act(&self, state: &[f64]) -> Result<Vec<f64>> {
        let x = ArrayView2::from_shape((1, state.len()), state).map_err(|e| Error::Config(e.to_string()))?;
        Ok(self.act_batch_det(x)?.row(0).to_vec())
    }

    fn act_batch_det(&self, states: ArrayView2<f64>) -> Result<Array2<f64>> {
        let x = self.normalizer.transform(states)?;
        Ok(self.net.predict(x.view())?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let store = TensorStore::load(path)?;
        let method: Method = meta(&store, "kind")?;
        if !matches!(method, Method::Bc | Method::Td3) {
            return Err(Error::Checkpoint(format!("`{method}` checkpoints do not hold a direct actor")));
        }
        Ok(DirectPolicy {
            method,
            normalizer: load_normalizer(&store)?,
            net: store.mlp("policy")?,
        })
    }
}

impl ActionModel for DirectPolicy {
    fn name(&self) -> &str {
        self.method.as_str()
    }

    fn state_dim(&self) -> usize {
        self.normalizer.dim()
    }

    fn action_dim(&self) -> usize {
        self.net.output_dim()
    }

    fn act_batch(&self, states: ArrayView2<f64>, _rng: &mut dyn RngCore) -> Result<Array2<f64>> {
        self.act_batch_det(states)
    }
}

/// Loads any checkpoint written by `train` or a baseline. `n_estimators`
/// overrides the stored candidate count for ResAct.
pub fn load_model(path: &Path, n_estimators: Option<usize>) -> Result<Box<dyn ActionModel>> {
    let store = TensorStore::load(path)?;
    let method: Method = meta(&store, "kind")?;
    Ok(match method {
        Method::Resact => {
            let policy = ServingPolicy::from_bundle(&ModelBundle::from_store(&store)?);
            match n_estimators {
                Some(0) => return Err(Error::Config("n_estimators must be positive".into())),
                Some(n) => Box::new(policy.with_estimators(n)),
                None => Box::new(policy),
            }
        }
        Method::Bc | Method::Td3 => Box::new(DirectPolicy::load(path)?),
        Method::CvaeBc => Box::new(CvaePolicy::load(path)?),
    })
}

pub(crate) fn meta<T: DeserializeOwned>(store: &TensorStore, key: &str) -> Result<T> {
    let v = store
        .meta
        .get(key)
        .cloned()
        .ok_or_else(|| Error::Checkpoint(format!("missing `{key}` in checkpoint metadata")))?;
    serde_json::from_value(v).map_err(|e| Error::Checkpoint(format!("bad `{key}`: {e}")))
}

pub(crate) fn new_store(method: Method, config: &TrainConfig, iteration: usize, normalizer: &ObsNormalizer) -> TensorStore {
    let mut store = TensorStore::new(serde_json::json!({
        "kind": method,
        "config": config,
        "iteration": iteration,
    }));
    store.put_vec("normalizer/mean", &normalizer.mean);
    store.put_vec("normalizer/std", &normalizer.std);
    store
}

fn load_normalizer(store: &TensorStore) -> Result<ObsNormalizer> {
    Ok(ObsNormalizer {
        mean: store.vec("normalizer/mean")?,
        std: store.vec("normalizer/std")?,
    })
}

/// Validates inputs and builds the shared pieces every baseline starts from.
fn prepare(
    dataset: &LoggedDataset,
    config: &TrainConfig,
    opts: &TrainOptions,
) -> Result<(TrainingData, ObsNormalizer, ChaCha8Rng)> {
    check_inputs(dataset, config, opts)?;
    let normalizer = fit_normalizer(dataset, config.normalize_observations);
    let data = TrainingData::new(dataset, &normalizer)?;
    Ok((data, normalizer, ChaCha8Rng::seed_from_u64(config.seed)))
}

/// `[in, hidden..., out]` layer sizes.
fn sizes(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut s = vec![input];
    s.extend_from_slice(hidden);
    s.push(output);
    s
}
