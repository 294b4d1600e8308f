use std::fs::File;
use std::io::{BufReader, Read};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use resact::baselines::Td3Params;
use resact::env::{EnvConfig, STATS_FILE, TRANSITIONS_FILE};
use resact::evaluator::EvalConfig;
use resact::trainer::TrainConfig;

use crate::ConfigArgs;

/// Every knob a job reads, merged from defaults, the config file and flags.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub env: EnvConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub td3: Td3Params,
}

/// Same shape with every section optional, so a file may set only some.
#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct PartialRunConfig {
    env: Option<serde_json::Value>,
    train: Option<serde_json::Value>,
    eval: Option<serde_json::Value>,
    td3: Option<serde_json::Value>,
}

/// Overlays `patch` onto `base` key by key (objects merge, anything else replaces).
fn overlay<T: Serialize + serde::de::DeserializeOwned>(base: T, patch: Option<serde_json::Value>) -> anyhow::Result<T> {
    let Some(patch) = patch else { return Ok(base) };
    let mut value = serde_json::to_value(base)?;
    match (&mut value, patch) {
        (serde_json::Value::Object(dst), serde_json::Value::Object(src)) => {
            for (k, v) in src {
                if !dst.contains_key(&k) {
                    bail!("unknown config key `{k}`");
                }
                dst.insert(k, v);
            }
        }
        (_, other) => bail!("config section must be an object, got {other}"),
    }
    Ok(serde_json::from_value(value)?)
}

impl RunConfig {
    pub fn load(args: &ConfigArgs) -> anyhow::Result<Self> {
        let train = match args.profile.as_str() {
            "desk" => TrainConfig::desk(),
            "full" => TrainConfig::default(),
            other => bail!("unknown profile `{other}` (expected desk or full)"),
        };
        let partial: PartialRunConfig = match &args.config {
            Some(path) => {
                let f = File::open(path).with_context(|| format!("opening config {}", path.display()))?;
                serde_json::from_reader(BufReader::new(f)).with_context(|| format!("parsing config {}", path.display()))?
            }
            None => PartialRunConfig::default(),
        };
        Ok(RunConfig {
            env: overlay(EnvConfig::default(), partial.env)?,
            train: overlay(train, partial.train)?,
            eval: overlay(EvalConfig::default(), partial.eval)?,
            td3: overlay(Td3Params::default(), partial.td3)?,
        })
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        self.env.validate()?;
        self.train.validate()?;
        self.eval.validate()?;
        self.td3.validate()?;
        Ok(())
    }
}

/// Root for outputs whose path was not given explicitly.
pub fn run_root() -> PathBuf {
    std::env::var_os("RESACT_RUN_DIR").map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs"))
}

/// SHA-256 over the dataset's stats and transitions files, in that order.
pub fn dataset_hash(dir: &Path) -> anyhow::Result<String> {
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    for name in [STATS_FILE, TRANSITIONS_FILE] {
        let path = dir.join(name);
        let mut f = File::open(&path).with_context(|| format!("reading {}", path.display()))?;
        loop {
            let n = f.read(&mut buf)?;
            if n == 0 {
                break;
            }
            hasher.update(&buf[..n]);
        }
    }
    Ok(hex::encode(hasher.finalize()))
}
