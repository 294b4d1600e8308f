//! Single-file parameter store.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    8 bytes  "RESACTCK"
//! version  u32      1
//! mlen     u64      manifest length in bytes
//! manifest mlen     UTF-8 JSON (see `Manifest`)
//! payload           f64 LE values of every tensor, in manifest order
//! ```
//!
//! Networks record their layer sizes and activations, optimizers their step
//! counters and hyper-parameters; every float goes through the payload so a
//! save/load cycle is bit-exact.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::{Activation, AdamState, Dense, Mlp, NumericsError};

const MAGIC: &[u8; 8] = b"RESACTCK";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkEntry {
    pub sizes: Vec<usize>,
    pub activations: Vec<Activation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerEntry {
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub tensors: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    meta: serde_json::Value,
    networks: BTreeMap<String, NetworkEntry>,
    optimizers: BTreeMap<String, OptimizerEntry>,
    tensors: Vec<TensorEntry>,
}

/// In-memory view of a checkpoint file.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorStore {
    pub meta: serde_json::Value,
    networks: BTreeMap<String, NetworkEntry>,
    optimizers: BTreeMap<String, OptimizerEntry>,
    tensors: BTreeMap<String, (Vec<usize>, Vec<f64>)>,
    order: Vec<String>,
}

impl Default for TensorStore {
    fn default() -> Self {
        TensorStore {
            meta: serde_json::Value::Null,
            networks: BTreeMap::new(),
            optimizers: BTreeMap::new(),
            tensors: BTreeMap::new(),
            order: Vec::new(),
        }
    }
}

impl TensorStore {
    pub fn new(meta: serde_json::Value) -> Self {
        TensorStore {
            meta,
            ..Default::default()
        }
    }

    pub fn put_tensor(&mut self, name: &str, shape: Vec<usize>, data: Vec<f64>) {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        if self.tensors.insert(name.to_string(), (shape, data)).is_none() {
            self.order.push(name.to_string());
        }
    }

    pub fn tensor(&self, name: &str) -> Result<&(Vec<usize>, Vec<f64>), NumericsError> {
        self.tensors
            .get(name)
            .ok_or_else(|| NumericsError::Checkpoint(format!("missing tensor `{name}`")))
    }

    pub fn put_vec(&mut self, name: &str, data: &[f64]) {
        self.put_tensor(name, vec![data.len()], data.to_vec());
    }

    pub fn vec(&self, name: &str) -> Result<Vec<f64>, NumericsError> {
        Ok(self.tensor(name)?.1.clone())
    }

    pub fn has_network(&self, name: &str) -> bool {
        self.networks.contains_key(name)
    }

    pub fn network_names(&self) -> impl Iterator<Item = &str> {
        self.networks.keys().map(String::as_str)
    }

    pub fn put_mlp(&mut self, name: &str, mlp: &Mlp) {
        self.networks.insert(
            name.to_string(),
            NetworkEntry {
                sizes: mlp.sizes(),
                activations: mlp.activations(),
            },
        );
        for (i, layer) in mlp.layers().iter().enumerate() {
            self.put_tensor(
                &format!("{name}/{i}/weight"),
                vec![layer.input_dim(), layer.output_dim()],
                layer.weight.iter().copied().collect(),
            );
            self.put_tensor(
                &format!("{name}/{i}/bias"),
                vec![layer.output_dim()],
                layer.bias.to_vec(),
            );
        }
    }

    pub fn mlp(&self, name: &str) -> Result<Mlp, NumericsError> {
        let entry = self
            .networks
            .get(name)
            .ok_or_else(|| NumericsError::Checkpoint(format!("missing network `{name}`")))?;
        let layers = entry
            .activations
            .iter()
            .enumerate()
            .map(|(i, &activation)| {
                let (wshape, w) = self.tensor(&format!("{name}/{i}/weight"))?;
                let (_, b) = self.tensor(&format!("{name}/{i}/bias"))?;
                if wshape.len() != 2 || wshape[0] != entry.sizes[i] || wshape[1] != entry.sizes[i + 1]
                {
                    return Err(NumericsError::Checkpoint(format!(
                        "layer {i} of `{name}` has shape {wshape:?}, manifest says {}×{}",
                        entry.sizes[i],
                        entry.sizes[i + 1]
                    )));
                }
                Ok(Dense {
                    weight: Array2::from_shape_vec((wshape[0], wshape[1]), w.clone())
                        .map_err(|e| NumericsError::Checkpoint(e.to_string()))?,
                    bias: Array1::from_vec(b.clone()),
                    activation,
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Mlp::from_layers(layers)
    }

    pub fn put_adam(&mut self, name: &str, state: &AdamState) {
        self.optimizers.insert(
            name.to_string(),
            OptimizerEntry {
                step: state.step,
                beta1: state.beta1,
                beta2: state.beta2,
                eps: state.eps,
                tensors: state.first_moment.len(),
            },
        );
        for (i, (m, v)) in state
            .first_moment
            .iter()
            .zip(&state.second_moment)
            .enumerate()
        {
            self.put_vec(&format!("{name}/m{i}"), m);
            self.put_vec(&format!("{name}/v{i}"), v);
        }
    }

    pub fn adam(&self, name: &str) -> Result<AdamState, NumericsError> {
        let entry = self
            .optimizers
            .get(name)
            .ok_or_else(|| NumericsError::Checkpoint(format!("missing optimizer `{name}`")))?;
        let mut first_moment = Vec::with_capacity(entry.tensors);
        let mut second_moment = Vec::with_capacity(entry.tensors);
        for i in 0..entry.tensors {
            first_moment.push(self.vec(&format!("{name}/m{i}"))?);
            second_moment.push(self.vec(&format!("{name}/v{i}"))?);
        }
        Ok(AdamState {
            first_moment,
            second_moment,
            step: entry.step,
            beta1: entry.beta1,
            beta2: entry.beta2,
            eps: entry.eps,
        })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, NumericsError> {
        let manifest = Manifest {
            meta: self.meta.clone(),
            networks: self.networks.clone(),
            optimizers: self.optimizers.clone(),
            tensors: self
                .order
                .iter()
                .map(|n| TensorEntry {
                    name: n.clone(),
                    shape: self.tensors[n].0.clone(),
                })
                .collect(),
        };
        let manifest = serde_json::to_vec(&manifest)
            .map_err(|e| NumericsError::Checkpoint(e.to_string()))?;
        let payload: usize = self.tensors.values().map(|(_, d)| d.len()).sum();
        let mut out = Vec::with_capacity(20 + manifest.len() + 8 * payload);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
        out.extend_from_slice(&manifest);
        for name in &self.order {
            for v in &self.tensors[name].1 {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, NumericsError> {
        let bad = |m: &str| NumericsError::Checkpoint(m.to_string());
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("not a resact checkpoint"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != VERSION {
            return Err(bad(&format!("unsupported checkpoint version {version}")));
        }
        let mlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let body = &bytes[20..];
        if body.len() < mlen {
            return Err(bad("truncated manifest"));
        }
        let manifest: Manifest = serde_json::from_slice(&body[..mlen])
            .map_err(|e| NumericsError::Checkpoint(e.to_string()))?;
        let mut payload = &body[mlen..];
        let mut store = TensorStore::new(manifest.meta);
        store.networks = manifest.networks;
        store.optimizers = manifest.optimizers;
        for entry in manifest.tensors {
            let n: usize = entry.shape.iter().product();
            if payload.len() < 8 * n {
                return Err(bad(&format!("truncated payload at `{}`", entry.name)));
            }
            let data = payload[..8 * n]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            payload = &payload[8 * n..];
            store.put_tensor(&entry.name, entry.shape, data);
        }
        if !payload.is_empty() {
            return Err(bad("trailing bytes after payload"));
        }
        Ok(store)
    }

    pub fn save(&self, path: &Path) -> Result<(), NumericsError> {
        let bytes = self.to_bytes()?;
        let mut f = fs::File::create(path)?;
        f.write_all(&bytes)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, NumericsError> {
        let mut bytes = Vec::new();
        fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut net = Mlp::new(&[5, 7, 3], Activation::Tanh, Activation::Identity, &mut rng);
        net.layers_mut()[0].weight[[0, 0]] = -0.0;
        net.layers_mut()[0].weight[[0, 1]] = f64::MIN_POSITIVE / 4.0;
        let mut adam = AdamState::new(&net);
        adam.step = 42;
        adam.first_moment[1][2] = 1e-300;

        let mut store = TensorStore::new(serde_json::json!({"kind": "test"}));
        store.put_mlp("net", &net);
        store.put_adam("net_opt", &adam);
        store.put_vec("stats", &[1.0 / 3.0, std::f64::consts::PI]);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.bin");
        store.save(&path).unwrap();
        let back = TensorStore::load(&path).unwrap();
        assert_eq!(back, store);
        let net2 = back.mlp("net").unwrap();
        let bits = |m: &Mlp| m.flat_params().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&net2), bits(&net));
        assert_eq!(back.adam("net_opt").unwrap(), adam);
        assert_eq!(back.to_bytes().unwrap(), store.to_bytes().unwrap());
    }

    #[test]
    fn rejects_corrupt_input() {
        assert!(TensorStore::from_bytes(b"garbage").is_err());
        let mut store = TensorStore::default();
        store.put_vec("x", &[1.0, 2.0]);
        let bytes = store.to_bytes().unwrap();
        assert!(TensorStore::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(TensorStore::from_bytes(&extra).is_err());
        assert!(store.mlp("missing").is_err());
    }
}
