use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::env::LoggedDataset;
use crate::{Error, Result};

/// Affine per-feature standardization of `[s_h | s_l]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObsNormalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// A state matrix that remembers whether it has been normalized.
#[derive(Debug, Clone, PartialEq)]
pub struct Observations {
    values: Array2<f64>,
    normalized: bool,
}

impl Observations {
    pub fn raw(values: Array2<f64>) -> Self {
        Observations {
            values,
            normalized: false,
        }
    }

    pub fn values(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }
}

impl ObsNormalizer {
    pub fn identity(dim: usize) -> Self {
        ObsNormalizer {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    /// Per-column mean and std; near-constant columns keep unit scale.
    pub fn fit(states: ArrayView2<f64>) -> Self {
        let n = states.nrows().max(1) as f64;
        let mean: Vec<f64> = states.columns().into_iter().map(|c| c.sum() / n).collect();
        let std = states
            .columns()
            .into_iter()
            .zip(&mean)
            .map(|(c, m)| {
                let v = c.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
                if v.sqrt() > 1e-8 {
                    v.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        ObsNormalizer { mean, std }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, obs: Observations) -> Result<Observations> {
        if obs.normalized {
            return Err(Error::DoubleNormalization);
        }
        Ok(Observations {
            values: self.transform(obs.values.view())?,
            normalized: true,
        })
    }

    pub fn transform(&self, states: ArrayView2<f64>) -> Result<Array2<f64>> {
        if states.ncols() != self.dim() {
            return Err(Error::Config(format!(
                "state width {} does not match normalizer width {}",
                states.ncols(),
                self.dim()
            )));
        }
        let mut out = states.to_owned();
        for (j, mut col) in out.columns_mut().into_iter().enumerate() {
            let (m, s) = (self.mean[j], self.std[j]);
            col.mapv_inplace(|x| (x - m) / s);
        }
        Ok(out)
    }

    pub fn inverse(&self, states: ArrayView2<f64>) -> Array2<f64> {
        let mut out = states.to_owned();
        for (j, mut col) in out.columns_mut().into_iter().enumerate() {
            let (m, s) = (self.mean[j], self.std[j]);
            col.mapv_inplace(|x| x * s + m);
        }
        out
    }
}

/// Raw `[s_h | s_l]` rows of every logged transition.
pub fn state_matrix(ds: &LoggedDataset) -> Array2<f64> {
    let cfg = &ds.stats.config;
    let width = cfg.session_dim() + cfg.request_dim();
    let mut out = Array2::zeros((ds.len(), width));
    for (mut row, t) in out.rows_mut().into_iter().zip(&ds.transitions) {
        for (dst, src) in row.iter_mut().zip(t.s_h.iter().chain(&t.s_l)) {
            *dst = *src;
        }
    }
    out
}

pub fn action_matrix(ds: &LoggedDataset) -> Array2<f64> {
    let d = ds.stats.config.action_dim;
    let mut out = Array2::zeros((ds.len(), d));
    for (mut row, t) in out.rows_mut().into_iter().zip(&ds.transitions) {
        row.assign(&ndarray::ArrayView1::from(&t.a[..]));
    }
    out
}

/// Dense, normalized arrays for minibatch training.
#[derive(Debug, Clone)]
pub struct TrainingData {
    pub states: Array2<f64>,
    pub actions: Array2<f64>,
    pub rewards: Array1<f64>,
    pub done: Array1<f64>,
    /// Successor states; zero rows for terminal transitions.
    pub next_states: Array2<f64>,
}

impl TrainingData {
    pub fn new(ds: &LoggedDataset, normalizer: &ObsNormalizer) -> Result<Self> {
        let raw = state_matrix(ds);
        let states = normalizer
            .apply(Observations::raw(raw))?
            .values
            .to_owned();
        let mut next_states = Array2::zeros(states.raw_dim());
        for i in 0..ds.len() {
            if ds.next_of(i).is_some() {
                next_states.row_mut(i).assign(&states.row(i + 1));
            }
        }
        Ok(TrainingData {
            actions: action_matrix(ds),
            rewards: ds.transitions.iter().map(|t| t.r).collect(),
            done: ds.transitions.iter().map(|t| if t.done { 1.0 } else { 0.0 }).collect(),
            next_states,
            states,
        })
    }

    pub fn len(&self) -> usize {
        self.states.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn batch(&self, idx: &[usize]) -> Batch {
        Batch {
            states: self.states.select(ndarray::Axis(0), idx),
            actions: self.actions.select(ndarray::Axis(0), idx),
            rewards: self.rewards.select(ndarray::Axis(0), idx),
            done: self.done.select(ndarray::Axis(0), idx),
            next_states: self.next_states.select(ndarray::Axis(0), idx),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Batch {
    pub states: Array2<f64>,
    pub actions: Array2<f64>,
    pub rewards: Array1<f64>,
    pub done: Array1<f64>,
    pub next_states: Array2<f64>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.states.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn normalization_round_trips_and_rejects_reapplication() {
        let x = array![[1.0, 5.0, 3.0], [3.0, 5.0, -1.0], [2.0, 5.0, 1.0]];
        let norm = ObsNormalizer::fit(x.view());
        assert_eq!(norm.std[1], 1.0);
        let once = norm.apply(Observations::raw(x.clone())).unwrap();
        assert!(once.is_normalized());
        let col0: Vec<f64> = once.values().column(0).to_vec();
        assert!((col0.iter().sum::<f64>()).abs() < 1e-12);
        let back = norm.inverse(once.values());
        assert!((&back - &x).iter().all(|v| v.abs() < 1e-12));
        assert!(matches!(norm.apply(once), Err(Error::DoubleNormalization)));
    }
}
