//! Serving-time policies: candidate generation, residual correction and critic selection.

use std::io::{BufRead, Write};

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::actor::ResidualActor;
use crate::critic::q_values;
use crate::cvae::{join, standard_normal};
use crate::env::{Policy, UserProfile, UserState};
use crate::numerics::Mlp;
use crate::trainer::{ModelBundle, ObsNormalizer};
use crate::{Error, Result};

/// A deterministic-given-RNG mapping from raw states `[s_h | s_l]` to actions.
pub trait ActionModel {
    fn name(&self) -> &str;
    fn state_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    fn act_batch(&self, states: ArrayView2<f64>, rng: &mut dyn RngCore) -> Result<Array2<f64>>;
}

/// Adapts any [`ActionModel`] to the simulator's [`Policy`] interface.
pub struct ModelPolicy<'a> {
    pub model: &'a dyn ActionModel,
}

impl Policy for ModelPolicy<'_> {
    fn act(&mut self, _profile: &UserProfile, state: &UserState, rng: &mut dyn RngCore) -> Vec<f64> {
        let mut row = state.s_h.clone();
        row.extend_from_slice(&state.s_l);
        let x = Array2::from_shape_vec((1, row.len()), row).expect("one row");
        self.model
            .act_batch(x.view(), rng)
            .expect("state width is fixed by the environment")
            .row(0)
            .to_vec()
    }
}

/// How the final action is formed from the improved candidates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    /// Candidate with the highest Q1; ties go to the lowest index.
    #[default]
    Argmax,
    /// Mean of the candidates (marginalized policy baseline).
    MarginalMean,
}

/// Only the pieces needed at serving time: decoder, residual actor and Q1.
#[derive(Debug, Clone, PartialEq)]
pub struct ServingPolicy {
    pub normalizer: ObsNormalizer,
    pub decoder: Mlp,
    pub actor: ResidualActor,
    pub q1: Mlp,
    pub n_estimators: usize,
    pub selection: Selection,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selected {
    pub action: Vec<f64>,
    pub index: usize,
    pub q: f64,
    pub candidate_q: Vec<f64>,
}

impl ServingPolicy {
    pub fn from_bundle(bundle: &ModelBundle) -> Self {
        ServingPolicy {
            normalizer: bundle.normalizer.clone(),
            decoder: bundle.cvae.decoder.clone(),
            actor: bundle.actor.clone(),
            q1: bundle.critic.q1.clone(),
            n_estimators: bundle.config.n_estimators,
            selection: Selection::Argmax,
        }
    }

    pub fn with_estimators(mut self, n: usize) -> Self {
        self.n_estimators = n;
        self
    }

    pub fn latent_dim(&self) -> usize {
        self.decoder.input_dim() - self.normalizer.dim()
    }

    /// Scores the improved candidates built from explicit latents (one per row)
    /// for a single raw state.
    pub fn act_with_latents(&self, state: &[f64], latents: ArrayView2<f64>) -> Result<Selected> {
        if latents.nrows() == 0 {
            return Err(Error::Config("need at least one candidate latent".into()));
        }
        let x = self
            .normalizer
            .transform(ArrayView2::from_shape((1, state.len()), state).map_err(|e| Error::Config(e.to_string()))?)?;
        let n = latents.nrows();
        let xs = x.broadcast((n, x.ncols())).expect("row broadcasts").to_owned();
        let (actions, q) = self.candidates(xs.view(), latents)?;
        let index = argmax(q.as_slice().expect("contiguous"));
        let action = match self.selection {
            Selection::Argmax => actions.row(index).to_vec(),
            Selection::MarginalMean => actions.mean_axis(Axis(0)).expect("n ≥ 1").to_vec(),
        };
        Ok(Selected {
            action,
            index,
            q: q[index],
            candidate_q: q.to_vec(),
        })
    }

    /// Improved candidates and their Q1 values for normalized states.
    fn candidates(&self, xs: ArrayView2<f64>, latents: ArrayView2<f64>) -> Result<(Array2<f64>, Array1<f64>)> {
        let base = self.decoder.predict(join(xs, latents)?.view())?;
        let actions = self.actor.improved_action(xs, base.view(), None)?;
        let q = q_values(&self.q1, xs, actions.view())?;
        Ok((actions, q))
    }

    pub fn act(&self, state: &[f64], rng: &mut dyn RngCore) -> Result<Vec<f64>> {
        let latents = standard_normal(self.n_estimators, self.latent_dim(), rng);
        Ok(self.act_with_latents(state, latents.view())?.action)
    }
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

impl ActionModel for ServingPolicy {
    fn name(&self) -> &str {
        "resact"
    }

    fn state_dim(&self) -> usize {
        self.normalizer.dim()
    }

    fn action_dim(&self) -> usize {
        self.decoder.output_dim()
    }

    /// Latents are drawn state by state, so the result equals calling
    /// [`ServingPolicy::act`] on each row with the same RNG.
    fn act_batch(&self, states: ArrayView2<f64>, rng: &mut dyn RngCore) -> Result<Array2<f64>> {
        let b = states.nrows();
        let n = self.n_estimators;
        let x = self.normalizer.transform(states)?;
        let latents = standard_normal(b * n, self.latent_dim(), rng);
        let xs = x.select(Axis(0), &(0..b * n).map(|i| i / n).collect::<Vec<_>>());
        let (actions, q) = self.candidates(xs.view(), latents.view())?;
        let mut out = Array2::zeros((b, actions.ncols()));
        for i in 0..b {
            let block = i * n..(i + 1) * n;
            let qs = q.slice(ndarray::s![block.clone()]);
            let row = match self.selection {
                Selection::Argmax => {
                    let k = argmax(qs.as_slice().expect("contiguous"));
                    actions.row(i * n + k).to_owned()
                }
                Selection::MarginalMean => actions
                    .slice(ndarray::s![block, ..])
                    .mean_axis(Axis(0))
                    .expect("n ≥ 1"),
            };
            out.row_mut(i).assign(&row);
        }
        Ok(out)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct StateRecord {
    s_h: Vec<f64>,
    s_l: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ActionRecord {
    a: Vec<f64>,
}

/// Reads `{s_h, s_l}` lines (extra fields are ignored) and writes one `{a}` line per state.
pub fn batch_inference<R: BufRead, W: Write>(
    model: &dyn ActionModel,
    input: R,
    mut output: W,
    seed: u64,
) -> Result<usize> {
    let mut rows = Vec::new();
    for (n, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: StateRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Config(format!("states line {}: {e}", n + 1)))?;
        let mut row = rec.s_h;
        row.extend(rec.s_l);
        if row.len() != model.state_dim() {
            return Err(Error::Config(format!(
                "states line {}: width {} but the model expects {}",
                n + 1,
                row.len(),
                model.state_dim()
            )));
        }
        rows.extend(row);
    }
    let count = rows.len() / model.state_dim().max(1);
    let states = Array2::from_shape_vec((count, model.state_dim()), rows).map_err(|e| Error::Config(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let actions = model.act_batch(states.view(), &mut rng)?;
    for a in actions.rows() {
        serde_json::to_writer(&mut output, &ActionRecord { a: a.to_vec() })?;
        output.write_all(b"\n")?;
    }
    output.flush()?;
    Ok(count)
}
