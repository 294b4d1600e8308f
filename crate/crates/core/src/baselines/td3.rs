use std::path::Path;

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{new_store, prepare, sizes, DirectPolicy, Method, Trained};
use crate::critic::{action_gradient, q_values, td_loss_and_grads, td_targets, TwinCritic};
use crate::env::LoggedDataset;
use crate::numerics::{adam_step, soft_update, Activation, AdamState, Mlp};
use crate::policy::ActionModel;
use crate::trainer::{run_learner, sample_indices, Learner, StepLosses, TrainConfig, TrainOptions, TrainingData};
use crate::{Error, Result};

/// Target smoothing and update delay.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Td3Params {
    pub policy_noise: f64,
    pub noise_clip: f64,
    /// Actor and target updates happen every `policy_delay` critic updates.
    pub policy_delay: usize,
}

impl Default for Td3Params {
    fn default() -> Self {
        Td3Params {
            policy_noise: 0.2,
            noise_clip: 0.5,
            policy_delay: 2,
        }
    }
}

impl Td3Params {
    pub fn validate(&self) -> Result<()> {
        if self.policy_delay == 0 || !(self.policy_noise >= 0.0) || !(self.noise_clip >= 0.0) {
            return Err(Error::Config("td3 needs policy_delay ≥ 1 and non-negative noise settings".into()));
        }
        Ok(())
    }
}

struct Td3Learner<'a> {
    config: &'a TrainConfig,
    params: Td3Params,
    policy: DirectPolicy,
    critic: TwinCritic,
    target_actor: Mlp,
    target_critic: TwinCritic,
    adam_actor: AdamState,
    adam_q1: AdamState,
    adam_q2: AdamState,
    iteration: usize,
}

impl Td3Learner<'_> {
    /// Smoothed target action `clip(μ′(s′) + clip(ε, ±c), ±1)`.
    fn target_actions(&self, next_states: &Array2<f64>, rng: &mut ChaCha8Rng) -> Result<Array2<f64>> {
        let mut a = self.target_actor.predict(next_states.view())?;
        let (sigma, clip) = (self.params.policy_noise, self.params.noise_clip);
        a.mapv_inplace(|v| {
            let eps: f64 = rng.sample::<f64, _>(StandardNormal) * sigma;
            (v + eps.clamp(-clip, clip)).clamp(-1.0, 1.0)
        });
        Ok(a)
    }
}

impl Learner for Td3Learner<'_> {
    fn step(&mut self, data: &TrainingData, rng: &mut ChaCha8Rng) -> Result<StepLosses> {
        let idx = sample_indices(data.len(), self.config.batch_size, rng);
        let batch = data.batch(&idx);
        let next_a = self.target_actions(&batch.next_states, rng)?;
        let nq1 = q_values(&self.target_critic.q1, batch.next_states.view(), next_a.view())?;
        let nq2 = q_values(&self.target_critic.q2, batch.next_states.view(), next_a.view())?;
        let y = td_targets(batch.rewards.view(), batch.done.view(), nq1.view(), nq2.view(), self.config.gamma);
        let (td1, g1) = td_loss_and_grads(&self.critic.q1, batch.states.view(), batch.actions.view(), y.view())?;
        let (td2, g2) = td_loss_and_grads(&self.critic.q2, batch.states.view(), batch.actions.view(), y.view())?;

        let cache = self.policy.net.forward(batch.states.view())?;
        let (q, dq) = action_gradient(&self.critic.q1, batch.states.view(), cache.output().view())?;
        let mean_q = q.mean().unwrap_or(0.0);
        self.iteration += 1;
        let delayed = self.iteration % self.params.policy_delay == 0;
        let actor_grads = if delayed {
            let upstream = dq.mapv(|v| -v / batch.len() as f64);
            Some(self.policy.net.backward(&cache, upstream.view())?.0)
        } else {
            None
        };

        adam_step(&mut self.critic.q1, &g1, &mut self.adam_q1, self.config.critic_lr)?;
        adam_step(&mut self.critic.q2, &g2, &mut self.adam_q2, self.config.critic_lr)?;
        if let Some(g) = actor_grads {
            adam_step(&mut self.policy.net, &g, &mut self.adam_actor, self.config.actor_lr)?;
            soft_update(&self.policy.net, &mut self.target_actor, self.config.tau)?;
            self.target_critic.soft_update_from(&self.critic, self.config.tau)?;
        }
        if !(td1.is_finite() && td2.is_finite() && mean_q.is_finite()) {
            return Err(Error::NonFinite {
                iteration: self.iteration,
                what: "td3 losses".into(),
            });
        }
        Ok(StepLosses {
            td1,
            td2,
            mean_q,
            ..StepLosses::default()
        })
    }

    fn policy(&self) -> Box<dyn ActionModel + '_> {
        Box::new(self.policy.clone())
    }

    fn save(&self, path: &Path) -> Result<()> {
        let mut store = new_store(Method::Td3, self.config, self.iteration, &self.policy.normalizer);
        store.meta["td3"] = serde_json::to_value(self.params)?;
        store.put_mlp("policy", &self.policy.net);
        store.put_mlp("q1", &self.critic.q1);
        store.put_mlp("q2", &self.critic.q2);
        store.put_mlp("target/policy", &self.target_actor);
        store.put_mlp("target/q1", &self.target_critic.q1);
        store.put_mlp("target/q2", &self.target_critic.q2);
        store.put_adam("adam/policy", &self.adam_actor);
        store.put_adam("adam/q1", &self.adam_q1);
        store.put_adam("adam/q2", &self.adam_q2);
        Ok(store.save(path)?)
    }
}

/// Off-policy actor-critic with a direct deterministic actor, clipped double
/// Q targets, target smoothing and delayed actor updates.
pub fn train_td3_direct(
    dataset: &LoggedDataset,
    config: &TrainConfig,
    params: Td3Params,
    opts: &TrainOptions,
) -> Result<Trained<DirectPolicy>> {
    params.validate()?;
    let (data, normalizer, mut rng) = prepare(dataset, config, opts)?;
    let (s, a) = (data.states.ncols(), data.actions.ncols());
    let net = Mlp::new(&sizes(s, &config.hidden, a), Activation::Tanh, Activation::Tanh, &mut rng);
    let critic = TwinCritic::new(s, a, &config.hidden, &mut rng);
    let mut learner = Td3Learner {
        config,
        params,
        adam_actor: AdamState::new(&net),
        adam_q1: AdamState::new(&critic.q1),
        adam_q2: AdamState::new(&critic.q2),
        target_actor: net.clone(),
        target_critic: critic.clone(),
        critic,
        policy: DirectPolicy {
            method: Method::Td3,
            normalizer,
            net,
        },
        iteration: 0,
    };
    let metrics = run_learner(&mut learner, &data, config, opts, config.total_iterations(data.len()))?;
    Ok(Trained {
        model: learner.policy,
        metrics,
    })
}
