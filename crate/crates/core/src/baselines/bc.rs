use std::path::Path;

use rand_chacha::ChaCha8Rng;

use super::{new_store, prepare, sizes, DirectPolicy, Method, Trained};
use crate::env::LoggedDataset;
use crate::numerics::{adam_step, Activation, AdamState, Mlp};
use crate::policy::ActionModel;
use crate::trainer::{run_learner, sample_indices, Learner, StepLosses, TrainConfig, TrainOptions, TrainingData};
use crate::Result;

struct BcLearner<'a> {
    config: &'a TrainConfig,
    policy: DirectPolicy,
    adam: AdamState,
    iteration: usize,
}

impl Learner for BcLearner<'_> {
    fn step(&mut self, data: &TrainingData, rng: &mut ChaCha8Rng) -> Result<StepLosses> {
        let idx = sample_indices(data.len(), self.config.batch_size, rng);
        let batch = data.batch(&idx);
        let cache = self.policy.net.forward(batch.states.view())?;
        let diff = cache.output() - &batch.actions;
        let scale = (diff.len()) as f64;
        let loss = diff.mapv(|v| v * v).sum() / scale;
        let upstream = diff.mapv(|v| 2.0 * v / scale);
        let (grads, _) = self.policy.net.backward(&cache, upstream.view())?;
        adam_step(&mut self.policy.net, &grads, &mut self.adam, self.config.cvae_lr)?;
        self.iteration += 1;
        Ok(StepLosses {
            rec: loss,
            ..StepLosses::default()
        })
    }

    fn policy(&self) -> Box<dyn ActionModel + '_> {
        Box::new(self.policy.clone())
    }

    fn save(&self, path: &Path) -> Result<()> {
        let mut store = new_store(Method::Bc, self.config, self.iteration, &self.policy.normalizer);
        store.put_mlp("policy", &self.policy.net);
        store.put_adam("adam/policy", &self.adam);
        Ok(store.save(path)?)
    }
}

/// Behavior cloning: a deterministic `s → a` regressor trained on the
/// action mean squared error at the imitation learning rate (`cvae_lr`).
pub fn train_bc(dataset: &LoggedDataset, config: &TrainConfig, opts: &TrainOptions) -> Result<Trained<DirectPolicy>> {
    let (data, normalizer, mut rng) = prepare(dataset, config, opts)?;
    let net = Mlp::new(
        &sizes(data.states.ncols(), &config.hidden, data.actions.ncols()),
        Activation::Tanh,
        Activation::Tanh,
        &mut rng,
    );
    let mut learner = BcLearner {
        config,
        adam: AdamState::new(&net),
        policy: DirectPolicy {
            method: Method::Bc,
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
