use std::path::Path;

use ndarray::{Array2, ArrayView2};
use rand::RngCore;
use rand_chacha::ChaCha8Rng;

use super::{load_normalizer, meta, new_store, prepare, Method, Trained};
use crate::cvae::{join, standard_normal, Cvae};
use crate::env::LoggedDataset;
use crate::numerics::{adam_step, AdamState, Mlp, TensorStore};
use crate::policy::ActionModel;
use crate::trainer::{run_learner, sample_indices, Learner, ObsNormalizer, StepLosses, TrainConfig, TrainOptions, TrainingData};
use crate::{Error, Result};

/// CVAE imitation policy: acts with the decoder at the prior mode.
#[derive(Debug, Clone, PartialEq)]
pub struct CvaePolicy {
    pub normalizer: ObsNormalizer,
    pub decoder: Mlp,
}

impl CvaePolicy {
    pub fn latent_dim(&self) -> usize {
        self.decoder.input_dim() - self.normalizer.dim()
    }

    /// Decodes explicit latents for a batch of raw states.
    pub fn decode(&self, states: ArrayView2<f64>, latents: ArrayView2<f64>) -> Result<Array2<f64>> {
        let x = self.normalizer.transform(states)?;
        Ok(self.decoder.predict(join(x.view(), latents)?.view())?)
    }

    /// `n` prior samples for one raw state, one per row.
    pub fn sample(&self, state: &[f64], n: usize, rng: &mut dyn RngCore) -> Result<Array2<f64>> {
        let latents = standard_normal(n, self.latent_dim(), rng);
        let x = ArrayView2::from_shape((1, state.len()), state).map_err(|e| Error::Config(e.to_string()))?;
        let xs = x.broadcast((n, state.len())).expect("row broadcasts").to_owned();
        self.decode(xs.view(), latents.view())
    }

    /// Reads the decoder of a cvae_bc or resact checkpoint.
    pub fn load(path: &Path) -> Result<Self> {
        let store = TensorStore::load(path)?;
        let method: Method = meta(&store, "kind")?;
        if !matches!(method, Method::CvaeBc | Method::Resact) {
            return Err(Error::Checkpoint(format!("`{method}` checkpoints hold no decoder")));
        }
        Ok(CvaePolicy {
            normalizer: load_normalizer(&store)?,
            decoder: store.mlp("decoder")?,
        })
    }
}

impl ActionModel for CvaePolicy {
    fn name(&self) -> &str {
        Method::CvaeBc.as_str()
    }

    fn state_dim(&self) -> usize {
        self.normalizer.dim()
    }

    fn action_dim(&self) -> usize {
        self.decoder.output_dim()
    }

    fn act_batch(&self, states: ArrayView2<f64>, _rng: &mut dyn RngCore) -> Result<Array2<f64>> {
        let zeros = Array2::zeros((states.nrows(), self.latent_dim()));
        self.decode(states, zeros.view())
    }
}

struct CvaeLearner<'a> {
    config: &'a TrainConfig,
    normalizer: ObsNormalizer,
    cvae: Cvae,
    adam_enc: AdamState,
    adam_dec: AdamState,
    iteration: usize,
}

impl Learner for CvaeLearner<'_> {
    fn step(&mut self, data: &TrainingData, rng: &mut ChaCha8Rng) -> Result<StepLosses> {
        let idx = sample_indices(data.len(), self.config.batch_size, rng);
        let batch = data.batch(&idx);
        let noise = standard_normal(batch.len(), self.cvae.latent_dim(), rng);
        let out = self.cvae.recon_loss(batch.states.view(), batch.actions.view(), noise.view())?;
        let lr = self.config.cvae_lr;
        adam_step(&mut self.cvae.encoder, &out.encoder_grads, &mut self.adam_enc, lr)?;
        adam_step(&mut self.cvae.decoder, &out.decoder_grads, &mut self.adam_dec, lr)?;
        self.iteration += 1;
        Ok(StepLosses {
            rec: out.loss,
            ..StepLosses::default()
        })
    }

    fn policy(&self) -> Box<dyn ActionModel + '_> {
        Box::new(CvaePolicy {
            normalizer: self.normalizer.clone(),
            decoder: self.cvae.decoder.clone(),
        })
    }

    fn save(&self, path: &Path) -> Result<()> {
        let mut store = new_store(Method::CvaeBc, self.config, self.iteration, &self.normalizer);
        store.put_mlp("encoder", &self.cvae.encoder);
        store.put_mlp("decoder", &self.cvae.decoder);
        store.put_adam("adam/encoder", &self.adam_enc);
        store.put_adam("adam/decoder", &self.adam_dec);
        Ok(store.save(path)?)
    }
}

/// Trains only the reconstruction model and returns it with the encoder.
/// The latent width follows the same rule as ResAct (`latent_dim` or the
/// action width) so the two share a decoder shape.
pub fn train_cvae_bc(
    dataset: &LoggedDataset,
    config: &TrainConfig,
    opts: &TrainOptions,
) -> Result<Trained<(CvaePolicy, Cvae)>> {
    let (data, normalizer, mut rng) = prepare(dataset, config, opts)?;
    let action_dim = data.actions.ncols();
    let latent = config.latent_dim.unwrap_or(action_dim);
    let cvae = Cvae::new(data.states.ncols(), action_dim, latent, &config.hidden, &mut rng);
    let mut learner = CvaeLearner {
        config,
        normalizer,
        adam_enc: AdamState::new(&cvae.encoder),
        adam_dec: AdamState::new(&cvae.decoder),
        cvae,
        iteration: 0,
    };
    let metrics = run_learner(&mut learner, &data, config, opts, config.total_iterations(data.len()))?;
    let policy = CvaePolicy {
        normalizer: learner.normalizer,
        decoder: learner.cvae.decoder.clone(),
    };
    Ok(Trained {
        model: (policy, learner.cvae),
        metrics,
    })
}
