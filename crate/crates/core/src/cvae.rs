//! Conditional VAE that reconstructs the logging policy from `(state, action)` pairs.

use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::numerics::{kl_rows_with_grad, Activation, DiagGaussian, Mlp, MlpGrads, NumericsError};

/// Hard bounds on predicted log standard deviations.
pub const LOG_STD_MIN: f64 = -10.0;
pub const LOG_STD_MAX: f64 = 4.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Cvae {
    /// `[state | action] → [mean | log_std]` over the latent.
    pub encoder: Mlp,
    /// `[state | latent] → action`, tanh output.
    pub decoder: Mlp,
}

#[derive(Debug, Clone)]
pub struct ReconOutput {
    pub loss: f64,
    pub mse: f64,
    pub kl: f64,
    pub encoder_grads: MlpGrads,
    pub decoder_grads: MlpGrads,
}

/// Clamps log-stds in place and returns the mask of entries left untouched.
pub(crate) fn clamp_log_std(log_std: &mut Array2<f64>) -> Array2<f64> {
    log_std.mapv_inplace(|v| v.clamp(LOG_STD_MIN, LOG_STD_MAX));
    log_std.mapv(|v| if v > LOG_STD_MIN && v < LOG_STD_MAX { 1.0 } else { 0.0 })
}

pub(crate) fn standard_normal<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.sample(StandardNormal))
}

impl Cvae {
    pub fn new<R: Rng + ?Sized>(
        state_dim: usize,
        action_dim: usize,
        latent_dim: usize,
        hidden: &[usize],
        rng: &mut R,
    ) -> Self {
        let mut enc_sizes = vec![state_dim + action_dim];
        enc_sizes.extend_from_slice(hidden);
        enc_sizes.push(2 * latent_dim);
        let mut dec_sizes = vec![state_dim + latent_dim];
        dec_sizes.extend_from_slice(hidden);
        dec_sizes.push(action_dim);
        Cvae {
            encoder: Mlp::new(&enc_sizes, Activation::Tanh, Activation::Identity, rng),
            decoder: Mlp::new(&dec_sizes, Activation::Tanh, Activation::Tanh, rng),
        }
    }

    pub fn latent_dim(&self) -> usize {
        self.encoder.output_dim() / 2
    }

    pub fn action_dim(&self) -> usize {
        self.decoder.output_dim()
    }

    pub fn state_dim(&self) -> usize {
        self.decoder.input_dim() - self.latent_dim()
    }

    /// Posterior mean and clamped log-std for each row.
    pub fn encode(
        &self,
        states: ArrayView2<f64>,
        actions: ArrayView2<f64>,
    ) -> Result<(Array2<f64>, Array2<f64>), NumericsError> {
        let input = join(states, actions)?;
        let out = self.encoder.predict(input.view())?;
        let d = self.latent_dim();
        let mean = out.slice(s![.., ..d]).to_owned();
        let mut log_std = out.slice(s![.., d..]).to_owned();
        clamp_log_std(&mut log_std);
        Ok((mean, log_std))
    }

    pub fn encode_one(&self, state: &[f64], action: &[f64]) -> Result<DiagGaussian, NumericsError> {
        let (m, l) = self.encode(row(state), row(action))?;
        DiagGaussian::new(m.row(0).to_vec(), l.row(0).to_vec())
    }

    pub fn decode(
        &self,
        states: ArrayView2<f64>,
        latents: ArrayView2<f64>,
    ) -> Result<Array2<f64>, NumericsError> {
        self.decoder.predict(join(states, latents)?.view())
    }

    /// `mean_batch[ mean_dims (D(s,c) − a)² + KL(posterior ‖ N(0, I)) ]` with
    /// `c = μ + σ ⊙ noise`, plus gradients for both networks.
    pub fn recon_loss(
        &self,
        states: ArrayView2<f64>,
        actions: ArrayView2<f64>,
        noise: ArrayView2<f64>,
    ) -> Result<ReconOutput, NumericsError> {
        let b = states.nrows();
        if b == 0 {
            return Err(NumericsError::InvalidArgument("empty batch".into()));
        }
        let d = self.latent_dim();
        if noise.dim() != (b, d) {
            return Err(NumericsError::ShapeMismatch {
                expected: vec![b, d],
                got: vec![noise.nrows(), noise.ncols()],
            });
        }
        let enc_cache = self.encoder.forward(join(states, actions)?.view())?;
        let enc_out = enc_cache.output();
        let mean = enc_out.slice(s![.., ..d]).to_owned();
        let mut log_std = enc_out.slice(s![.., d..]).to_owned();
        let mask = clamp_log_std(&mut log_std);
        let sigma = log_std.mapv(f64::exp);
        let latent = &mean + &(&sigma * &noise);

        let dec_cache = self.decoder.forward(join(states, latent.view())?.view())?;
        let diff = dec_cache.output() - &actions;
        let a_dim = diff.ncols() as f64;
        let bf = b as f64;
        let mse = diff.mapv(|v| v * v).sum() / (a_dim * bf);
        let (kl_rows, d_mean_kl, d_log_std_kl) = kl_rows_with_grad(mean.view(), log_std.view());
        let kl = kl_rows.sum() / bf;

        let upstream = diff.mapv(|v| 2.0 * v / (a_dim * bf));
        let (decoder_grads, d_dec_in) = self.decoder.backward(&dec_cache, upstream.view())?;
        let d_latent = d_dec_in.slice(s![.., states.ncols()..]).to_owned();
        let d_mean = &d_latent + &(d_mean_kl / bf);
        let d_log_std = (&d_latent * &noise * &sigma + &(d_log_std_kl / bf)) * &mask;
        let d_enc_out = concatenate(Axis(1), &[d_mean.view(), d_log_std.view()])
            .expect("halves share the batch dimension");
        let (encoder_grads, _) = self.encoder.backward(&enc_cache, d_enc_out.view())?;
        Ok(ReconOutput {
            loss: mse + kl,
            mse,
            kl,
            encoder_grads,
            decoder_grads,
        })
    }

    /// Decodes `n` independent prior latents for one state.
    pub fn sample_estimators<R: Rng + ?Sized>(
        &self,
        state: &[f64],
        n: usize,
        rng: &mut R,
    ) -> Result<Array2<f64>, NumericsError> {
        if n == 0 {
            return Err(NumericsError::InvalidArgument("need at least one estimator".into()));
        }
        let latents = standard_normal(n, self.latent_dim(), rng);
        let states = row(state).broadcast((n, state.len())).expect("row broadcasts").to_owned();
        self.decode(states.view(), latents.view())
    }

    /// Decoder output at the prior mode (latent 0).
    pub fn decode_mode(&self, states: ArrayView2<f64>) -> Result<Array2<f64>, NumericsError> {
        let zeros = Array2::zeros((states.nrows(), self.latent_dim()));
        self.decode(states, zeros.view())
    }
}

pub(crate) fn row(x: &[f64]) -> ArrayView2<'_, f64> {
    ArrayView2::from_shape((1, x.len()), x).expect("a slice always views as one row")
}

pub(crate) fn join(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Result<Array2<f64>, NumericsError> {
    if a.nrows() != b.nrows() {
        return Err(NumericsError::ShapeMismatch {
            expected: vec![a.nrows()],
            got: vec![b.nrows()],
        });
    }
    Ok(concatenate(Axis(1), &[a.view(), b.view()]).expect("row counts checked"))
}

/// Row-wise mean squared error, averaged over the batch.
pub fn mse(pred: ArrayView2<f64>, target: ArrayView2<f64>) -> f64 {
    let diff = &pred - &target;
    let n = diff.len().max(1) as f64;
    diff.mapv(|v| v * v).sum() / n
}

/// Per-row squared distance.
pub fn row_sq_dist(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Array1<f64> {
    (&a - &b).mapv(|v| v * v).sum_axis(Axis(1))
}
