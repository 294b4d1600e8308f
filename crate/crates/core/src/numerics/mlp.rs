//! Dense feed-forward networks with hand-written reverse-mode gradients.
//!
//! Batches are row-major `Array2<f64>`: one sample per row. Weights are
//! stored `in × out` so a layer computes `x · W + b`.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::NumericsError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `y`.
    fn derivative(self, z: f64, y: f64) -> f64 {
        match self {
            // Near saturation 1 − y² cancels; sech² keeps full relative precision.
            Activation::Tanh if y.abs() > 0.9 => {
                let c = z.cosh();
                1.0 / (c * c)
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

impl Dense {
    pub fn input_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.ncols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Dense>,
}

/// Values saved by [`Mlp::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct MlpCache {
    inputs: Vec<Array2<f64>>,
    pre_activations: Vec<Array2<f64>>,
    output: Array2<f64>,
}

impl MlpCache {
    pub fn output(&self) -> &Array2<f64> {
        &self.output
    }

    pub fn pre_activations(&self) -> &[Array2<f64>] {
        &self.pre_activations
    }

    pub fn batch_size(&self) -> usize {
        self.output.nrows()
    }
}

/// Gradient of a scalar with respect to every parameter of an [`Mlp`].
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub layers: Vec<(Array2<f64>, Array1<f64>)>,
}

impl Mlp {
    /// Builds a network with `sizes = [in, h1, ..., out]`. Weights and biases
    /// are drawn uniformly from `±1/sqrt(fan_in)`.
    pub fn new<R: Rng + ?Sized>(
        sizes: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut R,
    ) -> Self {
        assert!(sizes.len() >= 2, "an mlp needs at least input and output sizes");
        assert!(sizes.iter().all(|&s| s > 0), "layer sizes must be positive");
        let n = sizes.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let (fan_in, fan_out) = (sizes[i], sizes[i + 1]);
                let bound = 1.0 / (fan_in as f64).sqrt();
                let weight =
                    Array2::from_shape_fn((fan_in, fan_out), |_| rng.gen_range(-bound..=bound));
                let bias = Array1::from_shape_fn(fan_out, |_| rng.gen_range(-bound..=bound));
                let activation = if i + 1 == n { output } else { hidden };
                Dense {
                    weight,
                    bias,
                    activation,
                }
            })
            .collect();
        Mlp { layers }
    }

    /// Builds a network from explicit layers, checking that dimensions chain.
    pub fn from_layers(layers: Vec<Dense>) -> Result<Self, NumericsError> {
        if layers.is_empty() {
            return Err(NumericsError::EmptyNetwork);
        }
        for (i, layer) in layers.iter().enumerate() {
            if layer.bias.len() != layer.output_dim() {
                return Err(NumericsError::DimensionMismatch {
                    layer: i,
                    expected: layer.output_dim(),
                    got: layer.bias.len(),
                });
            }
            if i > 0 && layers[i - 1].output_dim() != layer.input_dim() {
                return Err(NumericsError::DimensionMismatch {
                    layer: i,
                    expected: layers[i - 1].output_dim(),
                    got: layer.input_dim(),
                });
            }
        }
        Ok(Mlp { layers })
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    /// Layer widths `[in, h1, ..., out]`.
    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.input_dim()];
        sizes.extend(self.layers.iter().map(Dense::output_dim));
        sizes
    }

    pub fn activations(&self) -> Vec<Activation> {
        self.layers.iter().map(|l| l.activation).collect()
    }

    /// Zeroes the weights and bias of the final layer.
    pub fn zero_output_layer(&mut self) {
        let last = self.layers.len() - 1;
        self.layers[last].weight.fill(0.0);
        self.layers[last].bias.fill(0.0);
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    fn check_input(&self, input: &ArrayView2<f64>) -> Result<(), NumericsError> {
        if input.ncols() != self.input_dim() {
            return Err(NumericsError::DimensionMismatch {
                layer: 0,
                expected: self.input_dim(),
                got: input.ncols(),
            });
        }
        Ok(())
    }

    /// Forward pass that keeps the per-layer values needed by [`Mlp::backward`].
    pub fn forward(&self, input: ArrayView2<f64>) -> Result<MlpCache, NumericsError> {
        self.check_input(&input)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        let mut x = input.to_owned();
        for layer in &self.layers {
            let z = x.dot(&layer.weight) + &layer.bias;
            let act = layer.activation;
            let y = z.mapv(|v| act.apply(v));
            inputs.push(x);
            pre_activations.push(z);
            x = y;
        }
        Ok(MlpCache {
            inputs,
            pre_activations,
            output: x,
        })
    }

    /// Forward pass without a cache.
    pub fn predict(&self, input: ArrayView2<f64>) -> Result<Array2<f64>, NumericsError> {
        self.check_input(&input)?;
        let mut x = input.to_owned();
        for layer in &self.layers {
            let act = layer.activation;
            x = (x.dot(&layer.weight) + &layer.bias).mapv_into(|v| act.apply(v));
        }
        Ok(x)
    }

    /// Single-sample convenience wrapper around [`Mlp::predict`].
    pub fn predict_one(&self, input: &[f64]) -> Result<Vec<f64>, NumericsError> {
        let x = ArrayView2::from_shape((1, input.len()), input)
            .expect("a slice always views as one row");
        Ok(self.predict(x)?.into_raw_vec_and_offset().0)
    }

    /// Reverse-mode pass for the scalar `sum(upstream ⊙ output)`.
    ///
    /// Returns parameter gradients (summed over the batch) and the gradient
    /// with respect to the input batch.
    pub fn backward(
        &self,
        cache: &MlpCache,
        upstream: ArrayView2<f64>,
    ) -> Result<(MlpGrads, Array2<f64>), NumericsError> {
        if cache.inputs.len() != self.layers.len() {
            return Err(NumericsError::CacheMismatch);
        }
        if upstream.dim() != cache.output.dim() {
            return Err(NumericsError::ShapeMismatch {
                expected: vec![cache.output.nrows(), cache.output.ncols()],
                got: vec![upstream.nrows(), upstream.ncols()],
            });
        }
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut delta = upstream.to_owned();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let y = if i + 1 == self.layers.len() {
                &cache.output
            } else {
                &cache.inputs[i + 1]
            };
            let z = &cache.pre_activations[i];
            let act = layer.activation;
            if act != Activation::Identity {
                ndarray::Zip::from(&mut delta)
                    .and(z)
                    .and(y)
                    .for_each(|d, &zv, &yv| *d *= act.derivative(zv, yv));
            }
            let d_weight = cache.inputs[i].t().dot(&delta).as_standard_layout().into_owned();
            let d_bias = delta.sum_axis(Axis(0));
            let d_input = delta.dot(&layer.weight.t());
            grads.push((d_weight, d_bias));
            delta = d_input;
        }
        grads.reverse();
        Ok((MlpGrads { layers: grads }, delta))
    }

    /// Parameter tensors in a fixed order (weight, bias per layer).
    pub fn tensors(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| {
                [
                    l.weight.as_slice().expect("standard layout"),
                    l.bias.as_slice().expect("standard layout"),
                ]
            })
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| {
                [
                    l.weight.as_slice_mut().expect("standard layout"),
                    l.bias.as_slice_mut().expect("standard layout"),
                ]
            })
            .collect()
    }

    /// Concatenation of all parameters.
    pub fn flat_params(&self) -> Vec<f64> {
        self.tensors().concat()
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<(), NumericsError> {
        if flat.len() != self.num_params() {
            return Err(NumericsError::ShapeMismatch {
                expected: vec![self.num_params()],
                got: vec![flat.len()],
            });
        }
        let mut offset = 0;
        for t in self.tensors_mut() {
            t.copy_from_slice(&flat[offset..offset + t.len()]);
            offset += t.len();
        }
        Ok(())
    }

    pub fn same_shape(&self, other: &Mlp) -> bool {
        self.sizes() == other.sizes() && self.activations() == other.activations()
    }
}

impl MlpGrads {
    pub fn zeros_like(mlp: &Mlp) -> Self {
        MlpGrads {
            layers: mlp
                .layers()
                .iter()
                .map(|l| {
                    (
                        Array2::zeros(l.weight.raw_dim()),
                        Array1::zeros(l.bias.raw_dim()),
                    )
                })
                .collect(),
        }
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|(w, b)| {
                [
                    w.as_slice().expect("standard layout"),
                    b.as_slice().expect("standard layout"),
                ]
            })
            .collect()
    }

    pub fn flat(&self) -> Vec<f64> {
        self.tensors().concat()
    }

    pub fn scale(&mut self, k: f64) {
        for (w, b) in &mut self.layers {
            *w *= k;
            *b *= k;
        }
    }

    pub fn scaled(mut self, k: f64) -> Self {
        self.scale(k);
        self
    }

    pub fn add_assign(&mut self, other: &MlpGrads) {
        for ((w, b), (ow, ob)) in self.layers.iter_mut().zip(&other.layers) {
            *w += ow;
            *b += ob;
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|t| t.iter())
            .fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }
}

/// Exponential blend `target ← τ·live + (1−τ)·target`.
pub fn soft_update(live: &Mlp, target: &mut Mlp, tau: f64) -> Result<(), NumericsError> {
    if !live.same_shape(target) {
        return Err(NumericsError::ShapeMismatch {
            expected: live.sizes(),
            got: target.sizes(),
        });
    }
    if !(0.0..=1.0).contains(&tau) {
        return Err(NumericsError::InvalidArgument(format!(
            "soft-update rate must lie in [0, 1], got {tau}"
        )));
    }
    for (src, dst) in live.tensors().into_iter().zip(target.tensors_mut()) {
        for (s, d) in src.iter().zip(dst.iter_mut()) {
            *d = tau * s + (1.0 - tau) * *d;
        }
    }
    Ok(())
}
