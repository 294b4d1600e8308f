use serde::{Deserialize, Serialize};

use super::{Mlp, MlpGrads, NumericsError};

/// Moment accumulators for one parameter group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub first_moment: Vec<Vec<f64>>,
    pub second_moment: Vec<Vec<f64>>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(params: &Mlp) -> Self {
        Self::with_hyper(params, 0.9, 0.999, 1e-8)
    }

    pub fn with_hyper(params: &Mlp, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        AdamState {
            first_moment: zeros.clone(),
            second_moment: zeros,
            step: 0,
            beta1,
            beta2,
            eps,
        }
    }
}

/// One bias-corrected Adam descent step. Non-finite gradients abort without
/// touching the parameters.
pub fn adam_step(
    params: &mut Mlp,
    grads: &MlpGrads,
    state: &mut AdamState,
    lr: f64,
) -> Result<(), NumericsError> {
    let grad_tensors = grads.tensors();
    if grad_tensors.len() != state.first_moment.len()
        || grad_tensors
            .iter()
            .zip(&state.first_moment)
            .any(|(g, m)| g.len() != m.len())
    {
        return Err(NumericsError::ShapeMismatch {
            expected: state.first_moment.iter().map(Vec::len).collect(),
            got: grad_tensors.iter().map(|g| g.len()).collect(),
        });
    }
    if !grads.is_finite() {
        return Err(NumericsError::NonFinite("adam gradient".into()));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    for (((p, g), m), v) in params
        .tensors_mut()
        .into_iter()
        .zip(grad_tensors)
        .zip(state.first_moment.iter_mut())
        .zip(state.second_moment.iter_mut())
    {
        for i in 0..p.len() {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
