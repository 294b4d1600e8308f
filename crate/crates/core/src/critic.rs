//! Twin Q networks, clipped double-Q targets and the TD loss.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;

use crate::cvae::join;
use crate::numerics::{Activation, Mlp, MlpGrads, NumericsError};

pub use crate::numerics::soft_update;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Which {
    Q1,
    Q2,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwinCritic {
    pub q1: Mlp,
    pub q2: Mlp,
}

impl TwinCritic {
    pub fn new<R: Rng + ?Sized>(state_dim: usize, action_dim: usize, hidden: &[usize], rng: &mut R) -> Self {
        let mut sizes = vec![state_dim + action_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        TwinCritic {
            q1: Mlp::new(&sizes, Activation::Tanh, Activation::Identity, rng),
            q2: Mlp::new(&sizes, Activation::Tanh, Activation::Identity, rng),
        }
    }

    pub fn net(&self, which: Which) -> &Mlp {
        match which {
            Which::Q1 => &self.q1,
            Which::Q2 => &self.q2,
        }
    }

    pub fn q_value(
        &self,
        states: ArrayView2<f64>,
        actions: ArrayView2<f64>,
        which: Which,
    ) -> Result<Array1<f64>, NumericsError> {
        q_values(self.net(which), states, actions)
    }

    /// Elementwise `min(Q1, Q2)`.
    pub fn min_q(&self, states: ArrayView2<f64>, actions: ArrayView2<f64>) -> Result<Array1<f64>, NumericsError> {
        let a = self.q_value(states, actions, Which::Q1)?;
        let b = self.q_value(states, actions, Which::Q2)?;
        Ok(ndarray::Zip::from(&a).and(&b).map_collect(|x, y| x.min(*y)))
    }

    pub fn soft_update_from(&mut self, live: &TwinCritic, tau: f64) -> Result<(), NumericsError> {
        soft_update(&live.q1, &mut self.q1, tau)?;
        soft_update(&live.q2, &mut self.q2, tau)
    }
}

pub fn q_values(q: &Mlp, states: ArrayView2<f64>, actions: ArrayView2<f64>) -> Result<Array1<f64>, NumericsError> {
    Ok(q.predict(join(states, actions)?.view())?.column(0).to_owned())
}

/// Q values and `∂Q/∂a` for each row.
pub fn action_gradient(
    q: &Mlp,
    states: ArrayView2<f64>,
    actions: ArrayView2<f64>,
) -> Result<(Array1<f64>, Array2<f64>), NumericsError> {
    let cache = q.forward(join(states, actions)?.view())?;
    let ones = Array2::ones((states.nrows(), 1));
    let (_, d_in) = q.backward(&cache, ones.view())?;
    let d_a = d_in.slice(ndarray::s![.., states.ncols()..]).to_owned();
    Ok((cache.output().column(0).to_owned(), d_a))
}

/// `y = r + γ·(1 − done)·min(Q1′, Q2′)` evaluated at the target action.
pub fn td_targets(
    rewards: ArrayView1<f64>,
    done: ArrayView1<f64>,
    next_q1: ArrayView1<f64>,
    next_q2: ArrayView1<f64>,
    gamma: f64,
) -> Array1<f64> {
    ndarray::Zip::from(rewards)
        .and(done)
        .and(next_q1)
        .and(next_q2)
        .map_collect(|&r, &d, &q1, &q2| {
            if d > 0.5 || gamma == 0.0 {
                r
            } else {
                r + gamma * q1.min(q2)
            }
        })
}

/// Mean squared TD error against fixed targets `y`, with its gradient.
pub fn td_loss_and_grads(
    q: &Mlp,
    states: ArrayView2<f64>,
    actions: ArrayView2<f64>,
    y: ArrayView1<f64>,
) -> Result<(f64, MlpGrads), NumericsError> {
    let b = states.nrows();
    if b == 0 {
        return Err(NumericsError::InvalidArgument("empty batch".into()));
    }
    let cache = q.forward(join(states, actions)?.view())?;
    let err = &cache.output().column(0) - &y;
    let loss = err.mapv(|v| v * v).sum() / b as f64;
    let up = (err * (2.0 / b as f64)).insert_axis(Axis(1));
    let (grads, _) = q.backward(&cache, up.view())?;
    Ok((loss, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cvae::standard_normal;
    use crate::numerics::finite_diff_check;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_net_returns_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut c = TwinCritic::new(2, 1, &[4], &mut rng);
        let n = c.q1.num_params();
        c.q1.set_flat_params(&vec![0.0; n]).unwrap();
        c.q1.layers_mut().last_mut().unwrap().bias[0] = 1.75;
        let q = c.q_value(array![[0.3, 0.2]].view(), array![[0.9]].view(), Which::Q1).unwrap();
        assert_eq!(q[0], 1.75);
    }

    #[test]
    fn duplicate_twins_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut c = TwinCritic::new(3, 2, &[8], &mut rng);
        c.q2 = c.q1.clone();
        let s = standard_normal(5, 3, &mut rng);
        let a = standard_normal(5, 2, &mut rng);
        assert_eq!(
            c.q_value(s.view(), a.view(), Which::Q1).unwrap(),
            c.q_value(s.view(), a.view(), Which::Q2).unwrap()
        );
        let direct = c.q1.predict_one(&[s[[0, 0]], s[[0, 1]], s[[0, 2]], a[[0, 0]], a[[0, 1]]]).unwrap();
        assert_eq!(direct[0], c.q_value(s.view(), a.view(), Which::Q1).unwrap()[0]);
    }

    #[test]
    fn target_cases() {
        let r = array![1.0, 5.0, 2.0];
        let done = array![0.0, 1.0, 0.0];
        let q1 = array![2.0, 100.0, -1.0];
        let q2 = array![3.0, 100.0, 4.0];
        let y = td_targets(r.view(), done.view(), q1.view(), q2.view(), 0.9);
        assert!((y[0] - 2.8).abs() < 1e-12);
        assert_eq!(y[1], 5.0);
        assert!((y[2] - 1.1).abs() < 1e-12);
        let y0 = td_targets(r.view(), done.view(), q1.view(), q2.view(), 0.0);
        assert_eq!(y0, r);
        // pessimism against each twin
        for j in 0..3 {
            if done[j] == 0.0 {
                assert!(y[j] <= r[j] + 0.9 * q1[j] && y[j] <= r[j] + 0.9 * q2[j]);
            }
        }
    }

    #[test]
    fn td_loss_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut q = TwinCritic::new(1, 1, &[4], &mut rng).q1;
        let n = q.num_params();
        q.set_flat_params(&vec![0.0; n]).unwrap();
        q.layers_mut().last_mut().unwrap().bias[0] = 2.0;
        let (loss, _) = td_loss_and_grads(&q, array![[0.0]].view(), array![[0.0]].view(), array![2.8].view()).unwrap();
        assert!((loss - 0.64).abs() < 1e-12);
        let (loss, g) = td_loss_and_grads(&q, array![[0.0]].view(), array![[0.0]].view(), array![2.0].view()).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(g.max_abs(), 0.0);
    }

    #[test]
    fn td_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let q = TwinCritic::new(4, 2, &[16, 16], &mut rng).q1;
        let s = standard_normal(6, 4, &mut rng);
        let a = standard_normal(6, 2, &mut rng);
        let y = standard_normal(6, 1, &mut rng).column(0).to_owned();
        let before = q.clone();
        let (_, g) = td_loss_and_grads(&q, s.view(), a.view(), y.view()).unwrap();
        assert_eq!(q, before);
        let err = finite_diff_check(
            |p| {
                let mut x = q.clone();
                x.set_flat_params(p).unwrap();
                td_loss_and_grads(&x, s.view(), a.view(), y.view()).unwrap().0
            },
            &q.flat_params(),
            &g.flat(),
            1e-6,
        );
        assert!(err < 1e-5, "{err}");
    }

    #[test]
    fn action_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let q = TwinCritic::new(3, 2, &[16, 16], &mut rng).q1;
        let s = standard_normal(4, 3, &mut rng);
        let a = standard_normal(4, 2, &mut rng);
        let (_, d_a) = action_gradient(&q, s.view(), a.view()).unwrap();
        let err = finite_diff_check(
            |p| {
                let a = Array2::from_shape_vec((4, 2), p.to_vec()).unwrap();
                q_values(&q, s.view(), a.view()).unwrap().sum()
            },
            &a.iter().copied().collect::<Vec<_>>(),
            &d_a.iter().copied().collect::<Vec<_>>(),
            1e-6,
        );
        assert!(err < 1e-5, "{err}");
    }
}
