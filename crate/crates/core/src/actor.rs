//! Residual actor: a hierarchical state encoder plus a bounded residual on a base action.

use ndarray::{concatenate, s, Array2, ArrayView2, Axis};
use rand::Rng;

use crate::cvae::{clamp_log_std, join};
use crate::numerics::{Activation, Mlp, MlpCache, MlpGrads, NumericsError};

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualActor {
    /// `s_h → [μ_h | log σ_h]`.
    pub f_h: Mlp,
    /// `s_l → z_l`.
    pub f_l: Mlp,
    /// `[z_h | z_l | a] → Δ / ρ_max`, tanh output.
    pub f_a: Mlp,
    pub rho_max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodedState {
    pub z_h: Array2<f64>,
    pub z_l: Array2<f64>,
    pub mu_h: Array2<f64>,
    pub log_sigma_h: Array2<f64>,
}

/// Everything the backward pass needs from one forward evaluation.
#[derive(Debug, Clone)]
pub struct ActorPass {
    pub enc: EncodedState,
    pub delta: Array2<f64>,
    pub action: Array2<f64>,
    h_cache: MlpCache,
    l_cache: MlpCache,
    a_cache: MlpCache,
    noise: Option<Array2<f64>>,
    log_sigma_mask: Array2<f64>,
    clamp_mask: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct ActorGrads {
    pub f_h: MlpGrads,
    pub f_l: MlpGrads,
    pub f_a: MlpGrads,
    /// Gradient with respect to the base action.
    pub d_base: Array2<f64>,
}

impl ResidualActor {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        session_dim: usize,
        request_dim: usize,
        action_dim: usize,
        z_h_dim: usize,
        z_l_dim: usize,
        hidden: &[usize],
        rho_max: f64,
        rng: &mut R,
    ) -> Self {
        let sizes = |input: usize, output: usize| {
            let mut v = vec![input];
            v.extend_from_slice(hidden);
            v.push(output);
            v
        };
        let f_h = Mlp::new(&sizes(session_dim, 2 * z_h_dim), Activation::Tanh, Activation::Identity, rng);
        let f_l = Mlp::new(&sizes(request_dim, z_l_dim), Activation::Tanh, Activation::Identity, rng);
        let mut f_a = Mlp::new(
            &sizes(z_h_dim + z_l_dim + action_dim, action_dim),
            Activation::Tanh,
            Activation::Tanh,
            rng,
        );
        f_a.zero_output_layer();
        ResidualActor {
            f_h,
            f_l,
            f_a,
            rho_max,
        }
    }

    pub fn session_dim(&self) -> usize {
        self.f_h.input_dim()
    }

    pub fn request_dim(&self) -> usize {
        self.f_l.input_dim()
    }

    pub fn z_h_dim(&self) -> usize {
        self.f_h.output_dim() / 2
    }

    pub fn action_dim(&self) -> usize {
        self.f_a.output_dim()
    }

    fn check_state(&self, states: &ArrayView2<f64>) -> Result<usize, NumericsError> {
        let (dh, dl) = (self.session_dim(), self.request_dim());
        if states.ncols() != dh + dl {
            return Err(NumericsError::ShapeMismatch {
                expected: vec![states.nrows(), dh + dl],
                got: vec![states.nrows(), states.ncols()],
            });
        }
        Ok(dh)
    }

    /// Session embedding is sampled with `noise`, or set to its mean when `noise` is `None`.
    pub fn forward(
        &self,
        states: ArrayView2<f64>,
        base: ArrayView2<f64>,
        noise: Option<ArrayView2<f64>>,
    ) -> Result<ActorPass, NumericsError> {
        let dh = self.check_state(&states)?;
        let (s_h, s_l) = (states.slice(s![.., ..dh]), states.slice(s![.., dh..]));
        let h_cache = self.f_h.forward(s_h)?;
        let d = self.z_h_dim();
        let mu_h = h_cache.output().slice(s![.., ..d]).to_owned();
        let mut log_sigma_h = h_cache.output().slice(s![.., d..]).to_owned();
        let log_sigma_mask = clamp_log_std(&mut log_sigma_h);
        let z_h = match &noise {
            Some(e) => {
                if e.dim() != mu_h.dim() {
                    return Err(NumericsError::ShapeMismatch {
                        expected: vec![mu_h.nrows(), d],
                        got: vec![e.nrows(), e.ncols()],
                    });
                }
                &mu_h + &(log_sigma_h.mapv(f64::exp) * e)
            }
            None => mu_h.clone(),
        };
        let l_cache = self.f_l.forward(s_l)?;
        let z_l = l_cache.output().clone();
        let a_in = concatenate(Axis(1), &[z_h.view(), z_l.view(), base.view()])
            .map_err(|_| NumericsError::ShapeMismatch {
                expected: vec![z_h.nrows()],
                got: vec![base.nrows()],
            })?;
        let a_cache = self.f_a.forward(a_in.view())?;
        let delta = a_cache.output() * self.rho_max;
        let raw = &base + &delta;
        let clamp_mask = raw.mapv(|v| if v.abs() < 1.0 { 1.0 } else { 0.0 });
        let action = raw.mapv(|v| v.clamp(-1.0, 1.0));
        Ok(ActorPass {
            enc: EncodedState {
                z_h,
                z_l,
                mu_h,
                log_sigma_h,
            },
            delta,
            action,
            h_cache,
            l_cache,
            a_cache,
            noise: noise.map(|e| e.to_owned()),
            log_sigma_mask,
            clamp_mask,
        })
    }

    pub fn encode_state(
        &self,
        states: ArrayView2<f64>,
        noise: Option<ArrayView2<f64>>,
    ) -> Result<EncodedState, NumericsError> {
        let dh = self.check_state(&states)?;
        let (s_h, s_l) = (states.slice(s![.., ..dh]), states.slice(s![.., dh..]));
        let out = self.f_h.predict(s_h)?;
        let d = self.z_h_dim();
        let mu_h = out.slice(s![.., ..d]).to_owned();
        let mut log_sigma_h = out.slice(s![.., d..]).to_owned();
        clamp_log_std(&mut log_sigma_h);
        let z_h = match noise {
            Some(e) => &mu_h + &(log_sigma_h.mapv(f64::exp) * &e),
            None => mu_h.clone(),
        };
        Ok(EncodedState {
            z_h,
            z_l: self.f_l.predict(s_l)?,
            mu_h,
            log_sigma_h,
        })
    }

    pub fn predict_residual(
        &self,
        enc: &EncodedState,
        base: ArrayView2<f64>,
    ) -> Result<Array2<f64>, NumericsError> {
        let z = join(enc.z_h.view(), enc.z_l.view())?;
        Ok(self.f_a.predict(join(z.view(), base)?.view())? * self.rho_max)
    }

    /// `clamp(base + Δ, −1, 1)`.
    pub fn improved_action(
        &self,
        states: ArrayView2<f64>,
        base: ArrayView2<f64>,
        noise: Option<ArrayView2<f64>>,
    ) -> Result<Array2<f64>, NumericsError> {
        let enc = self.encode_state(states, noise)?;
        let delta = self.predict_residual(&enc, base)?;
        Ok((&base + &delta).mapv(|v| v.clamp(-1.0, 1.0)))
    }

    /// Gradients of `sum(d_action ⊙ action)`.
    pub fn backward(&self, pass: &ActorPass, d_action: ArrayView2<f64>) -> Result<ActorGrads, NumericsError> {
        if d_action.dim() != pass.action.dim() {
            return Err(NumericsError::ShapeMismatch {
                expected: vec![pass.action.nrows(), pass.action.ncols()],
                got: vec![d_action.nrows(), d_action.ncols()],
            });
        }
        let d_raw = &d_action * &pass.clamp_mask;
        let upstream = &d_raw * self.rho_max;
        let (f_a, d_in) = self.f_a.backward(&pass.a_cache, upstream.view())?;
        let dh = self.z_h_dim();
        let dl = pass.enc.z_l.ncols();
        let d_z_h = d_in.slice(s![.., ..dh]);
        let d_z_l = d_in.slice(s![.., dh..dh + dl]);
        let d_base = &d_raw + &d_in.slice(s![.., dh + dl..]);
        let zeros = Array2::zeros(d_z_h.raw_dim());
        let f_h = self.session_backward(pass, d_z_h, zeros.view(), zeros.view())?;
        let (f_l, _) = self.f_l.backward(&pass.l_cache, d_z_l)?;
        Ok(ActorGrads { f_h, f_l, f_a, d_base })
    }

    /// `f_h` gradients for upstream signals on the sampled embedding and on
    /// the posterior parameters directly.
    pub fn session_backward(
        &self,
        pass: &ActorPass,
        d_z_h: ArrayView2<f64>,
        d_mu: ArrayView2<f64>,
        d_log_sigma: ArrayView2<f64>,
    ) -> Result<MlpGrads, NumericsError> {
        let total_mu = &d_z_h + &d_mu;
        let mut total_ls = d_log_sigma.to_owned();
        if let Some(e) = &pass.noise {
            total_ls = total_ls + &d_z_h * e * pass.enc.log_sigma_h.mapv(f64::exp);
        }
        total_ls *= &pass.log_sigma_mask;
        let up = concatenate(Axis(1), &[total_mu.view(), total_ls.view()])
            .expect("halves share the batch dimension");
        Ok(self.f_h.backward(&pass.h_cache, up.view())?.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cvae::standard_normal;
    use crate::numerics::finite_diff_check;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn actor(seed: u64) -> ResidualActor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut a = ResidualActor::new(2, 3, 2, 2, 3, &[16, 16], 0.5, &mut rng);
        // move off the zero-initialized output layer so every path carries gradient
        let p: Vec<f64> = a.f_a.flat_params().iter().map(|_| rng.gen_range(-0.5..0.5)).collect();
        a.f_a.set_flat_params(&p).unwrap();
        a
    }

    #[test]
    fn fresh_actor_is_the_identity_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = ResidualActor::new(2, 3, 2, 2, 3, &[8], 0.5, &mut rng);
        let s = standard_normal(4, 5, &mut rng);
        let base = standard_normal(4, 2, &mut rng).mapv(f64::tanh);
        assert_eq!(a.improved_action(s.view(), base.view(), None).unwrap(), base);
    }

    #[test]
    fn evaluation_mode_uses_the_mean() {
        let a = actor(1);
        let s = array![[0.1, -0.3, 0.5, 0.2, -0.4]];
        let enc = a.encode_state(s.view(), None).unwrap();
        assert_eq!(enc.z_h, enc.mu_h);
    }

    #[test]
    fn zero_encoders_pass_noise_through() {
        let mut a = actor(2);
        for m in [&mut a.f_h, &mut a.f_l] {
            let n = m.num_params();
            m.set_flat_params(&vec![0.0; n]).unwrap();
        }
        let s = array![[0.1, -0.3, 0.5, 0.2, -0.4]];
        let e = array![[0.7, -1.2]];
        let enc = a.encode_state(s.view(), Some(e.view())).unwrap();
        assert_eq!(enc.z_h, e);
        assert_eq!(enc.z_l, Array2::<f64>::zeros((1, 3)));
    }

    #[test]
    fn residual_is_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = actor(3);
        let s = standard_normal(10_000, 5, &mut rng) * 5.0;
        let base = standard_normal(10_000, 2, &mut rng).mapv(f64::tanh);
        let enc = a.encode_state(s.view(), None).unwrap();
        let d = a.predict_residual(&enc, base.view()).unwrap();
        assert!(d.iter().all(|v| v.abs() <= 0.5));
        let act = a.improved_action(s.view(), base.view(), None).unwrap();
        assert!(act.iter().all(|v| v.abs() <= 1.0));
        assert!((&act - &base).iter().all(|v| v.abs() <= 0.5 + 1e-15));
    }

    #[test]
    fn residual_matches_network_composition() {
        let a = actor(4);
        let s = [0.2, -0.1, 0.4, 0.0, 0.3];
        let base = [0.25, -0.5];
        let h = a.f_h.predict_one(&s[..2]).unwrap();
        let l = a.f_l.predict_one(&s[2..]).unwrap();
        let mut input = h[..2].to_vec();
        input.extend(l);
        input.extend(base);
        let manual: Vec<f64> = a.f_a.predict_one(&input).unwrap().iter().map(|v| v * 0.5).collect();
        let enc = a.encode_state(crate::cvae::row(&s), None).unwrap();
        let d = a.predict_residual(&enc, crate::cvae::row(&base)).unwrap();
        assert_eq!(d.row(0).to_vec(), manual);
    }

    #[test]
    fn saturated_actions_are_clamped() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut a = ResidualActor::new(1, 1, 2, 1, 1, &[4], 0.5, &mut rng);
        // constant Δ = 0.5·tanh(b)
        let n = a.f_a.num_params();
        a.f_a.set_flat_params(&vec![0.0; n]).unwrap();
        let last = a.f_a.layers_mut().last_mut().unwrap();
        last.bias.fill(0.4f64.atanh());
        let out = a
            .improved_action(array![[0.0, 0.0]].view(), array![[0.9, 0.1]].view(), None)
            .unwrap();
        assert_eq!(out[[0, 0]], 1.0);
        assert!((out[[0, 1]] - 0.3).abs() < 1e-12);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a = actor(6);
        let s = standard_normal(4, 5, &mut rng);
        let base = standard_normal(4, 2, &mut rng).mapv(|v| 0.4 * v.tanh());
        let e = standard_normal(4, 2, &mut rng);
        let w = standard_normal(4, 2, &mut rng);
        let objective = |act: &ResidualActor, base: &Array2<f64>| {
            let p = act.forward(s.view(), base.view(), Some(e.view())).unwrap();
            (&p.action * &w).sum()
        };
        let pass = a.forward(s.view(), base.view(), Some(e.view())).unwrap();
        let g = a.backward(&pass, w.view()).unwrap();

        type Pick = fn(&mut ResidualActor) -> &mut Mlp;
        let groups: [(&str, Pick, &MlpGrads); 3] = [
            ("f_h", |x| &mut x.f_h, &g.f_h),
            ("f_l", |x| &mut x.f_l, &g.f_l),
            ("f_a", |x| &mut x.f_a, &g.f_a),
        ];
        for (name, pick, grads) in groups {
            let mut probe = a.clone();
            let p0 = pick(&mut probe).flat_params();
            let err = finite_diff_check(
                |p| {
                    let mut x = a.clone();
                    pick(&mut x).set_flat_params(p).unwrap();
                    objective(&x, &base)
                },
                &p0,
                &grads.flat(),
                1e-6,
            );
            assert!(err < 1e-5, "{name}: {err}");
        }
        let b0 = base.iter().copied().collect::<Vec<_>>();
        let err = finite_diff_check(
            |p| objective(&a, &Array2::from_shape_vec((4, 2), p.to_vec()).unwrap()),
            &b0,
            &g.d_base.iter().copied().collect::<Vec<_>>(),
            1e-6,
        );
        assert!(err < 1e-5, "base: {err}");
    }

    #[test]
    fn session_gradient_of_embedding_function() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = actor(7);
        let s = standard_normal(3, 5, &mut rng);
        let base = Array2::zeros((3, 2));
        let e = standard_normal(3, 2, &mut rng);
        let w = standard_normal(3, 2, &mut rng);
        let f = |x: &ResidualActor| {
            let enc = x.encode_state(s.view(), Some(e.view())).unwrap();
            (&enc.z_h * &w).sum() + enc.z_h.mapv(|v| v * v).sum()
        };
        let pass = a.forward(s.view(), base.view(), Some(e.view())).unwrap();
        let d_z = &w + &(&pass.enc.z_h * 2.0);
        let zeros = Array2::zeros((3, 2));
        let g = a.session_backward(&pass, d_z.view(), zeros.view(), zeros.view()).unwrap();
        let err = finite_diff_check(
            |p| {
                let mut x = a.clone();
                x.f_h.set_flat_params(p).unwrap();
                f(&x)
            },
            &a.f_h.flat_params(),
            &g.flat(),
            1e-6,
        );
        assert!(err < 1e-5, "{err}");
    }
}
