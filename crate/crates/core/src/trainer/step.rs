use std::collections::BTreeSet;

use ndarray::Array2;
use rand::Rng;
use serde::Serialize;

use super::{Batch, Group, ModelBundle};
use crate::critic::{action_gradient, q_values, td_loss_and_grads, td_targets};
use crate::cvae::{join, standard_normal};
use crate::numerics::{adam_step, MlpGrads};
use crate::regularizers::{conciseness_loss, expressiveness_loss};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LossTerm {
    Reconstruction,
    /// The policy objective: mean Q1 of the improved action (ascended).
    Objective,
    TemporalDifference,
    Expressiveness,
    Conciseness,
}

/// Every random draw one iteration needs, so a step can be replayed exactly.
#[derive(Debug, Clone)]
pub struct StepNoise {
    pub recon: Array2<f64>,
    pub prior: Array2<f64>,
    pub session: Array2<f64>,
    pub target_prior: Array2<f64>,
}

impl StepNoise {
    pub fn draw<R: Rng + ?Sized>(bundle: &ModelBundle, batch_len: usize, rng: &mut R) -> Self {
        let latent = bundle.cvae.latent_dim();
        StepNoise {
            recon: standard_normal(batch_len, latent, rng),
            prior: standard_normal(batch_len, latent, rng),
            session: standard_normal(batch_len, bundle.actor.z_h_dim(), rng),
            target_prior: standard_normal(batch_len, latent, rng),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct StepLosses {
    pub rec: f64,
    pub td1: f64,
    pub td2: f64,
    pub exp: f64,
    pub con: f64,
    pub mean_q: f64,
}

impl StepLosses {
    fn all_finite(&self) -> bool {
        [self.rec, self.td1, self.td2, self.exp, self.con, self.mean_q]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// One loss term's gradient on one parameter group.
#[derive(Debug, Clone)]
pub struct Contribution {
    pub group: Group,
    pub term: LossTerm,
    pub grads: MlpGrads,
}

/// Largest absolute gradient entry each loss term sent to each group.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct GradientTaps {
    pub entries: Vec<(Group, LossTerm, f64)>,
}

impl GradientTaps {
    pub fn record(contributions: &[Contribution]) -> Self {
        GradientTaps {
            entries: contributions
                .iter()
                .map(|c| (c.group, c.term, c.grads.max_abs()))
                .collect(),
        }
    }

    /// Loss terms that moved `group` during the step.
    pub fn terms_for(&self, group: Group) -> BTreeSet<LossTerm> {
        self.entries
            .iter()
            .filter(|(g, _, m)| *g == group && *m > 0.0)
            .map(|(_, t, _)| *t)
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct StepReport {
    pub losses: StepLosses,
    pub taps: GradientTaps,
}

/// Losses and per-term gradients at the current parameters.
///
/// Non-critic groups descend `L^Rec − J + w_exp·L^Exp + w_con·L^Con`, where `J`
/// is the batch mean of `Q1(s, ã)` under the live (frozen) critic. Each
/// critic descends its own TD loss against the target networks.
pub fn compute_gradients(
    bundle: &ModelBundle,
    batch: &Batch,
    noise: &StepNoise,
) -> Result<(StepLosses, Vec<Contribution>)> {
    if batch.is_empty() {
        return Err(Error::Config("empty batch".into()));
    }
    let cfg = &bundle.config;
    let b = batch.len() as f64;
    let s = batch.states.view();
    let mut out = Vec::with_capacity(12);
    let mut push = |group, term, grads| out.push(Contribution { group, term, grads });

    let rec = bundle.cvae.recon_loss(s, batch.actions.view(), noise.recon.view())?;
    push(Group::Encoder, LossTerm::Reconstruction, rec.encoder_grads);
    push(Group::Decoder, LossTerm::Reconstruction, rec.decoder_grads);

    // Improved action from one prior latent, with a sampled session embedding.
    let dec_cache = bundle.cvae.decoder.forward(join(s, noise.prior.view())?.view())?;
    let pass = bundle
        .actor
        .forward(s, dec_cache.output().view(), Some(noise.session.view()))?;
    let (q, dq) = action_gradient(&bundle.critic.q1, s, pass.action.view())?;
    let mean_q = q.sum() / b;
    let d_action = dq * (-1.0 / b);
    let ag = bundle.actor.backward(&pass, d_action.view())?;
    push(Group::SessionEncoder, LossTerm::Objective, ag.f_h);
    push(Group::RequestEncoder, LossTerm::Objective, ag.f_l);
    push(Group::ResidualHead, LossTerm::Objective, ag.f_a);
    let (dec_obj, _) = bundle.cvae.decoder.backward(&dec_cache, ag.d_base.view())?;
    push(Group::Decoder, LossTerm::Objective, dec_obj);

    let next = batch.next_states.view();
    let t_base = bundle
        .target
        .decoder
        .predict(join(next, noise.target_prior.view())?.view())?;
    let t_action = bundle.target.actor.improved_action(next, t_base.view(), None)?;
    let nq1 = q_values(&bundle.target.critic.q1, next, t_action.view())?;
    let nq2 = q_values(&bundle.target.critic.q2, next, t_action.view())?;
    let y = td_targets(batch.rewards.view(), batch.done.view(), nq1.view(), nq2.view(), cfg.gamma);
    let (td1, g1) = td_loss_and_grads(&bundle.critic.q1, s, batch.actions.view(), y.view())?;
    let (td2, g2) = td_loss_and_grads(&bundle.critic.q2, s, batch.actions.view(), y.view())?;
    push(Group::Q1, LossTerm::TemporalDifference, g1);
    push(Group::Q2, LossTerm::TemporalDifference, g2);

    let zeros = Array2::zeros(pass.enc.mu_h.raw_dim());
    let exp = expressiveness_loss(&bundle.estimator, pass.enc.z_h.view(), batch.rewards.view())?;
    push(
        Group::RewardEstimator,
        LossTerm::Expressiveness,
        exp.estimator_grads.scaled(cfg.w_exp),
    );
    let h_exp = bundle
        .actor
        .session_backward(&pass, exp.d_z_h.view(), zeros.view(), zeros.view())?;
    push(Group::SessionEncoder, LossTerm::Expressiveness, h_exp.scaled(cfg.w_exp));

    let con = conciseness_loss(pass.enc.mu_h.view(), pass.enc.log_sigma_h.view())?;
    let h_con = bundle
        .actor
        .session_backward(&pass, zeros.view(), con.d_mu.view(), con.d_log_sigma.view())?;
    push(Group::SessionEncoder, LossTerm::Conciseness, h_con.scaled(cfg.w_con));

    let losses = StepLosses {
        rec: rec.loss,
        td1,
        td2,
        exp: exp.loss,
        con: con.loss,
        mean_q,
    };
    Ok((losses, out))
}

/// The scalar whose gradient the non-critic groups follow.
pub fn composite_objective(losses: &StepLosses, w_exp: f64, w_con: f64) -> f64 {
    losses.rec - losses.mean_q + w_exp * losses.exp + w_con * losses.con
}

/// Sums contributions per group.
pub fn group_gradients(bundle: &ModelBundle, contributions: &[Contribution]) -> Vec<(Group, MlpGrads)> {
    Group::ALL
        .iter()
        .map(|&g| {
            let mut total = MlpGrads::zeros_like(bundle.net(g));
            for c in contributions.iter().filter(|c| c.group == g) {
                total.add_assign(&c.grads);
            }
            (g, total)
        })
        .collect()
}

/// One full learning iteration: gradients for every group at the current
/// parameters, one Adam step per group, then the target soft update.
pub fn train_step(bundle: &mut ModelBundle, batch: &Batch, noise: &StepNoise) -> Result<StepReport> {
    let (losses, contributions) = compute_gradients(bundle, batch, noise)?;
    let iteration = bundle.iteration;
    if !losses.all_finite() {
        return Err(Error::NonFinite {
            iteration,
            what: format!("loss {losses:?}"),
        });
    }
    let taps = GradientTaps::record(&contributions);
    let totals = group_gradients(bundle, &contributions);
    if let Some((g, _)) = totals.iter().find(|(_, grads)| !grads.is_finite()) {
        return Err(Error::NonFinite {
            iteration,
            what: format!("gradient for {}", g.name()),
        });
    }
    let mut optimizers = std::mem::take(&mut bundle.optimizers);
    let mut result = Ok(());
    for ((g, grads), (og, state)) in totals.iter().zip(optimizers.iter_mut()) {
        debug_assert_eq!(g, og);
        let lr = bundle.learning_rate(*g);
        result = adam_step(bundle.net_mut(*g), grads, state, lr);
        if result.is_err() {
            break;
        }
    }
    bundle.optimizers = optimizers;
    result?;
    bundle.soft_update_targets()?;
    bundle.iteration += 1;
    Ok(StepReport { losses, taps })
}
