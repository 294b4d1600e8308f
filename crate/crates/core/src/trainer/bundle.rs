use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{ObsNormalizer, TrainConfig};
use crate::actor::ResidualActor;
use crate::critic::TwinCritic;
use crate::cvae::Cvae;
use crate::numerics::{AdamState, Mlp, TensorStore};
use crate::regularizers::RewardEstimator;
use crate::{Error, Result};

pub const RESACT_KIND: &str = "resact";

/// Parameter groups, each with its own optimizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Group {
    Encoder,
    Decoder,
    SessionEncoder,
    RequestEncoder,
    ResidualHead,
    Q1,
    Q2,
    RewardEstimator,
}

impl Group {
    pub const ALL: [Group; 8] = [
        Group::Encoder,
        Group::Decoder,
        Group::SessionEncoder,
        Group::RequestEncoder,
        Group::ResidualHead,
        Group::Q1,
        Group::Q2,
        Group::RewardEstimator,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Group::Encoder => "encoder",
            Group::Decoder => "decoder",
            Group::SessionEncoder => "f_h",
            Group::RequestEncoder => "f_l",
            Group::ResidualHead => "f_a",
            Group::Q1 => "q1",
            Group::Q2 => "q2",
            Group::RewardEstimator => "o",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateDims {
    pub session_dim: usize,
    pub request_dim: usize,
    pub action_dim: usize,
}

impl StateDims {
    pub fn state_dim(&self) -> usize {
        self.session_dim + self.request_dim
    }
}

/// Slowly tracking copies of the nets used for bootstrapped targets.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetNets {
    pub decoder: Mlp,
    pub actor: ResidualActor,
    pub critic: TwinCritic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub config: TrainConfig,
    pub dims: StateDims,
    pub normalizer: ObsNormalizer,
    pub cvae: Cvae,
    pub actor: ResidualActor,
    pub critic: TwinCritic,
    pub estimator: RewardEstimator,
    pub target: TargetNets,
    pub optimizers: Vec<(Group, AdamState)>,
    pub iteration: usize,
}

impl ModelBundle {
    pub fn new<R: Rng + ?Sized>(
        config: &TrainConfig,
        dims: StateDims,
        normalizer: ObsNormalizer,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        if normalizer.dim() != dims.state_dim() {
            return Err(Error::Config("normalizer width does not match the state".into()));
        }
        let s = dims.state_dim();
        let latent = config.latent_dim.unwrap_or(dims.action_dim);
        let cvae = Cvae::new(s, dims.action_dim, latent, &config.hidden, rng);
        let actor = ResidualActor::new(
            dims.session_dim,
            dims.request_dim,
            dims.action_dim,
            config.z_h_dim,
            config.z_l_dim,
            &config.hidden,
            config.rho_max,
            rng,
        );
        let critic = TwinCritic::new(s, dims.action_dim, &config.hidden, rng);
        let estimator = RewardEstimator::new(config.z_h_dim, &config.hidden, config.reward_head, rng);
        let target = TargetNets {
            decoder: cvae.decoder.clone(),
            actor: actor.clone(),
            critic: critic.clone(),
        };
        let mut bundle = ModelBundle {
            config: config.clone(),
            dims,
            normalizer,
            cvae,
            actor,
            critic,
            estimator,
            target,
            optimizers: Vec::new(),
            iteration: 0,
        };
        bundle.optimizers = Group::ALL
            .iter()
            .map(|&g| (g, AdamState::new(bundle.net(g))))
            .collect();
        Ok(bundle)
    }

    pub fn net(&self, group: Group) -> &Mlp {
        match group {
            Group::Encoder => &self.cvae.encoder,
            Group::Decoder => &self.cvae.decoder,
            Group::SessionEncoder => &self.actor.f_h,
            Group::RequestEncoder => &self.actor.f_l,
            Group::ResidualHead => &self.actor.f_a,
            Group::Q1 => &self.critic.q1,
            Group::Q2 => &self.critic.q2,
            Group::RewardEstimator => &self.estimator.o,
        }
    }

    pub fn net_mut(&mut self, group: Group) -> &mut Mlp {
        match group {
            Group::Encoder => &mut self.cvae.encoder,
            Group::Decoder => &mut self.cvae.decoder,
            Group::SessionEncoder => &mut self.actor.f_h,
            Group::RequestEncoder => &mut self.actor.f_l,
            Group::ResidualHead => &mut self.actor.f_a,
            Group::Q1 => &mut self.critic.q1,
            Group::Q2 => &mut self.critic.q2,
            Group::RewardEstimator => &mut self.estimator.o,
        }
    }

    pub fn learning_rate(&self, group: Group) -> f64 {
        match group {
            Group::Encoder | Group::Decoder => self.config.cvae_lr,
            Group::Q1 | Group::Q2 => self.config.critic_lr,
            _ => self.config.actor_lr,
        }
    }

    /// `θ′ ← τθ + (1 − τ)θ′` for every target net.
    pub fn soft_update_targets(&mut self) -> Result<()> {
        let tau = self.config.tau;
        crate::numerics::soft_update(&self.cvae.decoder, &mut self.target.decoder, tau)?;
        crate::numerics::soft_update(&self.actor.f_h, &mut self.target.actor.f_h, tau)?;
        crate::numerics::soft_update(&self.actor.f_l, &mut self.target.actor.f_l, tau)?;
        crate::numerics::soft_update(&self.actor.f_a, &mut self.target.actor.f_a, tau)?;
        self.target.critic.soft_update_from(&self.critic, tau)?;
        Ok(())
    }

    pub fn to_store(&self) -> TensorStore {
        let meta = serde_json::json!({
            "kind": RESACT_KIND,
            "config": self.config,
            "dims": self.dims,
            "reward_head": self.estimator.head,
            "iteration": self.iteration,
        });
        let mut store = TensorStore::new(meta);
        store.put_vec("normalizer/mean", &self.normalizer.mean);
        store.put_vec("normalizer/std", &self.normalizer.std);
        for g in Group::ALL {
            store.put_mlp(g.name(), self.net(g));
        }
        store.put_mlp("target/decoder", &self.target.decoder);
        store.put_mlp("target/f_h", &self.target.actor.f_h);
        store.put_mlp("target/f_l", &self.target.actor.f_l);
        store.put_mlp("target/f_a", &self.target.actor.f_a);
        store.put_mlp("target/q1", &self.target.critic.q1);
        store.put_mlp("target/q2", &self.target.critic.q2);
        for (g, state) in &self.optimizers {
            store.put_adam(&format!("adam/{}", g.name()), state);
        }
        store
    }

    pub fn from_store(store: &TensorStore) -> Result<Self> {
        let kind = store.meta.get("kind").and_then(|k| k.as_str()).unwrap_or("");
        if kind != RESACT_KIND {
            return Err(Error::Checkpoint(format!("expected a {RESACT_KIND} checkpoint, found `{kind}`")));
        }
        let field = |k: &str| {
            store
                .meta
                .get(k)
                .cloned()
                .ok_or_else(|| Error::Checkpoint(format!("missing `{k}` in checkpoint metadata")))
        };
        let config: TrainConfig = serde_json::from_value(field("config")?)?;
        let dims: StateDims = serde_json::from_value(field("dims")?)?;
        let head = serde_json::from_value(field("reward_head")?)?;
        let iteration: usize = serde_json::from_value(field("iteration")?)?;
        let normalizer = ObsNormalizer {
            mean: store.vec("normalizer/mean")?,
            std: store.vec("normalizer/std")?,
        };
        let actor = |prefix: &str| -> Result<ResidualActor> {
            Ok(ResidualActor {
                f_h: store.mlp(&format!("{prefix}f_h"))?,
                f_l: store.mlp(&format!("{prefix}f_l"))?,
                f_a: store.mlp(&format!("{prefix}f_a"))?,
                rho_max: config.rho_max,
            })
        };
        let bundle = ModelBundle {
            dims,
            normalizer,
            cvae: Cvae {
                encoder: store.mlp("encoder")?,
                decoder: store.mlp("decoder")?,
            },
            actor: actor("")?,
            critic: TwinCritic {
                q1: store.mlp("q1")?,
                q2: store.mlp("q2")?,
            },
            estimator: RewardEstimator {
                o: store.mlp("o")?,
                head,
            },
            target: TargetNets {
                decoder: store.mlp("target/decoder")?,
                actor: actor("target/")?,
                critic: TwinCritic {
                    q1: store.mlp("target/q1")?,
                    q2: store.mlp("target/q2")?,
                },
            },
            optimizers: Group::ALL
                .iter()
                .map(|&g| Ok((g, store.adam(&format!("adam/{}", g.name()))?)))
                .collect::<Result<_>>()?,
            iteration,
            config,
        };
        if bundle.normalizer.dim() != bundle.dims.state_dim() || bundle.actor.action_dim() != dims.action_dim {
            return Err(Error::Checkpoint("network shapes do not match the recorded dims".into()));
        }
        Ok(bundle)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(self.to_store().save(path)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        ModelBundle::from_store(&TensorStore::load(path)?)
    }
}
