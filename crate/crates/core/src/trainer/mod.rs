//! The learning loop: CVAE reconstruction, residual policy improvement,
//! twin-critic TD learning and the session-embedding regularizers.

mod bundle;
mod config;
mod data;
mod step;
mod train;

pub use bundle::{Group, ModelBundle, StateDims, TargetNets, RESACT_KIND};
pub use config::TrainConfig;
pub use data::{action_matrix, state_matrix, Batch, ObsNormalizer, Observations, TrainingData};
pub use step::{
    composite_objective, compute_gradients, group_gradients, train_step, Contribution, GradientTaps,
    LossTerm, StepLosses, StepNoise, StepReport,
};
pub use train::{
    check_inputs, dims_of, fit_normalizer, run_learner, train, Learner, write_config_sidecar, write_metrics_csv, MetricsRow, TrainOptions,
    TrainOutcome, Validation, METRICS_HEADER,
};
pub(crate) use train::sample_indices;
