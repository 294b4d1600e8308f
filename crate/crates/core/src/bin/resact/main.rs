//! Command-line driver: data generation, training, evaluation, rollouts and
//! plot tables. Failures print one JSON object on stderr and exit nonzero.

mod commands;
mod plot;
mod run_config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use resact::baselines::Method;
use resact::env::RewardMode;

#[derive(Parser)]
#[command(name = "resact", version, about = "Residual-actor offline RL on a simulated recommender")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate users under the logging policy and write a dataset.
    GenData(GenDataArgs),
    /// Train ResAct or a baseline on a dataset.
    Train(TrainArgs),
    /// Score a checkpoint (or the logging policy) on a test set.
    Eval(EvalArgs),
    /// Run a policy in the simulator and report true returns.
    Rollout(RolloutArgs),
    /// Aggregate metrics and evaluation reports into plot-ready tables.
    Plot(PlotArgs),
}

/// Options shared by commands that read the merged run configuration.
#[derive(Args, Clone)]
struct ConfigArgs {
    /// JSON file with any of the `env`, `train`, `eval` and `td3` sections.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Training defaults: `desk` (small and fast) or `full`.
    #[arg(long, default_value = "desk")]
    profile: String,
}

#[derive(Args)]
struct GenDataArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Output directory (defaults to `$RESACT_RUN_DIR/data-seed<seed>`).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    users: Option<usize>,
    #[arg(long)]
    sessions: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    reward_mode: Option<RewardMode>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Dataset directory written by `gen-data`.
    #[arg(long)]
    data: PathBuf,
    /// Validation dataset for the NCIS learning curve.
    #[arg(long)]
    val: Option<PathBuf>,
    #[arg(long, default_value = "resact")]
    method: Method,
    /// Run directory (defaults to `$RESACT_RUN_DIR/train-<method>-seed<seed>`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Relabel rewards before training.
    #[arg(long)]
    reward_mode: Option<RewardMode>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    n_estimators: Option<usize>,
    #[arg(long)]
    w_exp: Option<f64>,
    #[arg(long)]
    w_con: Option<f64>,
    #[arg(long)]
    eval_interval: Option<usize>,
    #[arg(long)]
    log_interval: Option<usize>,
    /// Comma-separated seeds; each runs as its own process under `<out>/seed-<k>`.
    #[arg(long, value_delimiter = ',')]
    sweep: Option<Vec<u64>>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Checkpoint to score; omit together with `--behavior` to score the logging policy.
    #[arg(long, required_unless_present = "behavior")]
    checkpoint: Option<PathBuf>,
    #[arg(long, conflicts_with = "checkpoint")]
    behavior: bool,
    /// Test dataset directory.
    #[arg(long)]
    data: PathBuf,
    /// `exact` (the simulator's logging policy) or a cvae_bc / resact checkpoint path.
    #[arg(long, default_value = "exact")]
    behavior_proxy: String,
    #[arg(long)]
    n_estimators: Option<usize>,
    #[arg(long)]
    reward_mode: Option<RewardMode>,
    /// Also run the policy in the simulator on the test users.
    #[arg(long)]
    true_rollout: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Report path (defaults to stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RolloutArgs {
    /// Dataset whose users are simulated.
    #[arg(long)]
    data: PathBuf,
    /// `behavior`, `random` or a checkpoint path.
    #[arg(long, default_value = "behavior")]
    policy: String,
    #[arg(long)]
    n_estimators: Option<usize>,
    #[arg(long)]
    sessions: Option<usize>,
    #[arg(long)]
    reward_mode: Option<RewardMode>,
    #[arg(long, default_value_t = 0.9)]
    gamma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PlotArgs {
    /// Run directories or report files; directories are searched recursively.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    /// Output directory (defaults to `$RESACT_RUN_DIR/plots`).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData(a) => commands::gen_data(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Rollout(a) => commands::rollout(a),
        Command::Plot(a) => plot::run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let mut body = serde_json::json!({ "error": { "kind": error_kind(&e), "message": format!("{e:#}") } });
            if let Some(resact::Error::NonFinite { iteration, .. }) = e.downcast_ref::<resact::Error>() {
                body["error"]["iteration"] = (*iteration).into();
            }
            eprintln!("{body}");
            ExitCode::FAILURE
        }
    }
}

/// Category of the innermost library error, or `cli` for argument and file problems.
fn error_kind(e: &anyhow::Error) -> &'static str {
    for cause in e.chain() {
        if let Some(err) = cause.downcast_ref::<resact::Error>() {
            return err.kind();
        }
        if cause.downcast_ref::<resact::env::EnvError>().is_some() {
            return "env";
        }
    }
    "cli"
}
