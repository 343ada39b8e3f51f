//! Soft actor-critic over the latent LQR policy, the training loop, and
//! the two-stage baseline.

pub mod baseline;
pub mod buffer;
pub mod eval;
pub mod sac;
pub mod train;

pub use baseline::{fit_baseline, train_two_stage_baseline, BaselineModel};
pub use buffer::{Batch, ReplayBuffer, Transition};
pub use eval::{evaluate, rollout, Controller, EvalEpisode, LatentController};
pub use sac::{critic_target, update_temperature, Agent, LossReport};
pub use train::{train, MetricRow, Trainer, TrainingRun};

use crate::cli::config::Config;
use crate::error::Result;
use crate::registry::Registry;

/// `(config, resume) → run`.
pub type TrainerFn = fn(&Config, bool) -> Result<TrainingRun>;

pub fn trainers() -> Registry<TrainerFn> {
    Registry::<TrainerFn>::new("trainer")
        .register("task", train)
        .register("two-stage", |cfg, _| train_two_stage_baseline(cfg))
}

/// Trainer name implied by a config.
pub fn trainer_name(cfg: &Config) -> &'static str {
    if cfg.baseline {
        "two-stage"
    } else {
        "task"
    }
}
