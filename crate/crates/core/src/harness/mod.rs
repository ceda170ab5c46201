//! Experiment orchestration: configuration, the demand-window sweep, the
//! online learning loop, reward post-processing and CSV export.

mod config;
mod export;
mod metrics;
mod run;

use thiserror::Error;

pub use config::{Arm, ExperimentConfig, SessionPlan, TopologySource, CONFIG_VERSION};
pub use export::{export_csv, export_summary, read_csv, run_file_name, write_outputs};
pub use metrics::{normalize_rewards, smooth_rewards, Biquad, DEFAULT_CUTOFF, SMOOTH_PADLEN};
pub use run::{
    apply_env_overrides, build_sessions, run_experiment, run_experiment_with, run_single, EpochRow, RunRecord, RunSpec, RunSummary,
    ENV_JOBS, ENV_OUTPUT_DIR,
};

use crate::agent::AgentError;
use crate::baselines::NumError;
use crate::objective::ObjectiveError;
use crate::sim::SimError;
use crate::topology::TopologyError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid experiment config: {0}")]
    Config(String),
    #[error("series of length {len} is too short to smooth (need at least {min})")]
    SeriesTooShort { len: usize, min: usize },
    #[error("{arm} run (seed {seed}) diverged at epoch {epoch}: {source}")]
    Diverged {
        arm: Arm,
        seed: u64,
        epoch: usize,
        #[source]
        source: AgentError,
    },
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Num(#[from] NumError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
