//! Experiment configuration, the three case studies, and metric emission.

pub mod check;
pub mod common;
mod config;
mod custom;
mod deontic;
mod lorenz;
mod metrics;
mod swarm;

pub use config::{
    CustomParams, CustomTraining, DiffusionBlock, ExperimentConfig, ExperimentName, NetBlock, SdeBlock, TargetBlock,
};
pub use custom::run_custom;
pub use deontic::{run_deontic, DeonticParams};
pub use lorenz::{run_lorenz, LorenzParams, LorenzVariant};
pub use metrics::{MetricsFile, MetricsRecord, METRICS_SCHEMA};
pub use swarm::{run_swarm, SwarmParams, BELIEVER, SWARM};

use crate::error::Result;
use crate::formula::AtomRegistry;
use crate::sde::{EvalContext, SdeLibrary};

/// A named text file produced by a run.
#[derive(Clone, Debug, PartialEq)]
pub struct Artifact {
    pub name: String,
    pub contents: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunOutput {
    pub metrics: MetricsFile,
    pub artifacts: Vec<Artifact>,
}

/// What a one-off evaluation needs: the experiment's (untrained) library,
/// its atoms, and its context.
#[derive(Clone, Debug)]
pub struct ModalSetup {
    pub library: SdeLibrary,
    pub atoms: AtomRegistry,
    pub ctx: EvalContext,
    pub dim: usize,
}

fn missing(block: &str) -> crate::Error {
    crate::Error::Config(format!("missing `{block}` block"))
}

pub fn setup(cfg: &ExperimentConfig) -> Result<ModalSetup> {
    match cfg.name {
        ExperimentName::Swarm => swarm::setup(cfg.swarm.as_ref().ok_or_else(|| missing("swarm"))?),
        ExperimentName::Lorenz => lorenz::setup(cfg.lorenz.as_ref().ok_or_else(|| missing("lorenz"))?, cfg.seed),
        ExperimentName::Deontic => deontic::setup(cfg.deontic.as_ref().ok_or_else(|| missing("deontic"))?),
        ExperimentName::Custom => custom::setup(cfg),
    }
}

/// Runs the experiment named in `cfg`.
pub fn run(cfg: &ExperimentConfig) -> Result<RunOutput> {
    cfg.validate()?;
    match cfg.name {
        ExperimentName::Swarm => run_swarm(cfg),
        ExperimentName::Lorenz => run_lorenz(cfg),
        ExperimentName::Deontic => run_deontic(cfg),
        ExperimentName::Custom => run_custom(cfg),
    }
}
