//! Composite loss, gradient training through the unrolled solver, and
//! contradiction mining.

mod loss;
mod mining;
mod optim;
mod train;

pub use loss::{
    to_jsonl, total_loss, FormulaTarget, LambdaSchedule, LossReport, LossWeights, Objective, PhysicsTerm, Problem,
    TaskData,
};
pub use mining::{contradiction, mine_contradictions, MinedWorld};
pub use optim::{Adam, AdamConfig};
pub use train::{
    load_checkpoint, save_checkpoint, train, BatchSource, MiningConfig, TrainConfig, TrainOutcome, DIVERGENCE_LIMIT,
};
