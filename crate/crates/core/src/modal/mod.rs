//! Interval-valued modal operators as entropic risk over SDE sample paths,
//! plus the diagnostics built on them.

mod analysis;
mod config;
mod eval;
mod metrics;
mod report;

pub use analysis::{
    axiom_report, check_concentration, population_oracle, tau_limit_check, AxiomReport, ConcentrationReport,
    ModalityAxioms, TauLimitReport, TauRow, DEFAULT_ORACLE_PATHS,
};
pub use config::{ConcentrationBound, OperatorConfig, TruthInterval, TAU_FLOOR};
pub use eval::{softmax, softmin, Evaluator, GraphEvaluator, PathScores, VarInterval};
pub use metrics::{
    accessibility, normalize, sliced_wasserstein, wasserstein_1d, wasserstein_gap, Estimate, SLICED_PROJECTIONS,
};
pub use report::{plot_csv, PlotRow, PLOT_HEADER};
