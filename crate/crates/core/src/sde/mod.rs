//! The SDE library: analytic base drifts with learned corrections, seeded
//! Euler-Maruyama integration, and sequential composition.

mod drift;
pub mod rng;
mod simulate;
mod spec;

pub use drift::BaseDrift;
pub use rng::{derive_seed, NoisePath};
pub use simulate::{
    compose, ks_statistic, simulate, simulate_graph, simulate_with, DivergencePolicy, GraphPaths, PathBundle,
    RowStream, SimOptions, ESCAPE_NORM,
};
pub use spec::{resolve_init, BoundSde, Diffusion, EvalContext, InitPolicy, ResolvedInit, SdeLibrary, SdeSpec};
