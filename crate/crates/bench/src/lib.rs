//! Fixtures shared by the benchmarks.

use fluidlogic::autodiff::Mlp;
use fluidlogic::formula::{AtomFn, AtomRegistry, Modality};
use fluidlogic::modal::OperatorConfig;
use fluidlogic::sde::{EvalContext, SdeLibrary, SdeSpec};
use fluidlogic::training::{FormulaTarget, Objective, Problem};

/// 2-D Brownian motion with a learned drift and a tanh atom `p`.
pub fn brownian_library(hidden: usize) -> SdeLibrary {
    let net = Mlp::new(&[2, hidden, 2], 1, 0.5).expect("valid widths");
    let spec = SdeSpec::new("bm", 2, 1.0).with_correction(net).with_sigma(1.0);
    SdeLibrary::new().with(Modality::Temporal, spec)
}

pub fn atoms() -> AtomRegistry {
    AtomRegistry::new().with("p", AtomFn::tanh(vec![1.0, -0.5], 0.1))
}

pub fn context() -> EvalContext {
    EvalContext::default()
}

pub fn operator(n_mc: usize, k_steps: usize) -> OperatorConfig {
    OperatorConfig::default().with_n_mc(n_mc).with_k_steps(k_steps)
}

/// Maximize `G(p)` over a batch of worlds.
pub fn problem(n_mc: usize) -> Problem {
    Problem {
        library: brownian_library(16),
        atoms: atoms(),
        cfg: operator(n_mc, 32),
        targets: vec![FormulaTarget::new(
            "box_p",
            fluidlogic::formula::parse("G(p)").expect("valid formula"),
            Objective::Maximize,
        )],
        ..Default::default()
    }
}
