//! Property checks behind the `check` subcommand.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autodiff::Mlp;
use crate::error::Result;
use crate::formula::{AtomFn, AtomRegistry, Formula, Modality};
use crate::modal::{check_concentration, population_oracle, tau_limit_check, ConcentrationBound, Evaluator, OperatorConfig};
use crate::sde::{derive_seed, BaseDrift, EvalContext, SdeLibrary, SdeSpec};
use crate::training::{total_loss, FormulaTarget, LambdaSchedule, LossWeights, Objective, Problem};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Self { name: name.into(), passed, detail }
    }
}

fn boxed(atom: &str) -> Formula {
    Formula::necessity(Modality::Temporal, None, Formula::atom(atom))
}

fn diamond(atom: &str) -> Formula {
    Formula::possibility(Modality::Temporal, None, Formula::atom(atom))
}

fn brownian(sigma: f64, drift: f64, horizon: f64) -> SdeLibrary {
    let spec = SdeSpec::new("bm", 1, horizon).with_base(BaseDrift::Constant { value: vec![drift] }).with_sigma(sigma);
    SdeLibrary::new().with(Modality::Temporal, spec)
}

/// Box never exceeds the atom's present value by more than the slack.
pub fn soundness_gap(instances: usize, seed: u64) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ctx = EvalContext::default();
    let mut worst = f64::NEG_INFINITY;
    for i in 0..instances {
        let lib = brownian(rng.random_range(0.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(0.2..2.0));
        let (wt, b) = (rng.random_range(-3.0..3.0), rng.random_range(-1.0..1.0));
        let atom = if rng.random_bool(0.5) { AtomFn::tanh(vec![wt], b) } else { AtomFn::linear(vec![wt], b) };
        let atoms = AtomRegistry::new().with("a", atom);
        let cfg = OperatorConfig::default()
            .with_n_mc(rng.random_range(1..64))
            .with_k_steps(rng.random_range(2..24))
            .with_taus(rng.random_range(0.01..1.0));
        let ev = Evaluator::new(&lib, &atoms, &cfg, &ctx);
        let w = [rng.random_range(-2.0..2.0)];
        let here = ev.eval(&Formula::atom("a"), &w, 0)?.lower;
        let lb = ev.eval(&boxed("a"), &w, derive_seed(seed, i as u64, 0))?.lower;
        worst = worst.max(lb - here - cfg.soundness_slack(cfg.k_steps));
    }
    Ok(CheckResult::new("gap", worst <= 1e-9, format!("{instances} instances, worst excess over slack {worst:.3e}")))
}

/// Brownian paths keep Box and Diamond apart; frozen paths merge them.
pub fn collapse(seed: u64) -> Result<Vec<CheckResult>> {
    let atoms = AtomRegistry::new().with("p", AtomFn::tanh(vec![1.0], 0.0));
    let cfg = OperatorConfig::default().with_taus(0.3).with_n_mc(256);
    let ctx = EvalContext::default();
    let spread = |sigma: f64| -> Result<f64> {
        let lib = brownian(sigma, 0.0, 1.0);
        let ev = Evaluator::new(&lib, &atoms, &cfg, &ctx);
        Ok(ev.eval(&diamond("p"), &[0.0], seed)?.upper - ev.eval(&boxed("p"), &[0.0], seed)?.lower)
    };
    let (live, frozen) = (spread(1.0)?, spread(0.0)?);
    Ok(vec![
        CheckResult::new("non_collapse", live >= 0.2, format!("U_diamond - L_box = {live:.4} (need >= 0.2)")),
        CheckResult::new("collapse", frozen.abs() <= 1e-9, format!("|U_diamond - L_box| = {frozen:.3e} at sigma 0")),
    ])
}

/// Drift into the clip floor, where the hard minimum is attained.
pub fn tau_limits(seed: u64) -> Result<CheckResult> {
    let lib = brownian(1.0, -4.0, 1.0);
    let atoms = AtomRegistry::new().with("z", AtomFn::linear(vec![1.0], 0.0));
    let cfg = OperatorConfig::default();
    let ctx = EvalContext::default();
    let rep = tau_limit_check(&boxed("z"), &[0.0], &lib, &atoms, &cfg, &ctx, &[1.0, 0.3, 0.1, 0.03, 0.01], seed)?;
    let slack = |tau: f64| rep.rows.iter().find(|r| r.tau == tau).map_or(f64::NAN, |r| r.slack);
    let ratio = slack(0.03) / slack(1.0);
    let ok = rep.monotone && rep.terminal_error < 0.01 * cfg.clip && ratio < 0.25;
    Ok(CheckResult::new(
        "tau_limit",
        ok,
        format!("|L(0.01) - hard min| = {:.3e}, slack ratio 0.03/1 = {ratio:.3}", rep.terminal_error),
    ))
}

/// Empirical deviation rate at the path count the tail bound prescribes.
pub fn concentration(trials: usize, seed: u64) -> Result<CheckResult> {
    let bound = ConcentrationBound::new(1.0, 0.1, 0.05)?;
    let tau = 0.5;
    let n = bound.required_n_mc(tau);
    let lib = brownian(1.0, 0.0, 1.0);
    let atoms = AtomRegistry::new().with("p", AtomFn::tanh(vec![1.0], 0.0));
    let cfg = OperatorConfig { clip: 0.5, n_mc: n, ..OperatorConfig::default().with_taus(tau) };
    let ctx = EvalContext::default();
    let f = boxed("p");
    let pop = population_oracle(&f, &[0.0], &lib, &atoms, &cfg, &ctx, 65536, derive_seed(seed, 1, 0))?.lower;
    let rep = check_concentration(&f, &[0.0], &lib, &atoms, &cfg, &ctx, &bound, trials, pop, seed)?;
    let ok = !rep.violation && rep.empirical_rate <= bound.delta + rep.allowance;
    Ok(CheckResult::new(
        "concentration",
        ok,
        format!(
            "n_mc {n}, {} of {trials} trials off by >= {}, bound {:.4}",
            rep.failures, bound.epsilon, rep.theoretical_bound
        ),
    ))
}

fn nudge(lib: &mut SdeLibrary, index: usize, delta: f64) {
    let mut i = 0;
    for (_, spec) in lib.iter_mut() {
        for net in spec.networks_mut() {
            for t in net.params_mut() {
                if index < i + t.numel() {
                    t.values_mut()[index - i] += delta;
                    return;
                }
                i += t.numel();
            }
        }
    }
}

/// Backpropagated loss gradient against central differences on a 1-D toy.
pub fn gradients(seed: u64) -> Result<CheckResult> {
    let spec = SdeSpec::new("toy", 1, 1.0).with_correction(Mlp::new(&[1, 4, 1], seed, 1.0)?).with_sigma(0.5);
    let mut problem = Problem {
        library: SdeLibrary::new().with(Modality::Temporal, spec),
        atoms: AtomRegistry::new().with("p", AtomFn::tanh(vec![1.5], 0.2)),
        cfg: OperatorConfig { n_mc: 8, k_steps: 5, tau_s: 0.2, tau_omega: 0.2, ..Default::default() },
        targets: vec![FormulaTarget::new("box_p", boxed("p"), Objective::Maximize)],
        weights: LossWeights { lambda_linn: LambdaSchedule::Constant { value: 1.0 }, ..Default::default() },
        ..Default::default()
    };
    let batch = vec![vec![0.3], vec![-0.6]];
    total_loss(&mut problem, &batch, 0, seed)?;
    let analytic: Vec<f64> = problem
        .library
        .networks()
        .iter()
        .flat_map(|(_, m)| m.params().flat_map(|t| t.grad().map_or(vec![0.0; t.numel()], <[f64]>::to_vec)))
        .collect();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for (i, a) in analytic.iter().enumerate() {
        nudge(&mut problem.library, i, h);
        let up = total_loss(&mut problem, &batch, 0, seed)?.total;
        nudge(&mut problem.library, i, -2.0 * h);
        let down = total_loss(&mut problem, &batch, 0, seed)?.total;
        nudge(&mut problem.library, i, h);
        let fd = (up - down) / (2.0 * h);
        worst = worst.max((fd - a).abs() / (fd.abs().max(a.abs()) + 1e-7));
    }
    Ok(CheckResult::new(
        "gradients",
        worst <= 1e-3,
        format!("{} parameters, worst relative error {worst:.3e}", analytic.len()),
    ))
}

/// Every check, in a fixed order.
pub fn run_checks(seed: u64) -> Result<Vec<CheckResult>> {
    let mut out = vec![soundness_gap(1000, seed)?];
    out.extend(collapse(seed)?);
    out.push(tau_limits(seed)?);
    out.push(concentration(400, seed)?);
    out.push(gradients(seed)?);
    Ok(out)
}
