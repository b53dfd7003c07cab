//! Reference values and diagnostics built on the evaluator: the large-sample
//! oracle, the concentration experiment, temperature limits and the axiom
//! table.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::formula::{AtomRegistry, Formula, Modality};
use crate::modal::{ConcentrationBound, Evaluator, OperatorConfig, TruthInterval};
use crate::sde::{compose, derive_seed, ks_statistic, simulate, BaseDrift, EvalContext, InitPolicy, SdeLibrary, SdeSpec};

pub const DEFAULT_ORACLE_PATHS: usize = 65536;

/// The evaluator run with `n_oracle` paths.
pub fn population_oracle(
    f: &Formula,
    w: &[f64],
    library: &SdeLibrary,
    atoms: &AtomRegistry,
    cfg: &OperatorConfig,
    ctx: &EvalContext,
    n_oracle: usize,
    seed: u64,
) -> Result<TruthInterval> {
    let big = cfg.clone().with_n_mc(n_oracle);
    Evaluator::new(library, atoms, &big, ctx).eval(f, w, seed)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConcentrationReport {
    pub n_mc: usize,
    pub trials: usize,
    pub epsilon: f64,
    pub delta: f64,
    pub c_of_c: f64,
    pub l_pop: f64,
    pub failures: usize,
    pub empirical_rate: f64,
    pub theoretical_bound: f64,
    /// Three binomial standard errors at the theoretical rate.
    pub allowance: f64,
    pub max_deviation: f64,
    pub violation: bool,
}

/// Re-evaluates `f` with `trials` independent seeds and compares the rate of
/// `|L - L_pop| >= epsilon` with the exponential tail bound.
#[allow(clippy::too_many_arguments)]
pub fn check_concentration(
    f: &Formula,
    w: &[f64],
    library: &SdeLibrary,
    atoms: &AtomRegistry,
    cfg: &OperatorConfig,
    ctx: &EvalContext,
    bound: &ConcentrationBound,
    trials: usize,
    l_pop: f64,
    seed: u64,
) -> Result<ConcentrationReport> {
    if trials < 100 {
        return Err(Error::Contract(format!("concentration check needs at least 100 trials, got {trials}")));
    }
    let ev = Evaluator::new(library, atoms, cfg, ctx);
    ev.check(f, w.len())?;
    let seeds: Vec<u64> = (0..trials as u64).map(|t| derive_seed(seed, t, 0xC0C0)).collect();
    let worlds = vec![w.to_vec(); trials];
    let vals = ev.eval_many(f, &worlds, &seeds)?;
    let devs: Vec<f64> = vals.iter().map(|v| (v.lower - l_pop).abs()).collect();
    let failures = devs.iter().filter(|d| **d >= bound.epsilon).count();
    let empirical_rate = failures as f64 / trials as f64;
    let theoretical_bound = bound.tail_bound(cfg.n_mc, cfg.tau_omega);
    let p = theoretical_bound.min(1.0);
    let allowance = 3.0 * (p * (1.0 - p) / trials as f64).sqrt();
    Ok(ConcentrationReport {
        n_mc: cfg.n_mc,
        trials,
        epsilon: bound.epsilon,
        delta: bound.delta,
        c_of_c: bound.c_of_c(),
        l_pop,
        failures,
        empirical_rate,
        theoretical_bound,
        allowance,
        max_deviation: devs.iter().copied().fold(0.0, f64::max),
        violation: empirical_rate > theoretical_bound + allowance,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TauRow {
    pub tau: f64,
    pub l_box: f64,
    /// `tau_s ln K + tau_omega ln N` at this temperature.
    pub slack: f64,
    /// `l_box - hard_min` on the shared bundle.
    pub excess: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TauLimitReport {
    pub rows: Vec<TauRow>,
    /// Minimum over paths and grid of the body's lower bound.
    pub hard_min: f64,
    /// `L` does not increase as the temperature decreases.
    pub monotone: bool,
    /// `|L(tau_min) - hard_min|`.
    pub terminal_error: f64,
}

/// Evaluates a Box formula at each temperature (both temperatures set to the
/// same value) with a shared seed, so every row sees the same bundle.
#[allow(clippy::too_many_arguments)]
pub fn tau_limit_check(
    f: &Formula,
    w: &[f64],
    library: &SdeLibrary,
    atoms: &AtomRegistry,
    cfg: &OperatorConfig,
    ctx: &EvalContext,
    taus: &[f64],
    seed: u64,
) -> Result<TauLimitReport> {
    if taus.is_empty() || taus.windows(2).any(|p| p[1] >= p[0]) {
        return Err(Error::Contract("temperatures must be strictly descending".into()));
    }
    let mut rows = Vec::with_capacity(taus.len());
    let mut hard_min = f64::INFINITY;
    for &tau in taus {
        let c = cfg.clone().with_taus(tau);
        let ev = Evaluator::new(library, atoms, &c, ctx);
        let scores = ev.path_scores(f, w, seed)?;
        hard_min = scores.hard_min.iter().copied().fold(f64::INFINITY, f64::min);
        let l_box = ev.eval(f, w, seed)?.lower;
        rows.push(TauRow { tau, l_box, slack: c.soundness_slack(scores.k), excess: l_box - hard_min });
    }
    let monotone = rows.windows(2).all(|p| p[1].l_box <= p[0].l_box + 1e-12);
    let terminal_error = (rows.last().unwrap().l_box - hard_min).abs();
    Ok(TauLimitReport { rows, hard_min, monotone, terminal_error })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ModalityAxioms {
    pub modality: String,
    pub true_state_init: bool,
    /// Largest `max(0, L_box - L_atom(w) - slack)` seen.
    pub t_gap: f64,
    /// Smallest `U_diamond - L_box + 2 slack` seen.
    pub d_margin: f64,
    /// Worlds where `L_box > 0` although the atom is violated at `w`.
    pub not_t_witnesses: usize,
    /// KS distance between one run over `2S` and two chained runs over `S`,
    /// maximized over coordinates; `None` for time-dependent SDEs.
    pub semigroup_ks: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AxiomReport {
    pub modalities: Vec<ModalityAxioms>,
}

impl AxiomReport {
    /// The T gap is within tolerance for every modality that starts at the
    /// true state.
    pub fn t_holds(&self, tol: f64) -> bool {
        self.modalities.iter().filter(|m| m.true_state_init).all(|m| m.t_gap <= tol)
    }
}

fn time_homogeneous(spec: &SdeSpec) -> bool {
    fn base(b: &BaseDrift) -> bool {
        match b {
            BaseDrift::TimeSwitch { .. } => false,
            BaseDrift::Sum { terms } => terms.iter().all(base),
            _ => true,
        }
    }
    !spec.time_input && base(&spec.base)
}

/// Axiom diagnostics per modality over the given atoms and worlds.
#[allow(clippy::too_many_arguments)]
pub fn axiom_report(
    library: &SdeLibrary,
    atoms: &AtomRegistry,
    atom_names: &[&str],
    cfg: &OperatorConfig,
    ctx: &EvalContext,
    worlds: &[Vec<f64>],
    semigroup_paths: usize,
    seed: u64,
) -> Result<AxiomReport> {
    let mut out = Vec::new();
    for key in library.keys() {
        let Some(modality) = Modality::from_key(key) else { continue };
        let spec = library.get(&modality)?;
        let ev = Evaluator::new(library, atoms, cfg, ctx);
        let mut t_gap: f64 = 0.0;
        let mut d_margin = f64::INFINITY;
        let mut witnesses = 0;
        for name in atom_names {
            let atom = Formula::atom(*name);
            let boxed = Formula::necessity(modality.clone(), None, atom.clone());
            let dia = Formula::possibility(modality.clone(), None, atom.clone());
            for (i, w) in worlds.iter().enumerate() {
                let s = derive_seed(seed, i as u64, 0xA710);
                let here = ev.eval(&atom, w, s)?.lower;
                let lb = ev.eval(&boxed, w, s)?.lower;
                let ud = ev.eval(&dia, w, s)?.upper;
                let slack = cfg.soundness_slack(cfg.k_steps);
                t_gap = t_gap.max(lb - here - slack);
                d_margin = d_margin.min(ud - lb + 2.0 * slack);
                if lb > 0.0 && here < 0.0 {
                    witnesses += 1;
                }
            }
        }
        let semigroup_ks = if semigroup_paths > 0 && time_homogeneous(spec) && spec.obs_dim == 0 && !worlds.is_empty() {
            let w0 = &worlds[0];
            let long = spec.clone().with_horizon(2.0 * spec.horizon).with_init(InitPolicy::TrueState);
            let one = simulate(&long, w0, semigroup_paths, 2 * cfg.k_steps - 1, seed)?;
            let half = spec.clone().with_init(InitPolicy::TrueState);
            let two = compose(&[&half, &half], w0, semigroup_paths, cfg.k_steps, derive_seed(seed, 1, 1))?;
            let mut worst: f64 = 0.0;
            for j in 0..spec.dim {
                let a: Vec<f64> = (0..semigroup_paths).map(|n| one.terminal(n)[j]).collect();
                let b: Vec<f64> = (0..semigroup_paths).map(|n| two.terminal(n)[j]).collect();
                worst = worst.max(ks_statistic(&a, &b));
            }
            Some(worst)
        } else {
            None
        };
        out.push(ModalityAxioms {
            modality: key.clone(),
            true_state_init: spec.init == InitPolicy::TrueState,
            t_gap: t_gap.max(0.0),
            d_margin,
            not_t_witnesses: witnesses,
            semigroup_ks,
        });
    }
    Ok(AxiomReport { modalities: out })
}
