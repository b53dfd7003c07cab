//! Acceptance suite. Each test prints one `criterion N [PASS|FAIL]` line to
//! stderr (uncaptured) before asserting.

use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use fluidlogic::autodiff::Mlp;
use fluidlogic::formula::{parse, AtomFn, AtomRegistry, Formula, Modality, Window};
use fluidlogic::harness::{self, ExperimentConfig, ExperimentName, MetricsFile, SwarmParams};
use fluidlogic::modal::{check_concentration, population_oracle, tau_limit_check, ConcentrationBound, Evaluator, OperatorConfig};
use fluidlogic::sde::{simulate, BaseDrift, EvalContext, SdeLibrary, SdeSpec};
use fluidlogic::training::{total_loss, FormulaTarget, LambdaSchedule, LossWeights, Objective, Problem};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

// The case studies each get the whole machine so their wall-clock limits
// are measured without contention.
static HEAVY: Mutex<()> = Mutex::new(());

fn report(n: u32, name: &str, passed: bool, detail: &str) {
    let tag = if passed { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "criterion {n} [{tag}] {name}: {detail}");
    assert!(passed, "criterion {n} ({name}) failed: {detail}");
}

fn temporal(spec: SdeSpec) -> SdeLibrary {
    SdeLibrary::new().with(Modality::Temporal, spec)
}

fn g(atom: &str) -> Formula {
    Formula::necessity(Modality::Temporal, None, Formula::atom(atom))
}

fn f(atom: &str) -> Formula {
    Formula::possibility(Modality::Temporal, None, Formula::atom(atom))
}

/// `-tau ln mean exp(-x / tau)`, computed directly.
fn soft_min(xs: &[f64], tau: f64) -> f64 {
    let m = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let s: f64 = xs.iter().map(|x| (-(x - m) / tau).exp()).sum::<f64>() / xs.len() as f64;
    m - tau * s.ln()
}

fn soft_max(xs: &[f64], tau: f64) -> f64 {
    let neg: Vec<f64> = xs.iter().map(|x| -x).collect();
    -soft_min(&neg, tau)
}

#[test]
fn c01_soundness_gap() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1001);
    let ctx = EvalContext::default();
    let mut worst = f64::NEG_INFINITY;
    for i in 0..1000u64 {
        let sigma = rng.random_range(0.0..2.0);
        let drift = rng.random_range(-2.0..2.0);
        let spec = SdeSpec::new("r", 1, rng.random_range(0.2..2.0))
            .with_base(BaseDrift::Constant { value: vec![drift] })
            .with_sigma(sigma);
        let lib = temporal(spec);
        let (a, b) = (rng.random_range(-3.0..3.0), rng.random_range(-1.5..1.5));
        let use_tanh = rng.random_bool(0.5);
        let atom = if use_tanh { AtomFn::tanh(vec![a], b) } else { AtomFn::linear(vec![a], b) };
        let atoms = AtomRegistry::new().with("a", atom);
        let n = rng.random_range(1..64usize);
        let k = rng.random_range(2..24usize);
        let tau_s = rng.random_range(0.01..1.0);
        let tau_w = rng.random_range(0.01..1.0);
        let cfg = OperatorConfig { n_mc: n, k_steps: k, tau_s, tau_omega: tau_w, ..Default::default() };
        let w = rng.random_range(-2.0..2.0);
        let raw = if use_tanh { (a * w + b).tanh() } else { a * w + b };
        let here = raw.clamp(-cfg.clip, cfg.clip);
        let slack = tau_s * (k as f64).ln() + tau_w * (n as f64).ln();
        let lb = Evaluator::new(&lib, &atoms, &cfg, &ctx).eval(&g("a"), &[w], i).unwrap().lower;
        worst = worst.max(lb - here - slack);
    }
    let elapsed = start.elapsed();
    report(
        1,
        "soundness gap",
        worst <= 1e-9 && elapsed < Duration::from_secs(60),
        &format!("1000 instances, max(L_box - phi(w) - slack) = {worst:.3e}, {:.1} s", elapsed.as_secs_f64()),
    );
}

/// Spread of Diamond over Box for Brownian paths, computed from scratch.
fn brownian_spread_oracle(paths: usize, k: usize, tau: f64, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dt = 1.0 / (k - 1) as f64;
    let mut boxes = Vec::with_capacity(paths);
    let mut diamonds = Vec::with_capacity(paths);
    let mut vals = vec![0.0; k];
    for _ in 0..paths {
        let mut z = 0.0f64;
        vals[0] = 0.0;
        for v in vals.iter_mut().skip(1) {
            let e: f64 = rng.sample(StandardNormal);
            z += dt.sqrt() * e;
            *v = z.tanh();
        }
        boxes.push(soft_min(&vals, tau));
        diamonds.push(soft_max(&vals, tau));
    }
    soft_max(&diamonds, tau) - soft_min(&boxes, tau)
}

#[test]
fn c02_quantifier_non_collapse() {
    let oracle = brownian_spread_oracle(65536, 32, 0.3, 2002);
    let atoms = AtomRegistry::new().with("p", AtomFn::tanh(vec![1.0], 0.0));
    let cfg = OperatorConfig::default().with_taus(0.3).with_n_mc(256);
    let ctx = EvalContext::default();
    let spread = |sigma: f64| {
        let lib = temporal(SdeSpec::new("bm", 1, 1.0).with_sigma(sigma));
        let ev = Evaluator::new(&lib, &atoms, &cfg, &ctx);
        ev.eval(&f("p"), &[0.0], 9).unwrap().upper - ev.eval(&g("p"), &[0.0], 9).unwrap().lower
    };
    let (live, frozen) = (spread(1.0), spread(0.0));
    report(
        2,
        "quantifier non-collapse",
        oracle >= 0.2 && live >= 0.2 && frozen.abs() <= 1e-9,
        &format!("oracle spread {oracle:.4}, N=256 spread {live:.4} (>= 0.2), sigma=0 spread {frozen:.1e}"),
    );
}

#[test]
fn c03_temperature_limits() {
    // Drift into the clip floor so the hard minimum is attained on most paths.
    let spec = SdeSpec::new("sink", 1, 1.0).with_base(BaseDrift::Constant { value: vec![-4.0] }).with_sigma(1.0);
    let lib = temporal(spec.clone());
    let atoms = AtomRegistry::new().with("z", AtomFn::linear(vec![1.0], 0.0));
    let cfg = OperatorConfig::default();
    let ctx = EvalContext::default();
    let seed = 303;
    let taus = [1.0, 0.3, 0.1, 0.03, 0.01];
    let rep = tau_limit_check(&g("z"), &[0.0], &lib, &atoms, &cfg, &ctx, &taus, seed).unwrap();
    let bundle = simulate(&spec, &[0.0], cfg.n_mc, cfg.k_steps, seed).unwrap();
    let hard_min = bundle.states.iter().map(|z| z.clamp(-cfg.clip, cfg.clip)).fold(f64::INFINITY, f64::min);
    let l_small = rep.rows.last().unwrap().l_box;
    let err = (l_small - hard_min).abs();
    let slack = |tau: f64| tau * (cfg.k_steps as f64).ln() + tau * (cfg.n_mc as f64).ln();
    let ratio = slack(0.03) / slack(1.0);
    let excess = |tau: f64| rep.rows.iter().find(|r| r.tau == tau).unwrap().l_box - hard_min;
    let measured = excess(0.03) / excess(1.0);
    report(
        3,
        "tau -> 0 limits",
        err < 0.01 * cfg.clip && ratio < 0.25 && rep.monotone,
        &format!(
            "|L(0.01) - hard min| = {err:.2e} (< {}), gap ratio 0.03/1 = {ratio:.3} (measured excess ratio {measured:.3})",
            0.01 * cfg.clip
        ),
    );
}

#[test]
fn c04_concentration() {
    let start = Instant::now();
    let (c, eps, delta, tau) = (1.0f64, 0.1f64, 0.05f64, 0.5f64);
    // c(C) and the path count, from the closed form.
    let s = c.exp() - (-c).exp();
    let c_of_c = 2.0 / (s * s * (2.0 * c).exp());
    let n = (tau * tau * (2.0 / delta).ln() / (c_of_c * eps * eps)).ceil() as usize;
    let bound = ConcentrationBound::new(c, eps, delta).unwrap();
    assert_eq!(bound.required_n_mc(tau), n);

    let lib = temporal(SdeSpec::new("bm", 1, 1.0).with_sigma(1.0));
    let atoms = AtomRegistry::new().with("p", AtomFn::tanh(vec![1.0], 0.0));
    let cfg = OperatorConfig { clip: c * tau, n_mc: n, ..OperatorConfig::default().with_taus(tau) };
    let ctx = EvalContext::default();
    let pop = population_oracle(&g("p"), &[0.0], &lib, &atoms, &cfg, &ctx, 65536, 4040).unwrap().lower;
    let rep = check_concentration(&g("p"), &[0.0], &lib, &atoms, &cfg, &ctx, &bound, 400, pop, 404).unwrap();
    let se = 3.0 * (delta * (1.0 - delta) / 400.0).sqrt();
    let theory = 2.0 * (-c_of_c * n as f64 * eps * eps / (tau * tau)).exp();
    let elapsed = start.elapsed();
    report(
        4,
        "MC concentration",
        rep.empirical_rate <= delta + se && rep.empirical_rate <= theory && elapsed < Duration::from_secs(300),
        &format!(
            "n_mc {n}, failure rate {:.4} over 400 trials (limit {:.4}, bound {theory:.4}), {:.1} s",
            rep.empirical_rate,
            delta + se,
            elapsed.as_secs_f64()
        ),
    );
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
    panic!("no parameter {index}");
}

#[test]
fn c05_gradients() {
    let spec = SdeSpec::new("toy", 1, 1.0)
        .with_base(BaseDrift::Constant { value: vec![0.1] })
        .with_correction(Mlp::new(&[1, 5, 1], 55, 1.0).unwrap())
        .with_sigma(0.4);
    let mut problem = Problem {
        library: temporal(spec),
        atoms: AtomRegistry::new().with("p", AtomFn::tanh(vec![1.2], -0.1)),
        cfg: OperatorConfig { n_mc: 8, k_steps: 5, tau_s: 0.25, tau_omega: 0.3, ..Default::default() },
        targets: vec![
            FormulaTarget::new("box", g("p"), Objective::Maximize),
            FormulaTarget::new("dia", f("p"), Objective::Hinge { margin: 2.0 }),
        ],
        weights: LossWeights { lambda_linn: LambdaSchedule::Constant { value: 1.0 }, ..Default::default() },
        ..Default::default()
    };
    let batch = vec![vec![0.4], vec![-0.7], vec![1.1]];
    let seed = 505;
    total_loss(&mut problem, &batch, 0, seed).unwrap();
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
        let up = total_loss(&mut problem, &batch, 0, seed).unwrap().total;
        nudge(&mut problem.library, i, -2.0 * h);
        let down = total_loss(&mut problem, &batch, 0, seed).unwrap().total;
        nudge(&mut problem.library, i, h);
        let fd = (up - down) / (2.0 * h);
        worst = worst.max((fd - a).abs() / (fd.abs().max(a.abs()) + 1e-8));
    }
    report(
        5,
        "gradient correctness",
        worst <= 1e-3,
        &format!("{} parameters, worst relative error vs central differences {worst:.2e}", analytic.len()),
    );
}

fn run_preset(name: ExperimentName) -> (MetricsFile, Duration) {
    let cfg = ExperimentConfig::preset(name);
    let start = Instant::now();
    let out = harness::run(&cfg).unwrap();
    (out.metrics, start.elapsed())
}

#[test]
fn c06_lorenz() {
    let _guard = HEAVY.lock().unwrap_or_else(|e| e.into_inner());
    let (m, elapsed) = run_preset(ExperimentName::Lorenz);
    let sde = m.record("sde_linn").unwrap();
    let ode = m.record("neural_ode").unwrap();
    let get = |r: &fluidlogic::harness::MetricsRecord, k: &str| r.get(k).unwrap_or(f64::NAN);
    let stochastic_gaps = m
        .records
        .iter()
        .filter(|r| r.flags.get("stochastic") == Some(&true))
        .all(|r| r.get("delta_q").is_some_and(|d| d > 0.0));
    let deterministic_gaps = m
        .records
        .iter()
        .filter(|r| r.flags.get("stochastic") == Some(&false))
        .all(|r| r.get("delta_q") == Some(0.0));
    let ok = get(sde, "escape_rate") == 0.0
        && get(sde, "lobe_left_frac") > 0.05
        && get(sde, "lobe_right_frac") > 0.05
        && get(sde, "delta_q") > 0.0
        && get(ode, "delta_q") == 0.0
        && stochastic_gaps
        && deterministic_gaps
        && elapsed < Duration::from_secs(20 * 60);
    report(
        6,
        "Lorenz case study",
        ok,
        &format!(
            "SDE+LINN escape {} lobes {:.3}/{:.3} delta_q {:.4}; neural ODE delta_q {}; {:.0} s",
            get(sde, "escape_rate"),
            get(sde, "lobe_left_frac"),
            get(sde, "lobe_right_frac"),
            get(sde, "delta_q"),
            get(ode, "delta_q"),
            elapsed.as_secs_f64()
        ),
    );
}

#[test]
fn c07_deontic() {
    let _guard = HEAVY.lock().unwrap_or_else(|e| e.into_inner());
    let (m, elapsed) = run_preset(ExperimentName::Deontic);
    let v = |variant: &str, k: &str| m.record(variant).and_then(|r| r.get(k)).unwrap_or(f64::NAN);
    let (lt, lb, ld) = (v("temporal", "L_box_safe"), v("baseline", "L_box_safe"), v("deontic", "L_box_safe"));
    let (et, ed) = (v("temporal", "exit_fraction"), v("deontic", "exit_fraction"));
    let inward = v("deontic", "inward_drift_frac");
    let ok = ld >= 2.0 * lt && ed < 0.05 && et > 0.30 && ld > lb && lb > lt && inward >= 0.9
        && elapsed < Duration::from_secs(15 * 60);
    report(
        7,
        "deontic case study",
        ok,
        &format!(
            "L_box deontic {ld:.3} / baseline {lb:.3} / temporal {lt:.3}; exits {ed:.3} vs {et:.3}; inward {inward:.3}; {:.0} s",
            elapsed.as_secs_f64()
        ),
    );
}

#[test]
fn c08_swarm() {
    let _guard = HEAVY.lock().unwrap_or_else(|e| e.into_inner());
    let (m, elapsed) = run_preset(ExperimentName::Swarm);
    let r = m.record("faulty_belief").unwrap();
    let flag = r.flags.get("hallucination_flag") == Some(&true);
    let within = r.flags.get("sweep_within_dilated_path") == Some(&true);
    let w = r.get("wasserstein_gap").unwrap();
    let spread = r.get("wasserstein_tail_spread").unwrap();

    // Null case: exact belief, true dynamics. Fewer epochs and paths keep
    // twenty seeds affordable; the flag needs L_B > 0.8, far from the
    // observed values.
    let null_start = Instant::now();
    let mut raised = Vec::new();
    let mut worst_belief = f64::NEG_INFINITY;
    for seed in 0..20 {
        let mut cfg = ExperimentConfig::preset(ExperimentName::Swarm);
        cfg.seed = 100 + seed;
        cfg.eval_n_mc = 64;
        cfg.swarm = Some(SwarmParams { epochs: 2, sweep_grid: 0, ..SwarmParams::null_case() });
        let out = harness::run(&cfg).unwrap();
        let rec = out.metrics.record("faulty_belief").unwrap();
        worst_belief = worst_belief.max(rec.get("L_box_safe_belief").unwrap());
        if rec.flags["hallucination_flag"] {
            raised.push(cfg.seed);
        }
    }
    let total = elapsed + null_start.elapsed();
    let ok = flag && raised.is_empty() && w > 0.1 && spread <= 0.2 && within && total < Duration::from_secs(15 * 60);
    report(
        8,
        "swarm case study",
        ok,
        &format!(
            "flag {flag}; null flags {raised:?} (max L_B {worst_belief:.3}); W1 {w:.3}, tail spread {:.1}%; sweep {} flagged, {} off path; {:.0} s",
            100.0 * spread,
            r.get("sweep_flagged_cells").unwrap(),
            r.get("sweep_cells_off_path").unwrap(),
            total.as_secs_f64()
        ),
    );
}

fn random_name(rng: &mut ChaCha8Rng) -> String {
    const FIRST: &[u8] = b"abcdefghijklmnopqrstuvwxyz";
    const REST: &[u8] = b"abcdefghijklmnopqrstuvwxyz0123456789_";
    let mut s = String::new();
    s.push(FIRST[rng.random_range(0..FIRST.len())] as char);
    for _ in 0..rng.random_range(0..5) {
        s.push(REST[rng.random_range(0..REST.len())] as char);
    }
    s
}

fn random_window(rng: &mut ChaCha8Rng) -> Option<Window> {
    if rng.random_bool(0.5) {
        return None;
    }
    let a = (rng.random_range(0.0..4.0f64) * 8.0).round() / 8.0;
    let b = a + (rng.random_range(0.0..4.0f64) * 8.0).round() / 8.0;
    Some(Window::new(a, b).unwrap())
}

fn random_formula(rng: &mut ChaCha8Rng, depth: u32) -> Formula {
    if depth == 0 || rng.random_bool(0.25) {
        return Formula::atom(random_name(rng));
    }
    match rng.random_range(0..7) {
        0 => Formula::not(random_formula(rng, depth - 1)),
        1 => Formula::and(random_formula(rng, depth - 1), random_formula(rng, depth - 1)),
        2 => Formula::or(random_formula(rng, depth - 1), random_formula(rng, depth - 1)),
        3 => Formula::possibility(Modality::Temporal, random_window(rng), random_formula(rng, depth - 1)),
        4 => {
            let actions = (0..rng.random_range(1..4)).map(|_| random_name(rng)).collect();
            Formula::seq(actions, random_formula(rng, depth - 1))
        }
        _ => {
            let m = match rng.random_range(0..4) {
                0 => Modality::Temporal,
                1 => Modality::Deontic,
                2 => Modality::Epistemic(random_name(rng)),
                _ => Modality::Doxastic(random_name(rng)),
            };
            Formula::necessity(m, random_window(rng), random_formula(rng, depth - 1))
        }
    }
}

#[test]
fn c09_parser() {
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    let mut mismatches = 0;
    for _ in 0..500 {
        let ast = random_formula(&mut rng, 5);
        let text = ast.to_string();
        if parse(&text).ok().as_ref() != Some(&ast) {
            mismatches += 1;
        }
    }
    let fixtures = include_str!("../../core/tests/fixtures/malformed_formulas.txt");
    let cases: Vec<&str> = fixtures.lines().filter(|l| !l.trim().is_empty() && !l.starts_with('#')).collect();
    let mut bad = Vec::new();
    for case in &cases {
        match std::panic::catch_unwind(|| parse(case)) {
            Ok(Err(e)) if e.offset <= case.len() && !e.message.is_empty() => {}
            other => bad.push(format!("{case:?} -> {}", if other.is_err() { "panic".into() } else { format!("{other:?}") })),
        }
    }
    report(
        9,
        "parser",
        mismatches == 0 && bad.is_empty(),
        &format!("500 round trips, {mismatches} mismatches; {} malformed inputs, {} without a positioned error", cases.len(), bad.len()),
    );
}

fn run_binary(config: &Path, out: &Path, threads: &str) -> Vec<u8> {
    let status = Command::new(env!("CARGO_BIN_EXE_fluidlogic"))
        .arg("run")
        .arg(config)
        .arg("--out")
        .arg(out)
        .env("RAYON_NUM_THREADS", threads)
        .output()
        .unwrap();
    assert!(status.status.success(), "run failed: {}", String::from_utf8_lossy(&status.stderr));
    std::fs::read(out.join("metrics.json")).unwrap()
}

#[test]
fn c10_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::preset(ExperimentName::Deontic);
    cfg.eval_n_mc = 64;
    let p = cfg.deontic.as_mut().unwrap();
    p.steps = 15;
    p.eval_worlds = 8;
    p.probe_points = 128;
    let config = dir.path().join("deontic.json");
    std::fs::write(&config, cfg.to_json()).unwrap();
    let runs: Vec<Vec<u8>> = [("1", "a"), ("1", "b"), ("4", "c"), ("4", "d")]
        .iter()
        .map(|(threads, sub)| run_binary(&config, &dir.path().join(sub), threads))
        .collect();
    let identical = runs.windows(2).all(|w| w[0] == w[1]);
    report(
        10,
        "determinism",
        identical && !runs[0].is_empty(),
        &format!("4 runs (1 and 4 threads, twice each), {} bytes, identical: {identical}", runs[0].len()),
    );
}
