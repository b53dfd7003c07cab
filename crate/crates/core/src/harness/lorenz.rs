//! Learned surrogates of the stochastic Lorenz-63 system, trained on
//! simulated data with and without a boundedness objective.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formula::{AtomFn, AtomRegistry, Formula, Modality};
use crate::harness::common::{bundle_box_diamond, quantifier_gap, quantifier_profile};
use crate::harness::{Artifact, ExperimentConfig, MetricsFile, MetricsRecord, ModalSetup, NetBlock, RunOutput};
use crate::modal::{plot_csv, Evaluator, OperatorConfig};
use crate::sde::{derive_seed, simulate, simulate_with, BaseDrift, EvalContext, SdeLibrary, SdeSpec, SimOptions};
use crate::training::{
    save_checkpoint, to_jsonl, train, AdamConfig, BatchSource, FormulaTarget, LambdaSchedule, LossWeights, Objective,
    Problem, TaskData, TrainConfig, TrainOutcome,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LorenzVariant {
    pub name: String,
    /// Constant diffusion at the data noise level; zero gives an ODE.
    pub stochastic: bool,
    /// Adds the boundedness objective to the trajectory fit.
    pub linn: bool,
}

impl LorenzVariant {
    pub fn new(name: &str, stochastic: bool, linn: bool) -> Self {
        Self { name: name.into(), stochastic, linn }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LorenzParams {
    pub sigma: f64,
    pub rho: f64,
    pub beta: f64,
    /// State is `u = (x - shift) / scale`.
    pub scale: f64,
    pub shift: Vec<f64>,
    /// Diffusion of the true system in `u` coordinates.
    pub noise: f64,
    /// Euler step of the data generator; observations keep every
    /// `subsample`-th state.
    pub fine_dt: f64,
    pub subsample: usize,
    pub trajectories: usize,
    pub trajectory_length: f64,
    /// Observed steps per training window.
    pub window: usize,
    pub windows_per_step: usize,
    /// Modal horizon.
    pub horizon: f64,
    /// `bounded` is `bound_margin` plus the largest radius seen in the data,
    /// minus `|u|`.
    pub bound_margin: f64,
    pub eval_starts: usize,
    pub oracle_n_mc: usize,
    /// Long rollouts for escape and lobe statistics.
    pub rollout_horizon: f64,
    pub rollout_paths: usize,
    pub rollout_starts: usize,
    pub drift: NetBlock,
    pub steps: usize,
    pub lr: f64,
    pub linn_batch: usize,
    pub linn_weight: f64,
    pub variants: Vec<LorenzVariant>,
}

impl Default for LorenzParams {
    fn default() -> Self {
        Self {
            sigma: 10.0,
            rho: 28.0,
            beta: 8.0 / 3.0,
            scale: 10.0,
            shift: vec![0.0, 0.0, 25.0],
            noise: 0.1,
            fine_dt: 0.001,
            subsample: 10,
            trajectories: 16,
            trajectory_length: 2.0,
            window: 8,
            windows_per_step: 64,
            horizon: 0.31,
            bound_margin: 0.5,
            eval_starts: 16,
            oracle_n_mc: 256,
            rollout_horizon: 10.0,
            rollout_paths: 32,
            rollout_starts: 4,
            drift: NetBlock { hidden: vec![64, 64], seed: 3, init_scale: 1.0 },
            steps: 1500,
            lr: 3e-3,
            linn_batch: 8,
            linn_weight: 1.0,
            variants: vec![
                LorenzVariant::new("neural_ode", false, false),
                LorenzVariant::new("mse_sde", true, false),
                LorenzVariant::new("ode_linn", false, true),
                LorenzVariant::new("sde_linn", true, true),
            ],
        }
    }
}

impl LorenzParams {
    fn validate(&self) -> Result<()> {
        let positive = [self.scale, self.fine_dt, self.trajectory_length, self.horizon, self.rollout_horizon, self.lr];
        if positive.iter().any(|v| !(*v > 0.0)) || self.noise < 0.0 || self.shift.len() != 3 {
            return Err(Error::Config("lorenz: scale, steps and horizons must be positive, shift needs 3 entries".into()));
        }
        let counts = [
            self.subsample,
            self.trajectories,
            self.window,
            self.windows_per_step,
            self.eval_starts,
            self.oracle_n_mc,
            self.rollout_paths,
            self.rollout_starts,
            self.linn_batch,
        ];
        if counts.contains(&0) || self.variants.is_empty() {
            return Err(Error::Config("lorenz: counts and the variant list must be non-empty".into()));
        }
        let obs = (self.trajectory_length / self.fine_dt).round() as usize / self.subsample;
        if obs <= self.window {
            return Err(Error::Config("lorenz: trajectories are shorter than one window".into()));
        }
        Ok(())
    }

    fn truth(&self, horizon: f64) -> SdeSpec {
        let base = BaseDrift::Lorenz {
            sigma: self.sigma,
            rho: self.rho,
            beta: self.beta,
            scale: self.scale,
            shift: self.shift.clone(),
        };
        SdeSpec::new("truth", 3, horizon).with_base(base).with_sigma(self.noise)
    }

    fn data_dt(&self) -> f64 {
        self.fine_dt * self.subsample as f64
    }
}

fn norm(z: &[f64]) -> f64 {
    z.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// States on the attractor: a single true path after a burn-in, sampled at
/// `count` evenly spaced times.
fn attractor_points(p: &LorenzParams, count: usize, seed: u64) -> Result<(Vec<Vec<f64>>, f64)> {
    let (burn, span) = (5.0, 20.0);
    let steps = ((burn + span) / p.fine_dt).round() as usize + 1;
    let path = simulate(&p.truth(burn + span), &[0.1, 0.1, 0.0], 1, steps, seed)?;
    let first = (burn / p.fine_dt).round() as usize;
    let stride = (steps - first) / count;
    let points = (0..count).map(|i| path.state(0, first + i * stride).to_vec()).collect();
    let radius = (first..steps).map(|k| norm(path.state(0, k))).fold(0.0, f64::max);
    Ok((points, radius))
}

fn lorenz_atoms(r_max: f64) -> AtomRegistry {
    AtomRegistry::new()
        .with("bounded", AtomFn::inside_ball(vec![0.0; 3], r_max))
        .with("visits_lobe", AtomFn::linear(vec![-1.0, 0.0, 0.0], 0.0))
}

/// The true stochastic system as `temporal`.
pub(crate) fn setup(p: &LorenzParams, seed: u64) -> Result<ModalSetup> {
    p.validate()?;
    let (_, radius) = attractor_points(p, 1, derive_seed(seed, 10, 0))?;
    Ok(ModalSetup {
        library: SdeLibrary::new().with(Modality::Temporal, p.truth(p.horizon)),
        atoms: lorenz_atoms(radius + p.bound_margin),
        ctx: EvalContext::default(),
        dim: 3,
    })
}

fn task_data(p: &LorenzParams, starts: &[Vec<f64>], seed: u64) -> Result<TaskData> {
    let fine = (p.trajectory_length / p.fine_dt).round() as usize + 1;
    let mut data = TaskData {
        key: Modality::Temporal.key(),
        dt: p.data_dt(),
        batch: Some(p.windows_per_step),
        ..Default::default()
    };
    for (i, s) in starts.iter().enumerate() {
        let path = simulate(&p.truth(p.trajectory_length), s, 1, fine, derive_seed(seed, i as u64, 0))?;
        let obs: Vec<Vec<f64>> = (0..fine).step_by(p.subsample).map(|k| path.state(0, k).to_vec()).collect();
        for a in 0..obs.len() - p.window {
            data.starts.push(obs[a].clone());
            data.targets.push(obs[a + 1..=a + p.window].to_vec());
        }
    }
    Ok(data)
}

struct Shared {
    atoms: AtomRegistry,
    bounded: Formula,
    lobe: Formula,
    eval_starts: Vec<Vec<f64>>,
    oracle: Vec<(f64, f64)>,
    rollout_starts: Vec<Vec<f64>>,
    r_max: f64,
}

fn evaluate(
    p: &LorenzParams,
    cfg: &ExperimentConfig,
    sh: &Shared,
    lib: &SdeLibrary,
    record: &mut MetricsRecord,
) -> Result<String> {
    let eval_cfg = OperatorConfig { n_mc: cfg.eval_n_mc, ..cfg.operator.clone() };
    let ctx = EvalContext::default();
    let ev = Evaluator::new(lib, &sh.atoms, &eval_cfg, &ctx);
    let seed = derive_seed(cfg.seed, 20, 0);
    let seeds: Vec<u64> = (0..sh.eval_starts.len()).map(|i| derive_seed(seed, i as u64, 0)).collect();
    let boxes = ev.eval_many(&sh.bounded, &sh.eval_starts, &seeds)?;
    let diamonds = ev.eval_many(&sh.lobe, &sh.eval_starts, &seeds)?;
    let n = sh.eval_starts.len() as f64;
    let box_mae = boxes.iter().zip(&sh.oracle).map(|(b, o)| (b.lower - o.0).abs()).sum::<f64>() / n;
    let dia_mae = diamonds.iter().zip(&sh.oracle).map(|(d, o)| (d.upper - o.1).abs()).sum::<f64>() / n;

    let spec = lib.get(&Modality::Temporal)?;
    let lobe_atom = sh.atoms.get("visits_lobe")?.lower.clone();
    let mut gaps = 0.0;
    let mut plot = String::new();
    for (i, (w, s)) in sh.eval_starts.iter().zip(&seeds).enumerate() {
        let b = simulate(spec, w, cfg.eval_n_mc, eval_cfg.k_steps, *s)?;
        let profile = quantifier_profile(&b, &lobe_atom, eval_cfg.clip, eval_cfg.tau_omega);
        gaps += quantifier_gap(&profile);
        if i == 0 {
            plot = plot_csv(&profile);
        }
    }

    let steps = (p.rollout_horizon / p.data_dt()).round() as usize + 1;
    let opts = SimOptions { horizon: Some(p.rollout_horizon), ..Default::default() };
    let (mut paths, mut escaped, mut left, mut right, mut states) = (0usize, 0usize, 0usize, 0usize, 0usize);
    for (i, w) in sh.rollout_starts.iter().enumerate() {
        let b = simulate_with(spec, w, p.rollout_paths, steps, derive_seed(seed, i as u64, 1), &opts)?;
        for n in 0..b.n_paths {
            paths += 1;
            if b.escaped[n] || (0..b.k()).any(|k| norm(b.state(n, k)) > sh.r_max) {
                escaped += 1;
                continue;
            }
            for k in 0..b.k() {
                let x = b.state(n, k)[0];
                states += 1;
                left += usize::from(x < 0.0);
                right += usize::from(x > 0.0);
            }
        }
    }
    let frac = |c: usize| if states == 0 { 0.0 } else { c as f64 / states as f64 };
    record
        .set("L_box_bounded", boxes.iter().map(|t| t.lower).sum::<f64>() / n)
        .set("U_diamond_lobe", diamonds.iter().map(|t| t.upper).sum::<f64>() / n)
        .set("box_bounded_mae", box_mae)
        .set("diamond_lobe_mae", dia_mae)
        .set("delta_q", gaps / n)
        .set("escape_rate", escaped as f64 / paths as f64)
        .set("lobe_left_frac", frac(left))
        .set("lobe_right_frac", frac(right));
    Ok(plot)
}

pub fn run_lorenz(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let p = cfg.lorenz.as_ref().ok_or_else(|| Error::Config("missing `lorenz` block".into()))?;
    p.validate()?;
    let total = p.trajectories + p.eval_starts + p.rollout_starts;
    let (points, radius) = attractor_points(p, total, derive_seed(cfg.seed, 10, 0))?;
    let r_max = radius + p.bound_margin;
    let atoms = lorenz_atoms(r_max);
    let data = task_data(p, &points[..p.trajectories], derive_seed(cfg.seed, 11, 0))?;
    let bounded = Formula::necessity(Modality::Temporal, None, Formula::atom("bounded"));
    let lobe = Formula::possibility(Modality::Temporal, None, Formula::atom("visits_lobe"));

    let eval_starts = points[p.trajectories..p.trajectories + p.eval_starts].to_vec();
    let fine = ((p.horizon / p.fine_dt).round() as usize) + 1;
    let stride = (fine - 1) / (cfg.operator.k_steps - 1);
    let truth = p.truth(p.horizon);
    let bounded_atom = atoms.get("bounded")?.lower.clone();
    let lobe_atom = atoms.get("visits_lobe")?.lower.clone();
    let op = &cfg.operator;
    let oracle = eval_starts
        .iter()
        .enumerate()
        .map(|(i, w)| {
            let b = simulate(&truth, w, p.oracle_n_mc, stride * (op.k_steps - 1) + 1, derive_seed(cfg.seed, 12, i as u64))?;
            let (l, _) = bundle_box_diamond(&b, &bounded_atom, stride, op.tau_s, op.tau_omega, op.clip);
            let (_, u) = bundle_box_diamond(&b, &lobe_atom, stride, op.tau_s, op.tau_omega, op.clip);
            Ok((l, u))
        })
        .collect::<Result<Vec<_>>>()?;
    let n = oracle.len() as f64;
    let mut oracle_record = MetricsRecord::new("oracle");
    oracle_record
        .set("L_box_bounded", oracle.iter().map(|o| o.0).sum::<f64>() / n)
        .set("U_diamond_lobe", oracle.iter().map(|o| o.1).sum::<f64>() / n)
        .set("bound_radius", r_max);
    let shared = Shared {
        atoms: atoms.clone(),
        bounded: bounded.clone(),
        lobe,
        eval_starts,
        oracle,
        rollout_starts: points[p.trajectories + p.eval_starts..].to_vec(),
        r_max,
    };

    let mut records = vec![oracle_record];
    let mut artifacts = Vec::new();
    for (vi, v) in p.variants.iter().enumerate() {
        let mut spec = SdeSpec::new(&v.name, 3, p.horizon).with_correction(p.drift.build(3, 3)?);
        if v.stochastic {
            spec = spec.with_sigma(p.noise);
        }
        let mut problem = Problem {
            library: SdeLibrary::new().with(Modality::Temporal, spec),
            atoms: atoms.clone(),
            cfg: cfg.operator.clone(),
            ctx: EvalContext::default(),
            data: Some(data.clone()),
            ..Default::default()
        };
        if v.linn {
            problem.targets =
                vec![FormulaTarget::new("bounded", bounded.clone(), Objective::Hinge { margin: 0.1 })];
            problem.weights = LossWeights {
                lambda_linn: LambdaSchedule::Ramp { start: p.steps / 4, length: p.steps / 4, max: p.linn_weight },
                ..Default::default()
            };
        } else {
            problem.weights.lambda_linn = LambdaSchedule::Constant { value: 0.0 };
        }
        let tcfg = TrainConfig {
            adam: AdamConfig { lr: p.lr, ..Default::default() },
            steps: p.steps,
            batch: BatchSource::Box { lo: vec![-2.0, -2.5, -2.5], hi: vec![2.0, 2.5, 2.5], size: p.linn_batch },
            seed: derive_seed(cfg.seed, 13, vi as u64),
            mining: None,
        };
        let outcome: TrainOutcome = train(&mut problem, &tcfg, 0)?;
        let mut r = MetricsRecord::new(v.name.clone());
        r.flag("stochastic", v.stochastic).flag("linn", v.linn).flag("diverged", outcome.stopped_early.is_some());
        if let Some(last) = outcome.reports.last() {
            r.set("final_task_loss", last.task);
        }
        match evaluate(p, cfg, &shared, &problem.library, &mut r) {
            Ok(plot) => artifacts.push(Artifact { name: format!("lorenz_{}_plot.csv", v.name), contents: plot }),
            Err(e) if e.is_numeric() || outcome.stopped_early.is_some() => {
                r.metrics.clear();
                r.set("escape_rate", 1.0).flag("diverged", true);
            }
            Err(e) => return Err(e),
        }
        records.push(r);
        artifacts.push(Artifact { name: format!("lorenz_{}_loss.jsonl", v.name), contents: to_jsonl(&outcome.reports) });
        artifacts.push(Artifact { name: format!("lorenz_{}.ckpt", v.name), contents: save_checkpoint(&problem.library) });
    }
    let metrics = MetricsFile::new("lorenz", cfg.seed, records);
    metrics.validate()?;
    Ok(RunOutput { metrics, artifacts })
}
