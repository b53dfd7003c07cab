//! A rover with a corrupted position belief heading for a chasm. Its
//! doxastic model, learned from its own log, says it is safe while the
//! swarm's epistemic model, learned from true telemetry, sees the collision.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formula::{parse, AtomFn, AtomRegistry, Formula, Modality};
use crate::harness::{Artifact, ExperimentConfig, MetricsFile, MetricsRecord, ModalSetup, NetBlock, RunOutput};
use crate::modal::{wasserstein_gap, Evaluator, OperatorConfig};
use crate::sde::{derive_seed, simulate, BaseDrift, Diffusion, EvalContext, InitPolicy, SdeLibrary, SdeSpec};
use crate::training::{
    to_jsonl, AdamConfig, BatchSource, LambdaSchedule, LossReport, LossWeights, Problem, TaskData, TrainConfig,
};

pub const BELIEVER: &str = "r3";
pub const SWARM: &str = "sw";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SwarmParams {
    pub chasm: Vec<f64>,
    pub chasm_radius: f64,
    /// Hazard the believer thinks it must steer around; `None` gives it the
    /// true dynamics.
    pub fake_chasm: Option<Vec<f64>>,
    pub fake_strength: f64,
    /// The believer's state `(px, py, vx, vy)`.
    pub rover: Vec<f64>,
    pub belief_offset: Vec<f64>,
    pub cruise: Vec<f64>,
    pub damping: f64,
    /// Velocity noise of the physical system.
    pub sigma: f64,
    /// Extra velocity noise of the swarm's knowledge model.
    pub sigma_knowledge: f64,
    /// Task horizon `T` of the inner operators.
    pub horizon: f64,
    /// Horizon of the belief and knowledge operators.
    pub attitude_horizon: f64,
    pub safe_threshold: f64,
    pub collision_threshold: f64,
    pub net: NetBlock,
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub lr: f64,
    pub log_trajectories: usize,
    pub log_dt: f64,
    pub window: usize,
    pub windows_per_step: usize,
    /// Path count for the per-epoch Wasserstein gap.
    pub wasserstein_paths: usize,
    /// Side of the start-position sweep; 0 skips it.
    pub sweep_grid: usize,
    pub sweep_lo: Vec<f64>,
    pub sweep_hi: Vec<f64>,
    pub sweep_n_mc: usize,
}

impl Default for SwarmParams {
    fn default() -> Self {
        Self {
            chasm: vec![5.0, 0.0],
            chasm_radius: 1.0,
            fake_chasm: Some(vec![5.0, 2.0]),
            fake_strength: 2.0,
            rover: vec![0.0, 0.0, 1.0, 0.0],
            belief_offset: vec![0.0, 3.5, 0.0, 0.0],
            cruise: vec![1.0, 0.0],
            damping: 1.0,
            sigma: 0.05,
            sigma_knowledge: 0.15,
            horizon: 6.0,
            attitude_horizon: 1.0,
            safe_threshold: 0.8,
            collision_threshold: 0.3,
            net: NetBlock { hidden: vec![32], seed: 5, init_scale: 0.1 },
            epochs: 10,
            steps_per_epoch: 30,
            lr: 3e-3,
            log_trajectories: 24,
            log_dt: 0.1,
            window: 8,
            windows_per_step: 64,
            wasserstein_paths: 256,
            sweep_grid: 9,
            sweep_lo: vec![-3.5, -4.5],
            sweep_hi: vec![5.5, 4.5],
            sweep_n_mc: 32,
        }
    }
}

impl SwarmParams {
    /// The believer's estimate is exact and its model is the true one.
    pub fn null_case() -> Self {
        Self { belief_offset: vec![0.0; 4], fake_chasm: None, ..Self::default() }
    }

    fn validate(&self) -> Result<()> {
        let lens = [
            self.chasm.len() == 2,
            self.rover.len() == 4,
            self.belief_offset.len() == 4,
            self.cruise.len() == 2,
            self.sweep_lo.len() == 2,
            self.sweep_hi.len() == 2,
            self.fake_chasm.as_ref().is_none_or(|c| c.len() == 2),
        ];
        if lens.contains(&false) {
            return Err(Error::Config("swarm: positions are 2-D and rover states 4-D".into()));
        }
        let positive = [self.chasm_radius, self.horizon, self.attitude_horizon, self.lr, self.log_dt, self.damping];
        if positive.iter().any(|v| !(*v > 0.0)) || self.sigma < 0.0 || self.sigma_knowledge < 0.0 {
            return Err(Error::Config("swarm: radii, horizons and rates must be positive".into()));
        }
        if self.epochs == 0 || self.window == 0 || self.log_trajectories == 0 || self.wasserstein_paths == 0 {
            return Err(Error::Config("swarm: counts must be positive".into()));
        }
        if self.sweep_grid > 0 && (self.sweep_n_mc == 0 || (0..2).any(|i| self.sweep_hi[i] <= self.sweep_lo[i])) {
            return Err(Error::Config("swarm: sweep box is empty".into()));
        }
        Ok(())
    }

    fn physics(&self) -> BaseDrift {
        BaseDrift::Kinematic { damping: self.damping, cruise: self.cruise.clone() }
    }

    fn believed_physics(&self) -> BaseDrift {
        match &self.fake_chasm {
            Some(c) => BaseDrift::Sum {
                terms: vec![
                    self.physics(),
                    BaseDrift::Repulsor { center: c.clone(), length: self.chasm_radius, strength: self.fake_strength },
                ],
            },
            None => self.physics(),
        }
    }

    fn noise(&self, sigma: f64) -> Diffusion {
        Diffusion::Constant(vec![0.0, 0.0, sigma, sigma])
    }

    /// `B_r3(G[0,T](safe)) & K_sw(F[0,T](collision))`.
    pub fn formula_text(&self) -> String {
        let t = self.horizon;
        format!("B_{BELIEVER}(G[0,{t}](safe)) & K_{SWARM}(F[0,{t}](collision))")
    }

    fn atoms(&self) -> AtomRegistry {
        AtomRegistry::new()
            .with("safe", AtomFn::outside_ball(self.chasm.clone(), self.chasm_radius).on_coords(vec![0, 1]))
            .with("collision", AtomFn::inside_ball(self.chasm.clone(), self.chasm_radius).on_coords(vec![0, 1]))
    }

    fn ctx(&self) -> EvalContext {
        EvalContext::default().with_belief(BELIEVER, self.belief_offset.clone())
    }
}

fn attitude_spec(p: &SwarmParams, m: &Modality, init: InitPolicy, sigma: f64, k: u64) -> Result<SdeSpec> {
    let net = NetBlock { seed: derive_seed(p.net.seed, k, 0), ..p.net.clone() }.build(4, 4)?;
    Ok(SdeSpec::new(m.key().replace(':', "_"), 4, p.attitude_horizon)
        .with_base(p.physics())
        .with_correction(net)
        .with_diffusion(p.noise(sigma))
        .with_init(init))
}

/// Physics as `temporal` plus untrained belief and knowledge SDEs.
pub(crate) fn setup(p: &SwarmParams) -> Result<ModalSetup> {
    p.validate()?;
    let d = Modality::Doxastic(BELIEVER.into());
    let e = Modality::Epistemic(SWARM.into());
    let temporal = SdeSpec::new("temporal", 4, p.horizon).with_base(p.physics()).with_diffusion(p.noise(p.sigma));
    Ok(ModalSetup {
        library: SdeLibrary::new()
            .with(Modality::Temporal, temporal)
            .with(d.clone(), attitude_spec(p, &d, InitPolicy::BelievedState(BELIEVER.into()), p.sigma, 1)?)
            .with(e.clone(), attitude_spec(p, &e, InitPolicy::TrueState, p.sigma_knowledge, 2)?),
        atoms: p.atoms(),
        ctx: p.ctx(),
        dim: 4,
    })
}

/// Windows of trajectories of `spec` from starts spread over the sweep box.
fn log(p: &SwarmParams, spec: &SdeSpec, key: &str, seed: u64) -> Result<TaskData> {
    let k = (p.horizon / p.log_dt).round() as usize + 1;
    let lo = vec![p.sweep_lo[0], p.sweep_lo[1] + p.belief_offset[1].min(0.0), 0.5, -0.3];
    let hi = vec![p.sweep_hi[0], p.sweep_hi[1] + p.belief_offset[1].max(0.0), 1.5, 0.3];
    let starts = BatchSource::Box { lo, hi, size: p.log_trajectories }.sample(seed);
    let mut data = TaskData { key: key.into(), dt: p.log_dt, batch: Some(p.windows_per_step), ..Default::default() };
    for (i, s) in starts.iter().enumerate() {
        let b = simulate(spec, s, 1, k, derive_seed(seed, i as u64, 0))?;
        for a in 0..k - p.window {
            data.starts.push(b.state(0, a).to_vec());
            data.targets.push((a + 1..=a + p.window).map(|j| b.state(0, j).to_vec()).collect());
        }
    }
    Ok(data)
}

struct Attitudes {
    l_belief_safe: f64,
    u_know_collision: f64,
}

impl Attitudes {
    fn flag(&self, p: &SwarmParams) -> bool {
        self.l_belief_safe > p.safe_threshold && self.u_know_collision > p.collision_threshold
    }
}

fn attitudes(p: &SwarmParams, lib: &SdeLibrary, cfg: &OperatorConfig, f: &Formula, w: &[f64], seed: u64) -> Result<Attitudes> {
    let Formula::And(belief, knowledge) = f else { unreachable!("formula is a conjunction") };
    let (atoms, ctx) = (p.atoms(), p.ctx());
    let ev = Evaluator::new(lib, &atoms, cfg, &ctx);
    Ok(Attitudes {
        l_belief_safe: ev.eval(belief, w, seed)?.lower,
        u_know_collision: ev.eval(knowledge, w, derive_seed(seed, 0, 1))?.upper,
    })
}

fn assemble(temporal: &SdeSpec, belief: &Problem, knowledge: &Problem) -> Result<SdeLibrary> {
    let d = Modality::Doxastic(BELIEVER.into());
    let e = Modality::Epistemic(SWARM.into());
    Ok(SdeLibrary::new()
        .with(Modality::Temporal, temporal.clone())
        .with(d.clone(), belief.library.get(&d)?.clone())
        .with(e.clone(), knowledge.library.get(&e)?.clone()))
}

/// True when the straight cruise from `(x, y)` over `length` passes within
/// `radius` of `c`.
fn line_hits(x: f64, y: f64, length: f64, c: &[f64], radius: f64) -> bool {
    let px = (c[0] - x).clamp(0.0, length) + x;
    (px - c[0]).hypot(y - c[1]) <= radius
}

pub fn run_swarm(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let p = cfg.swarm.as_ref().ok_or_else(|| Error::Config("missing `swarm` block".into()))?;
    p.validate()?;
    let formula = parse(&p.formula_text()).map_err(Error::from)?;
    let temporal = SdeSpec::new("temporal", 4, p.horizon).with_base(p.physics()).with_diffusion(p.noise(p.sigma));
    let believed_world =
        SdeSpec::new("believed", 4, p.horizon).with_base(p.believed_physics()).with_diffusion(p.noise(p.sigma));

    let d = Modality::Doxastic(BELIEVER.into());
    let e = Modality::Epistemic(SWARM.into());
    let problem = |m: &Modality, init: InitPolicy, sigma: f64, data: TaskData, k: u64| -> Result<Problem> {
        let spec = attitude_spec(p, m, init, sigma, k)?;
        Ok(Problem {
            library: SdeLibrary::new().with(m.clone(), spec),
            atoms: p.atoms(),
            cfg: cfg.operator.clone(),
            ctx: p.ctx(),
            weights: LossWeights { lambda_linn: LambdaSchedule::Constant { value: 0.0 }, ..Default::default() },
            data: Some(data),
            ..Default::default()
        })
    };
    let belief_log = log(p, &believed_world, &d.key(), derive_seed(cfg.seed, 30, 0))?;
    let telemetry = log(p, &temporal, &e.key(), derive_seed(cfg.seed, 31, 0))?;
    let mut belief = problem(&d, InitPolicy::BelievedState(BELIEVER.into()), p.sigma, belief_log, 1)?;
    let mut knowledge = problem(&e, InitPolicy::TrueState, p.sigma_knowledge, telemetry, 2)?;

    let eval_cfg = OperatorConfig { n_mc: cfg.eval_n_mc, ..cfg.operator.clone() };
    let ctx = p.ctx();
    let train_cfg = |k: u64| TrainConfig {
        adam: AdamConfig { lr: p.lr, ..Default::default() },
        steps: p.steps_per_epoch,
        batch: BatchSource::Fixed { worlds: vec![p.rover.clone()] },
        seed: derive_seed(cfg.seed, 32, k),
        mining: None,
    };
    let mut epochs_csv = String::from("epoch,L_belief_safe,U_knowledge_collision,wasserstein_gap,flag\n");
    let mut reports: Vec<LossReport> = Vec::new();
    let mut gaps = Vec::new();
    let mut first_flag = None;
    let mut stopped = false;
    for epoch in 0..p.epochs {
        for (k, pr) in [(0u64, &mut belief), (1, &mut knowledge)] {
            let out = crate::training::train(pr, &train_cfg(k), epoch * p.steps_per_epoch)?;
            stopped |= out.stopped_early.is_some();
            if k == 0 {
                reports.extend(out.reports);
            }
        }
        let lib = assemble(&temporal, &belief, &knowledge)?;
        let seed = derive_seed(cfg.seed, 33, 0);
        let a = attitudes(p, &lib, &cfg.operator, &formula, &p.rover, seed)?;
        let gap = wasserstein_gap(
            lib.get(&d)?,
            &temporal,
            &p.rover,
            &ctx,
            p.horizon,
            p.wasserstein_paths,
            eval_cfg.k_steps,
            derive_seed(seed, 1, 0),
        )?;
        let flag = a.flag(p);
        if flag && first_flag.is_none() {
            first_flag = Some(epoch + 1);
        }
        epochs_csv.push_str(&format!("{},{},{},{},{}\n", epoch + 1, a.l_belief_safe, a.u_know_collision, gap, u8::from(flag)));
        gaps.push(gap);
    }
    let lib = assemble(&temporal, &belief, &knowledge)?;
    let a = attitudes(p, &lib, &eval_cfg, &formula, &p.rover, derive_seed(cfg.seed, 35, 0))?;
    let flag = a.flag(p);
    let tail = &gaps[gaps.len() - (gaps.len() / 5).max(1)..];
    let mean = tail.iter().sum::<f64>() / tail.len() as f64;
    let spread = tail.iter().map(|g| (g - mean).abs()).fold(0.0, f64::max) / mean.abs().max(f64::MIN_POSITIVE);

    let mut r = MetricsRecord::new("faulty_belief");
    r.set("L_box_safe_belief", a.l_belief_safe)
        .set("U_diamond_collision_knowledge", a.u_know_collision)
        .set("wasserstein_gap", *gaps.last().expect("at least one epoch"))
        .set("wasserstein_tail_mean", mean)
        .set("wasserstein_tail_spread", spread)
        .set("first_flag_epoch", first_flag.map_or(0.0, |e| e as f64))
        .flag("hallucination_flag", flag)
        .flag("stopped_early", stopped);

    let mut artifacts = vec![
        Artifact { name: "swarm_epochs.csv".into(), contents: epochs_csv },
        Artifact { name: "swarm_loss.jsonl".into(), contents: to_jsonl(&reports) },
    ];
    if p.sweep_grid > 0 {
        let g = p.sweep_grid;
        let cell = [(p.sweep_hi[0] - p.sweep_lo[0]) / g as f64, (p.sweep_hi[1] - p.sweep_lo[1]) / g as f64];
        let sweep_cfg = OperatorConfig { n_mc: p.sweep_n_mc, ..cfg.operator.clone() };
        let reach = p.cruise[0].hypot(p.cruise[1]) * p.horizon;
        let dilated = p.chasm_radius + cell[0].max(cell[1]);
        let mut csv = String::from("x,y,L_belief_safe,U_knowledge_collision,flag,line_hits\n");
        let (mut flagged, mut outside) = (0usize, 0usize);
        for i in 0..g {
            for j in 0..g {
                let x = p.sweep_lo[0] + (i as f64 + 0.5) * cell[0];
                let y = p.sweep_lo[1] + (j as f64 + 0.5) * cell[1];
                let w = [x, y, p.rover[2], p.rover[3]];
                let a = attitudes(p, &lib, &sweep_cfg, &formula, &w, derive_seed(cfg.seed, 34, (i * g + j) as u64))?;
                let flag = a.flag(p);
                let hits = line_hits(x, y, reach, &p.chasm, dilated);
                flagged += usize::from(flag);
                outside += usize::from(flag && !hits);
                csv.push_str(&format!(
                    "{x},{y},{},{},{},{}\n",
                    a.l_belief_safe,
                    a.u_know_collision,
                    u8::from(flag),
                    u8::from(hits)
                ));
            }
        }
        r.set("sweep_flagged_cells", flagged as f64)
            .set("sweep_cells_off_path", outside as f64)
            .flag("sweep_within_dilated_path", outside == 0);
        artifacts.push(Artifact { name: "swarm_sweep.csv".into(), contents: csv });
    }
    let metrics = MetricsFile::new("swarm", cfg.seed, vec![r]);
    metrics.validate()?;
    Ok(RunOutput { metrics, artifacts })
}
