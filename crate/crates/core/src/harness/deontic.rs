//! Confinement under an obligation: a swirling vessel with an outward
//! pressure gradient, and a deontic SDE that learns an additive restoring
//! correction by maximizing `O(safe)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formula::{AtomFn, AtomRegistry, Formula, Modality};
use crate::harness::common::{annulus, exit_fraction, median, pearson, quantifier_gap, quantifier_profile};
use crate::harness::{Artifact, ExperimentConfig, MetricsFile, MetricsRecord, ModalSetup, NetBlock, RunOutput};
use crate::modal::{plot_csv, Evaluator, OperatorConfig};
use crate::sde::{derive_seed, simulate, BaseDrift, EvalContext, SdeLibrary, SdeSpec};
use crate::training::{
    save_checkpoint, to_jsonl, train, AdamConfig, BatchSource, FormulaTarget, LambdaSchedule, LossWeights, Objective,
    Problem, TrainConfig,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DeonticParams {
    pub r_safe: f64,
    pub swirl: f64,
    /// Outward radial gain of the base drift.
    pub pressure: f64,
    pub sigma: f64,
    pub horizon: f64,
    /// Training worlds are drawn from this disk.
    pub train_radius: f64,
    /// Exit fractions are measured from worlds in this disk.
    pub eval_radius: f64,
    pub eval_worlds: usize,
    /// World at which the truth intervals are reported.
    pub reference_world: Vec<f64>,
    /// Trivial baseline: `-gain * r_hat` beyond `threshold`.
    pub baseline_gain: f64,
    pub baseline_threshold: f64,
    pub correction: NetBlock,
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Boundary-layer probe points for the learned drift.
    pub probe_points: usize,
    pub probe_r_in: f64,
    pub probe_r_out: f64,
}

impl Default for DeonticParams {
    fn default() -> Self {
        Self {
            r_safe: 1.0,
            swirl: 1.0,
            pressure: 0.5,
            sigma: 0.1,
            horizon: 2.0,
            train_radius: 0.9,
            eval_radius: 0.6,
            eval_worlds: 64,
            reference_world: vec![0.3, 0.0],
            baseline_gain: 1.0,
            baseline_threshold: 0.6,
            correction: NetBlock { hidden: vec![32], seed: 11, init_scale: 0.1 },
            steps: 300,
            batch_size: 16,
            lr: 5e-3,
            probe_points: 1024,
            probe_r_in: 0.8,
            probe_r_out: 1.0,
        }
    }
}

impl DeonticParams {
    fn validate(&self) -> Result<()> {
        let positive = [self.r_safe, self.horizon, self.train_radius, self.eval_radius, self.lr];
        if positive.iter().any(|v| !(*v > 0.0)) || self.sigma < 0.0 || self.reference_world.len() != 2 {
            return Err(Error::Config("deontic: radii, horizon and step size must be positive".into()));
        }
        if self.eval_worlds == 0 || self.batch_size == 0 || self.probe_points == 0 {
            return Err(Error::Config("deontic: counts must be positive".into()));
        }
        Ok(())
    }

    fn base(&self) -> BaseDrift {
        BaseDrift::Confinement { swirl: self.swirl, pressure: self.pressure }
    }

    fn spec(&self, name: &str, base: BaseDrift) -> SdeSpec {
        SdeSpec::new(name, 2, self.horizon).with_base(base).with_sigma(self.sigma)
    }
}

/// Untrained library: the base vessel as `temporal` and the corrected SDE as
/// `deontic`.
pub(crate) fn setup(p: &DeonticParams) -> Result<ModalSetup> {
    p.validate()?;
    let deontic = p.spec("deontic", p.base()).with_correction(p.correction.build(2, 2)?);
    Ok(ModalSetup {
        library: SdeLibrary::new()
            .with(Modality::Temporal, p.spec("temporal", p.base()))
            .with(Modality::Deontic, deontic),
        atoms: AtomRegistry::new().with("safe", AtomFn::inside_ball(vec![0.0, 0.0], p.r_safe)),
        ctx: EvalContext::default(),
        dim: 2,
    })
}

fn disk(seed: u64, count: usize, radius: f64) -> Vec<Vec<f64>> {
    BatchSource::Disk { center: vec![0.0, 0.0], radius, size: count, rest: vec![] }.sample(seed)
}

struct Variant {
    name: &'static str,
    modality: Modality,
    library: SdeLibrary,
}

pub fn run_deontic(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let p = cfg.deontic.as_ref().ok_or_else(|| Error::Config("missing `deontic` block".into()))?;
    p.validate()?;
    let atoms = AtomRegistry::new().with("safe", AtomFn::inside_ball(vec![0.0, 0.0], p.r_safe));
    let ctx = EvalContext::default();

    let correction = p.correction.build(2, 2)?;
    let deontic_spec = p.spec("deontic", p.base()).with_correction(correction);
    let mut problem = Problem {
        library: SdeLibrary::new().with(Modality::Deontic, deontic_spec),
        atoms: atoms.clone(),
        cfg: cfg.operator.clone(),
        ctx: ctx.clone(),
        targets: vec![FormulaTarget::new(
            "O_safe",
            Formula::necessity(Modality::Deontic, None, Formula::atom("safe")),
            Objective::Maximize,
        )],
        weights: LossWeights { lambda_linn: LambdaSchedule::Constant { value: 1.0 }, ..Default::default() },
        ..Default::default()
    };
    let tcfg = TrainConfig {
        adam: AdamConfig { lr: p.lr, ..Default::default() },
        steps: p.steps,
        batch: BatchSource::Disk { center: vec![0.0, 0.0], radius: p.train_radius, size: p.batch_size, rest: vec![] },
        seed: derive_seed(cfg.seed, 1, 0),
        mining: None,
    };
    let outcome = train(&mut problem, &tcfg, 0)?;

    let baseline = BaseDrift::Sum {
        terms: vec![
            p.base(),
            BaseDrift::RadialRestoring { gain: p.baseline_gain, threshold: p.baseline_threshold },
        ],
    };
    let variants = [
        Variant {
            name: "temporal",
            modality: Modality::Temporal,
            library: SdeLibrary::new().with(Modality::Temporal, p.spec("temporal", p.base())),
        },
        Variant {
            name: "baseline",
            modality: Modality::Temporal,
            library: SdeLibrary::new().with(Modality::Temporal, p.spec("baseline", baseline)),
        },
        Variant { name: "deontic", modality: Modality::Deontic, library: problem.library.clone() },
    ];

    let eval_cfg = OperatorConfig { n_mc: cfg.eval_n_mc, ..cfg.operator.clone() };
    let worlds = disk(derive_seed(cfg.seed, 2, 0), p.eval_worlds, p.eval_radius);
    let safe = atoms.get("safe")?.lower.clone();
    let eval_seed = derive_seed(cfg.seed, 3, 0);
    let mut records = Vec::new();
    let mut artifacts = Vec::new();
    for v in &variants {
        let ev = Evaluator::new(&v.library, &atoms, &eval_cfg, &ctx);
        let boxed = Formula::necessity(v.modality.clone(), None, Formula::atom("safe"));
        let dia = Formula::possibility(v.modality.clone(), None, Formula::atom("safe"));
        let l_box = ev.eval(&boxed, &p.reference_world, eval_seed)?.lower;
        let u_dia = ev.eval(&dia, &p.reference_world, eval_seed)?.upper;
        let seeds: Vec<u64> = (0..worlds.len()).map(|i| derive_seed(eval_seed, i as u64, 1)).collect();
        let mean_l = ev.eval_many(&boxed, &worlds, &seeds)?.iter().map(|t| t.lower).sum::<f64>() / worlds.len() as f64;

        let spec = v.library.get(&v.modality)?;
        let bundles = worlds
            .iter()
            .zip(&seeds)
            .map(|(w, s)| simulate(spec, w, cfg.eval_n_mc, eval_cfg.k_steps, *s))
            .collect::<Result<Vec<_>>>()?;
        let exit = exit_fraction(&bundles, |z| z[0].hypot(z[1]) <= p.r_safe);
        let ref_bundle = simulate(spec, &p.reference_world, cfg.eval_n_mc, eval_cfg.k_steps, eval_seed)?;
        let profile = quantifier_profile(&ref_bundle, &safe, eval_cfg.clip, eval_cfg.tau_omega);

        let mut r = MetricsRecord::new(v.name);
        r.set("L_box_safe", l_box)
            .set("U_diamond_safe", u_dia)
            .set("L_box_safe_eval_mean", mean_l)
            .set("exit_fraction", exit)
            .set("quantifier_gap", quantifier_gap(&profile));
        if v.name == "deontic" {
            let net = spec.correction.as_ref().expect("deontic SDE has a correction");
            let probe = annulus(derive_seed(cfg.seed, 4, 0), p.probe_points, p.probe_r_in, p.probe_r_out);
            let inward = probe
                .iter()
                .filter(|z| {
                    let c = net.forward_point(&z[..]);
                    let r = z[0].hypot(z[1]);
                    -(c[0] * z[0] + c[1] * z[1]) / r > 0.0
                })
                .count();
            let inner = annulus(derive_seed(cfg.seed, 5, 0), p.probe_points, 0.0, p.r_safe);
            let radii: Vec<f64> = inner.iter().map(|z| z[0].hypot(z[1])).collect();
            let mags: Vec<f64> = inner
                .iter()
                .map(|z| {
                    let c = net.forward_point(&z[..]);
                    c[0].hypot(c[1])
                })
                .collect();
            let totals: Vec<f64> = outcome.reports.iter().map(|r| r.total).collect();
            let window = totals.len().min(100);
            r.set("inward_drift_frac", inward as f64 / probe.len() as f64)
                .set("drift_radius_corr", pearson(&radii, &mags))
                .set("train_steps", outcome.reports.len() as f64);
            if window > 0 {
                r.set("loss_median_first", median(&totals[..window]))
                    .set("loss_median_last", median(&totals[totals.len() - window..]));
            }
            r.flag("stopped_early", outcome.stopped_early.is_some());
        }
        records.push(r);
        artifacts.push(Artifact { name: format!("deontic_{}_plot.csv", v.name), contents: plot_csv(&profile) });
    }
    artifacts.push(Artifact { name: "deontic_loss.jsonl".into(), contents: to_jsonl(&outcome.reports) });
    artifacts.push(Artifact { name: "deontic.ckpt".into(), contents: save_checkpoint(&problem.library) });
    let metrics = MetricsFile::new("deontic", cfg.seed, records);
    metrics.validate()?;
    Ok(RunOutput { metrics, artifacts })
}
