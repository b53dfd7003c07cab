use serde::{Deserialize, Serialize};

use crate::autodiff::checkpoint;
use crate::error::{Error, Result};
use crate::sde::rng::uniform;
use crate::sde::{derive_seed, SdeLibrary};
use crate::training::{mine_contradictions, total_loss, Adam, AdamConfig, LossReport, Problem};

/// Loss values above this stop training.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

/// Where each step's worlds come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BatchSource {
    Fixed { worlds: Vec<Vec<f64>> },
    /// Uniform in a disk over the first two coordinates; the remaining
    /// coordinates are taken from `rest`.
    Disk { center: Vec<f64>, radius: f64, size: usize, #[serde(default)] rest: Vec<f64> },
    /// Uniform in an axis-aligned box.
    Box { lo: Vec<f64>, hi: Vec<f64>, size: usize },
}

impl BatchSource {
    pub fn sample(&self, seed: u64) -> Vec<Vec<f64>> {
        match self {
            BatchSource::Fixed { worlds } => worlds.clone(),
            BatchSource::Disk { center, radius, size, rest } => {
                let u = uniform(seed, 0, 2 * size, 0.0, 1.0);
                u.chunks(2)
                    .map(|p| {
                        let r = radius * p[0].sqrt();
                        let a = std::f64::consts::TAU * p[1];
                        let mut w = vec![center[0] + r * a.cos(), center[1] + r * a.sin()];
                        w.extend_from_slice(rest);
                        w
                    })
                    .collect()
            }
            BatchSource::Box { lo, hi, size } => {
                let d = lo.len();
                let u = uniform(seed, 0, d * size, 0.0, 1.0);
                u.chunks(d).map(|p| p.iter().enumerate().map(|(j, x)| lo[j] + x * (hi[j] - lo[j])).collect()).collect()
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match self {
            BatchSource::Fixed { worlds } => !worlds.is_empty(),
            BatchSource::Disk { center, radius, size, .. } => center.len() == 2 && *radius > 0.0 && *size > 0,
            BatchSource::Box { lo, hi, size } => {
                lo.len() == hi.len() && !lo.is_empty() && lo.iter().zip(hi).all(|(a, b)| a <= b) && *size > 0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config("empty or malformed training batch".into()))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MiningConfig {
    /// Mine every this many steps.
    pub every: usize,
    pub ascent_steps: usize,
    pub step_size: f64,
    pub pool: usize,
    pub region: Vec<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    #[serde(default)]
    pub adam: AdamConfig,
    pub steps: usize,
    pub batch: BatchSource,
    pub seed: u64,
    #[serde(default)]
    pub mining: Option<MiningConfig>,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.adam.validate()?;
        self.batch.validate()?;
        if let Some(m) = &self.mining {
            if m.every == 0 || m.pool == 0 || !(m.step_size > 0.0) {
                return Err(Error::Config("mining needs every, pool >= 1 and a positive step size".into()));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct TrainOutcome {
    pub reports: Vec<LossReport>,
    /// Why training stopped before `steps`, if it did.
    pub stopped_early: Option<String>,
}

/// Runs `cfg.steps` optimizer steps starting at global step `first_step`.
/// Noise and batches are fixed within a step and resampled across steps.
pub fn train(problem: &mut Problem, cfg: &TrainConfig, first_step: usize) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut opt = Adam::new(cfg.adam);
    let mut out = TrainOutcome::default();
    let mut mined: Vec<Vec<f64>> = Vec::new();
    for i in 0..cfg.steps {
        let step = first_step + i;
        let step_seed = derive_seed(cfg.seed, step as u64, 0);
        let mut batch = cfg.batch.sample(derive_seed(cfg.seed, step as u64, 1));
        if let Some(m) = &cfg.mining {
            if i % m.every == 0 {
                mined.clear();
                for t in &problem.targets {
                    let found = mine_contradictions(
                        &t.formula,
                        &m.region,
                        &problem.library,
                        &problem.atoms,
                        &problem.cfg,
                        &problem.ctx,
                        m.pool,
                        m.ascent_steps,
                        m.step_size,
                        derive_seed(cfg.seed, step as u64, 2),
                    )?;
                    mined.extend(found.into_iter().map(|m| m.world));
                }
            }
            batch.extend(mined.iter().cloned());
        }
        let report = match total_loss(problem, &batch, step, step_seed) {
            Ok(r) => r,
            Err(e) if e.is_numeric() => {
                out.stopped_early = Some(format!("step {step}: {e}"));
                break;
            }
            Err(e) => return Err(e),
        };
        let diverged = report.total > DIVERGENCE_LIMIT;
        out.reports.push(report);
        if diverged {
            out.stopped_early = Some(format!("step {step}: loss exceeded {DIVERGENCE_LIMIT:e}"));
            break;
        }
        opt.step(&mut problem.library);
    }
    Ok(out)
}

pub fn save_checkpoint(library: &SdeLibrary) -> String {
    let nets = library.networks();
    checkpoint::to_string(nets.iter().map(|(n, m)| (n.as_str(), *m)))
}

/// Loads networks by name into the matching slots of `library`.
pub fn load_checkpoint(library: &mut SdeLibrary, text: &str) -> Result<()> {
    let loaded = checkpoint::from_str(text)?;
    for (_, spec) in library.iter_mut() {
        let drift_name = format!("{}.drift", spec.name);
        let diff_name = format!("{}.diffusion", spec.name);
        for (name, net) in &loaded {
            if *name == drift_name {
                spec.correction = Some(net.clone());
            } else if *name == diff_name {
                spec.diffusion = crate::sde::Diffusion::Learned(net.clone());
            }
        }
    }
    library.validate()
}
