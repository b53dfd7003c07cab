use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::Graph;
use crate::error::{Error, Result};
use crate::formula::{AtomRegistry, Formula};
use crate::modal::{Evaluator, OperatorConfig};
use crate::sde::{derive_seed, BaseDrift, EvalContext, InitPolicy, SdeLibrary};

/// How a formula's lower bound enters the logic loss.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Objective {
    /// Loss `-L`.
    Maximize,
    /// Loss `max(0, margin - L)`.
    Hinge { margin: f64 },
}

impl Default for Objective {
    fn default() -> Self {
        Objective::Hinge { margin: 0.1 }
    }
}

impl Objective {
    fn apply(self, l: f64) -> f64 {
        match self {
            Objective::Maximize => -l,
            Objective::Hinge { margin } => (margin - l).max(0.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FormulaTarget {
    pub name: String,
    pub formula: Formula,
    pub objective: Objective,
}

impl FormulaTarget {
    pub fn new(name: impl Into<String>, formula: Formula, objective: Objective) -> Self {
        Self { name: name.into(), formula, objective }
    }
}

/// Step-dependent weight of the logic loss.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LambdaSchedule {
    Constant { value: f64 },
    /// Zero before `start`, then linear up to `max` over `length` steps.
    Ramp { start: usize, length: usize, max: f64 },
}

impl Default for LambdaSchedule {
    fn default() -> Self {
        LambdaSchedule::Constant { value: 1.0 }
    }
}

impl LambdaSchedule {
    pub fn at(&self, step: usize) -> f64 {
        match *self {
            LambdaSchedule::Constant { value } => value,
            LambdaSchedule::Ramp { start, length, max } => {
                if step < start {
                    0.0
                } else if length == 0 || step >= start + length {
                    max
                } else {
                    max * (step - start + 1) as f64 / length as f64
                }
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let v = match *self {
            LambdaSchedule::Constant { value } => value,
            LambdaSchedule::Ramp { max, .. } => max,
        };
        if !(v >= 0.0 && v.is_finite()) {
            return Err(Error::Config(format!("logic loss weight must be non-negative, got {v}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub beta_contra: f64,
    pub gamma_physics: f64,
    /// Per modality key.
    pub lambda_axiom: BTreeMap<String, f64>,
    pub lambda_linn: LambdaSchedule,
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let fixed = [self.beta_contra, self.gamma_physics].into_iter().chain(self.lambda_axiom.values().copied());
        for w in fixed {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::Config(format!("loss weights must be non-negative, got {w}")));
            }
        }
        self.lambda_linn.validate()
    }
}

/// Windows of observed trajectories for the rollout loss.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TaskData {
    /// Library key of the SDE whose drift is fitted.
    pub key: String,
    pub dt: f64,
    pub starts: Vec<Vec<f64>>,
    /// `targets[i][r]` is the observed state `r + 1` steps after `starts[i]`.
    pub targets: Vec<Vec<Vec<f64>>>,
    /// Windows drawn per step; all of them when `None`.
    pub batch: Option<usize>,
}

/// Residual of a learned drift against a known one on fixed points.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhysicsTerm {
    pub key: String,
    pub reference: BaseDrift,
    pub points: Vec<Vec<f64>>,
}

/// Everything the composite loss depends on besides the step and batch.
#[derive(Clone, Debug, Default)]
pub struct Problem {
    pub library: SdeLibrary,
    pub atoms: AtomRegistry,
    pub cfg: OperatorConfig,
    pub ctx: EvalContext,
    pub targets: Vec<FormulaTarget>,
    pub weights: LossWeights,
    pub data: Option<TaskData>,
    pub physics: Option<PhysicsTerm>,
    /// Atoms whose T gap is penalized for modalities with a weight.
    pub axiom_atoms: Vec<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub step: usize,
    pub task: f64,
    pub contra: f64,
    pub physics: f64,
    pub axiom: BTreeMap<String, f64>,
    pub linn: f64,
    pub lambda_linn: f64,
    pub total: f64,
    /// Batch mean of each target's lower bound.
    pub satisfaction: BTreeMap<String, f64>,
}

impl LossReport {
    /// The weighted sum of the terms under `weights` at this step.
    pub fn weighted_sum(&self, weights: &LossWeights) -> f64 {
        let axiom: f64 = self.axiom.iter().map(|(k, v)| weights.lambda_axiom.get(k).copied().unwrap_or(0.0) * v).sum();
        self.task
            + weights.beta_contra * self.contra
            + weights.gamma_physics * self.physics
            + axiom
            + weights.lambda_linn.at(self.step) * self.linn
    }
}

pub fn to_jsonl(reports: &[LossReport]) -> String {
    let mut out = String::new();
    for r in reports {
        out.push_str(&serde_json::to_string(r).expect("loss reports serialize"));
        out.push('\n');
    }
    out
}

fn non_finite(term: &str) -> Error {
    Error::Numeric { context: format!("loss term `{term}`") }
}

// One independently differentiated piece of the loss.
enum Unit {
    World(usize),
    Task(Vec<usize>),
    Physics,
}

#[derive(Default)]
struct Partial {
    task: f64,
    contra: f64,
    physics: f64,
    axiom: BTreeMap<String, f64>,
    linn: f64,
    satisfaction: BTreeMap<String, f64>,
}

const TASK_CHUNK: usize = 16;

/// Evaluates the composite loss on `batch` and leaves its gradient in the
/// library's network tensors (previous gradients are cleared).
///
/// Terms whose weight is zero at this step are not evaluated and report 0.
pub fn total_loss(problem: &mut Problem, batch: &[Vec<f64>], step: usize, seed: u64) -> Result<LossReport> {
    problem.weights.validate()?;
    problem.library.validate()?;
    let lambda_linn = problem.weights.lambda_linn.at(step);
    let need_formulas = !problem.targets.is_empty() && (lambda_linn > 0.0 || problem.weights.beta_contra > 0.0);
    let axiom_keys: Vec<String> = problem
        .weights
        .lambda_axiom
        .iter()
        .filter(|(k, w)| **w > 0.0 && problem.library.by_key(k).is_some_and(|s| s.init == InitPolicy::TrueState))
        .map(|(k, _)| k.clone())
        .collect();

    let mut units = Vec::new();
    if need_formulas || (!axiom_keys.is_empty() && !problem.axiom_atoms.is_empty()) {
        units.extend((0..batch.len()).map(Unit::World));
    }
    if let Some(data) = &problem.data {
        let idx = task_indices(data, step, seed);
        units.extend(idx.chunks(TASK_CHUNK).map(|c| Unit::Task(c.to_vec())));
    }
    if problem.physics.is_some() && problem.weights.gamma_physics > 0.0 {
        units.push(Unit::Physics);
    }

    let shared = &*problem;
    let results: Vec<Result<(Partial, SdeLibrary)>> = units
        .par_iter()
        .map(|u| shared.unit(u, batch, step, seed, lambda_linn, need_formulas, &axiom_keys))
        .collect();

    problem.library.zero_grad();
    let mut report = LossReport { step, lambda_linn, ..Default::default() };
    for k in &axiom_keys {
        report.axiom.insert(k.clone(), 0.0);
    }
    for r in results {
        let (p, lib) = r?;
        report.task += p.task;
        report.contra += p.contra;
        report.physics += p.physics;
        report.linn += p.linn;
        for (k, v) in p.axiom {
            *report.axiom.entry(k).or_default() += v;
        }
        for (k, v) in p.satisfaction {
            *report.satisfaction.entry(k).or_default() += v;
        }
        add_grads(&mut problem.library, &lib);
    }
    report.total = report.weighted_sum(&problem.weights);
    for (name, v) in
        [("task", report.task), ("contra", report.contra), ("physics", report.physics), ("linn", report.linn)]
    {
        if !v.is_finite() {
            return Err(non_finite(name));
        }
    }
    if let Some((k, _)) = report.axiom.iter().find(|(_, v)| !v.is_finite()) {
        return Err(non_finite(&format!("axiom:{k}")));
    }
    if !report.total.is_finite() {
        return Err(non_finite("total"));
    }
    Ok(report)
}

fn task_indices(data: &TaskData, step: usize, seed: u64) -> Vec<usize> {
    let n = data.starts.len();
    match data.batch {
        Some(b) if b < n => {
            let u = crate::sde::rng::uniform(derive_seed(seed, step as u64, 0x7A5C), 0, b, 0.0, n as f64);
            u.into_iter().map(|x| (x as usize).min(n - 1)).collect()
        }
        _ => (0..n).collect(),
    }
}

fn add_grads(into: &mut SdeLibrary, from: &SdeLibrary) {
    for ((_, dst), (_, src)) in into.iter_mut().zip(from.iter()) {
        let src_nets: Vec<_> = src.networks().into_iter().map(|(_, m)| m).collect();
        for (d, s) in dst.networks_mut().into_iter().zip(src_nets) {
            for (dt, st) in d.params_mut().into_iter().zip(s.params()) {
                if let Some(gs) = st.grad() {
                    dt.accumulate_grad(gs);
                }
            }
        }
    }
}

impl Problem {
    #[allow(clippy::too_many_arguments)]
    fn unit(
        &self,
        unit: &Unit,
        batch: &[Vec<f64>],
        step: usize,
        seed: u64,
        lambda_linn: f64,
        need_formulas: bool,
        axiom_keys: &[String],
    ) -> Result<(Partial, SdeLibrary)> {
        let mut lib = self.library.clone();
        lib.zero_grad();
        let mut g = Graph::new();
        let ev = Evaluator::new(&self.library, &self.atoms, &self.cfg, &self.ctx);
        let ge = ev.bind(&mut g, true);
        let mut p = Partial::default();
        let mut objective = None;
        let mut push = |g: &mut Graph, v| {
            objective = Some(match objective {
                Some(o) => g.add(o, v),
                None => v,
            })
        };
        match unit {
            Unit::World(i) => {
                let m = batch.len() as f64;
                let w = &batch[*i];
                let z = g.constant(1, w.len(), w.clone());
                let world_seed = derive_seed(seed, *i as u64, 0xF0);
                if need_formulas {
                    for (j, t) in self.targets.iter().enumerate() {
                        let iv = ge.eval(&mut g, &t.formula, z, &[derive_seed(world_seed, j as u64, 0)])?;
                        let (l, u) = (g.item(iv.lower), g.item(iv.upper));
                        *p.satisfaction.entry(t.name.clone()).or_default() += l / m;
                        p.linn += t.objective.apply(l) / m;
                        p.contra += (l - u).max(0.0).powi(2) / m;
                        if lambda_linn > 0.0 {
                            let term = match t.objective {
                                Objective::Maximize => g.neg(iv.lower),
                                Objective::Hinge { margin } => {
                                    let neg = g.neg(iv.lower);
                                    let h = g.add_scalar(neg, margin);
                                    let zero = g.scalar(0.0);
                                    g.maximum(h, zero)
                                }
                            };
                            let term = g.scale(term, lambda_linn / m);
                            push(&mut g, term);
                        }
                        if self.weights.beta_contra > 0.0 {
                            let diff = g.sub(iv.lower, iv.upper);
                            let zero = g.scalar(0.0);
                            let pos = g.maximum(diff, zero);
                            let sq = g.square(pos);
                            let term = g.scale(sq, self.weights.beta_contra / m);
                            push(&mut g, term);
                        }
                    }
                }
                for (a, key) in axiom_keys.iter().enumerate() {
                    let modality = crate::formula::Modality::from_key(key)
                        .ok_or_else(|| Error::Config(format!("axiom weight for unknown modality `{key}`")))?;
                    let lam = self.weights.lambda_axiom[key];
                    let slack = self.cfg.soundness_slack(self.cfg.k_steps);
                    for (b, name) in self.axiom_atoms.iter().enumerate() {
                        let atom = Formula::atom(name.clone());
                        let boxed = Formula::necessity(modality.clone(), None, atom.clone());
                        let s = derive_seed(world_seed, 0xA0 + a as u64, b as u64);
                        let lb = ge.eval(&mut g, &boxed, z, &[s])?.lower;
                        let here = ge.eval(&mut g, &atom, z, &[s])?.lower;
                        let gap = g.sub(lb, here);
                        let gap = g.add_scalar(gap, -slack);
                        let zero = g.scalar(0.0);
                        let hinge = g.maximum(gap, zero);
                        *p.axiom.entry(key.clone()).or_default() += g.item(hinge) / m;
                        let term = g.scale(hinge, lam / m);
                        push(&mut g, term);
                    }
                }
            }
            Unit::Task(idx) => {
                let data = self.data.as_ref().expect("task unit without data");
                let spec = self
                    .library
                    .by_key(&data.key)
                    .ok_or_else(|| Error::UnknownModality(data.key.clone()))?;
                let bound = ge.bound(&data.key).expect("library keys are bound");
                let n_windows = task_indices(data, step, seed).len() as f64;
                let d = spec.dim;
                let starts: Vec<f64> = idx.iter().flat_map(|&i| data.starts[i].iter().copied()).collect();
                let mut z = g.constant(idx.len(), d, starts);
                let horizon = data.targets[idx[0]].len();
                let mut sq_total = None;
                for r in 0..horizon {
                    let f = spec.drift_graph(&mut g, bound, z, None, r as f64 * data.dt)?;
                    let fd = g.scale(f, data.dt);
                    z = g.add(z, fd);
                    let target: Vec<f64> = idx
                        .iter()
                        .flat_map(|&i| {
                            let t = &data.targets[i];
                            assert_eq!(t.len(), horizon, "task windows must share one length");
                            t[r].iter().copied()
                        })
                        .collect();
                    let t = g.constant(idx.len(), d, target);
                    let e = g.sub(z, t);
                    let e = g.square(e);
                    let s = g.sum(e);
                    sq_total = Some(match sq_total {
                        Some(a) => g.add(a, s),
                        None => s,
                    });
                }
                if let Some(s) = sq_total {
                    let term = g.scale(s, 1.0 / (n_windows * horizon as f64 * d as f64));
                    p.task = g.item(term);
                    push(&mut g, term);
                }
            }
            Unit::Physics => {
                let phys = self.physics.as_ref().expect("physics unit without a term");
                let spec = self
                    .library
                    .by_key(&phys.key)
                    .ok_or_else(|| Error::UnknownModality(phys.key.clone()))?;
                let bound = ge.bound(&phys.key).expect("library keys are bound");
                let d = spec.dim;
                let pts: Vec<f64> = phys.points.iter().flatten().copied().collect();
                let z = g.constant(phys.points.len(), d, pts);
                let f = spec.drift_graph(&mut g, bound, z, None, 0.0)?;
                let r = phys.reference.eval_graph(&mut g, z, 0.0);
                let e = g.sub(f, r);
                let e = g.square(e);
                let s = g.sum(e);
                let term = g.scale(s, 1.0 / phys.points.len() as f64);
                p.physics = g.item(term);
                let w = g.scale(term, self.weights.gamma_physics);
                push(&mut g, w);
            }
        }
        let bound = ge.into_bound();
        if let Some(o) = objective {
            if g.requires_grad(o) {
                g.backward(o)?;
                for (key, spec) in lib.iter_mut() {
                    spec.accumulate_grads(&g, &bound[key]);
                }
            }
        }
        Ok((p, lib))
    }
}
