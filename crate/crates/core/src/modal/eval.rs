use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::autodiff::{Axis, Graph, Var};
use crate::error::{Error, Result};
use crate::formula::{AtomRegistry, Formula, Window};
use crate::modal::{OperatorConfig, TruthInterval};
use crate::sde::{
    derive_seed, simulate_graph, BoundSde, DivergencePolicy, EvalContext, InitPolicy, RowStream, SdeLibrary,
    SdeSpec,
};

/// Row-cost budget for one plain-mode graph (rows times grid points).
const CHUNK_BUDGET: usize = 1 << 16;

/// Graph handles for the lower and upper bound, each `worlds x 1`.
#[derive(Clone, Copy, Debug)]
pub struct VarInterval {
    pub lower: Var,
    pub upper: Var,
}

/// Per-path scores of a modal node.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PathScores {
    /// Soft minimum over grid times of the body's lower bound.
    pub g: Vec<f64>,
    /// Soft maximum over grid times of the body's upper bound.
    pub h: Vec<f64>,
    /// Hard minimum over grid times of the body's lower bound.
    pub hard_min: Vec<f64>,
    /// Hard maximum over grid times of the body's upper bound.
    pub hard_max: Vec<f64>,
    /// Number of grid points aggregated per path.
    pub k: usize,
    pub escaped: Vec<bool>,
}

/// Shared inputs of an evaluation.
#[derive(Clone, Copy, Debug)]
pub struct Evaluator<'a> {
    pub library: &'a SdeLibrary,
    pub atoms: &'a AtomRegistry,
    pub cfg: &'a OperatorConfig,
    pub ctx: &'a EvalContext,
    pub policy: DivergencePolicy,
}

/// An [`Evaluator`] with every SDE bound into one graph.
pub struct GraphEvaluator<'a> {
    base: Evaluator<'a>,
    bound: BTreeMap<String, BoundSde>,
}

enum Stages<'s> {
    Modal { spec: &'s SdeSpec, window: Option<Window> },
    Seq { specs: Vec<(&'s str, &'s SdeSpec)> },
}

struct NodeScores {
    min_l: Var,
    min_u: Var,
    max_l: Var,
    max_u: Var,
    hard_min: Vec<f64>,
    hard_max: Vec<f64>,
    k: usize,
    escaped: Vec<bool>,
}

pub(crate) fn soft_extreme(xs: &[f64], t: f64) -> f64 {
    let m = if t > 0.0 {
        xs.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    } else {
        xs.iter().copied().fold(f64::INFINITY, f64::min)
    };
    if !m.is_finite() {
        return m;
    }
    let s: f64 = xs.iter().map(|x| ((x - m) / t).exp()).sum();
    m + t * (s.ln() - (xs.len() as f64).ln())
}

/// `-tau * ln(mean(exp(-x / tau)))`.
pub fn softmin(xs: &[f64], tau: f64) -> f64 {
    soft_extreme(xs, -tau)
}

/// `tau * ln(mean(exp(x / tau)))`.
pub fn softmax(xs: &[f64], tau: f64) -> f64 {
    soft_extreme(xs, tau)
}

fn numeric(f: &Formula) -> Error {
    Error::Numeric { context: format!("subformula `{f}`") }
}

impl<'a> Evaluator<'a> {
    pub fn new(library: &'a SdeLibrary, atoms: &'a AtomRegistry, cfg: &'a OperatorConfig, ctx: &'a EvalContext) -> Self {
        Self { library, atoms, cfg, ctx, policy: DivergencePolicy::Record }
    }

    pub fn with_policy(mut self, policy: DivergencePolicy) -> Self {
        self.policy = policy;
        self
    }

    /// Checks modalities, atoms, depth and configuration before evaluation.
    pub fn check(&self, f: &Formula, dim: usize) -> Result<()> {
        self.cfg.validate()?;
        let depth = f.nesting_depth();
        if depth > self.cfg.max_depth {
            return Err(Error::Config(format!(
                "formula nesting depth {depth} exceeds max_depth {}",
                self.cfg.max_depth
            )));
        }
        for m in f.modalities() {
            let spec = self.library.get(&m)?;
            if spec.dim != dim {
                return Err(Error::Dimension(format!(
                    "SDE for {m} has dimension {}, world has {dim}",
                    spec.dim
                )));
            }
            spec.validate()?;
        }
        for a in f.actions() {
            let spec = self.library.action(&a)?;
            if spec.dim != dim {
                return Err(Error::Dimension(format!("action `{a}` SDE has dimension {}", spec.dim)));
            }
            spec.validate()?;
        }
        self.atoms.check_formula(f, dim)
    }

    pub fn bind(&self, g: &mut Graph, track: bool) -> GraphEvaluator<'a> {
        let bound = self.library.iter().map(|(k, s)| (k.clone(), s.bind(g, track))).collect();
        GraphEvaluator { base: *self, bound }
    }

    /// Interval of `f` at world `w`, with noise seeded by `seed`.
    pub fn eval(&self, f: &Formula, w: &[f64], seed: u64) -> Result<TruthInterval> {
        self.check(f, w.len())?;
        self.eval_plain(f, w, seed)
    }

    /// Evaluates several worlds; world `i` uses seed `seeds[i]`.
    pub fn eval_many(&self, f: &Formula, worlds: &[Vec<f64>], seeds: &[u64]) -> Result<Vec<TruthInterval>> {
        if worlds.len() != seeds.len() {
            return Err(Error::Dimension("one seed per world required".into()));
        }
        if let Some(w) = worlds.first() {
            self.check(f, w.len())?;
        }
        worlds.par_iter().zip(seeds).map(|(w, s)| self.eval_plain(f, w, *s)).collect()
    }

    fn eval_plain(&self, f: &Formula, w: &[f64], seed: u64) -> Result<TruthInterval> {
        let out = match f {
            Formula::Atom(_) => {
                let mut g = Graph::new();
                let ge = self.bind(&mut g, false);
                let z = g.constant(1, w.len(), w.to_vec());
                let iv = ge.eval(&mut g, f, z, &[seed])?;
                TruthInterval::new(g.item(iv.lower), g.item(iv.upper))
            }
            Formula::Not(a) => {
                let a = self.eval_plain(a, w, seed)?;
                TruthInterval::new(-a.upper, -a.lower)
            }
            Formula::And(a, b) => {
                let (a, b) = (self.eval_plain(a, w, seed)?, self.eval_plain(b, w, seed)?);
                TruthInterval::new(a.lower.min(b.lower), a.upper.min(b.upper))
            }
            Formula::Or(a, b) => {
                let (a, b) = (self.eval_plain(a, w, seed)?, self.eval_plain(b, w, seed)?);
                TruthInterval::new(a.lower.max(b.lower), a.upper.max(b.upper))
            }
            Formula::Necessity { .. } | Formula::Possibility { .. } | Formula::Seq { .. } => {
                let s = self.path_scores_unchecked(f, w, seed)?;
                let (tw, (lo, hi)) = (self.cfg.tau_omega, self.plain_scores_for(f, &s));
                if matches!(f, Formula::Possibility { .. }) {
                    TruthInterval::new(softmax(&lo, tw), softmax(&hi, tw))
                } else {
                    TruthInterval::new(softmin(&lo, tw), softmin(&hi, tw))
                }
            }
        };
        if !out.is_finite() {
            return Err(numeric(f));
        }
        Ok(out)
    }

    // Per-path inputs of the path aggregation for the lower and upper bound.
    fn plain_scores_for(&self, f: &Formula, s: &ChunkedScores) -> (Vec<f64>, Vec<f64>) {
        if matches!(f, Formula::Possibility { .. }) {
            (s.max_l.clone(), s.scores.h.clone())
        } else {
            (s.scores.g.clone(), s.min_u.clone())
        }
    }

    /// Per-path scores of a modal formula at `w`.
    pub fn path_scores(&self, f: &Formula, w: &[f64], seed: u64) -> Result<PathScores> {
        self.check(f, w.len())?;
        Ok(self.path_scores_unchecked(f, w, seed)?.scores)
    }

    fn path_scores_unchecked(&self, f: &Formula, w: &[f64], seed: u64) -> Result<ChunkedScores> {
        let n = self.cfg.n_mc;
        let per_path = self.path_cost(f).max(1);
        let chunk = (CHUNK_BUDGET / per_path).clamp(1, n);
        let ranges: Vec<(usize, usize)> = (0..n).step_by(chunk).map(|a| (a, (a + chunk).min(n))).collect();
        let parts: Vec<Result<RawChunk>> = ranges
            .par_iter()
            .map(|&(a, b)| {
                let mut g = Graph::new();
                let ge = self.bind(&mut g, false);
                let z = g.constant(1, w.len(), w.to_vec());
                let s = ge.node_scores(&mut g, f, z, &[seed], a, b)?;
                Ok(RawChunk {
                    g: g.value(s.min_l).to_vec(),
                    min_u: g.value(s.min_u).to_vec(),
                    max_l: g.value(s.max_l).to_vec(),
                    h: g.value(s.max_u).to_vec(),
                    hard_min: s.hard_min,
                    hard_max: s.hard_max,
                    k: s.k,
                    escaped: s.escaped,
                })
            })
            .collect();
        let mut out = ChunkedScores::default();
        for p in parts {
            let p = p?;
            out.scores.g.extend(p.g);
            out.scores.h.extend(p.h);
            out.scores.hard_min.extend(p.hard_min);
            out.scores.hard_max.extend(p.hard_max);
            out.scores.escaped.extend(p.escaped);
            out.scores.k = p.k;
            out.min_u.extend(p.min_u);
            out.max_l.extend(p.max_l);
        }
        Ok(out)
    }

    // Rows x grid points touched per outer path.
    fn path_cost(&self, f: &Formula) -> usize {
        let k = self.cfg.k_steps;
        match f {
            Formula::Atom(_) => 1,
            Formula::Not(a) => self.path_cost(a),
            Formula::And(a, b) | Formula::Or(a, b) => self.path_cost(a) + self.path_cost(b),
            Formula::Necessity { body, .. } | Formula::Possibility { body, .. } => k * (1 + self.body_cost(body)),
            Formula::Seq { actions, body } => k * actions.len() * (1 + self.body_cost(body)),
        }
    }

    fn body_cost(&self, f: &Formula) -> usize {
        match f {
            Formula::Atom(_) => 1,
            Formula::Not(a) => self.body_cost(a),
            Formula::And(a, b) | Formula::Or(a, b) => self.body_cost(a) + self.body_cost(b),
            _ => self.cfg.n_mc * self.path_cost(f),
        }
    }
}

#[derive(Default)]
struct ChunkedScores {
    scores: PathScores,
    min_u: Vec<f64>,
    max_l: Vec<f64>,
}

struct RawChunk {
    g: Vec<f64>,
    min_u: Vec<f64>,
    max_l: Vec<f64>,
    h: Vec<f64>,
    hard_min: Vec<f64>,
    hard_max: Vec<f64>,
    k: usize,
    escaped: Vec<bool>,
}

impl<'a> GraphEvaluator<'a> {
    pub fn evaluator(&self) -> &Evaluator<'a> {
        &self.base
    }

    pub fn bound(&self, key: &str) -> Option<&BoundSde> {
        self.bound.get(key)
    }

    /// The parameter handles of every bound SDE, keyed like the library.
    pub fn into_bound(self) -> BTreeMap<String, BoundSde> {
        self.bound
    }

    /// Bounds of `f` on a batch of worlds (`m x d`); world `i` draws its
    /// noise from `seeds[i]`.
    pub fn eval(&self, g: &mut Graph, f: &Formula, worlds: Var, seeds: &[u64]) -> Result<VarInterval> {
        let (m, _) = g.shape(worlds);
        if seeds.len() != m {
            return Err(Error::Dimension(format!("{m} worlds but {} seeds", seeds.len())));
        }
        let b = self.base.cfg.clip;
        let out = match f {
            Formula::Atom(name) => {
                let def = self.base.atoms.get(name)?;
                let lo = def.lower.eval_graph(g, worlds);
                let lower = g.clip(lo, -b, b);
                let upper = if def.is_exact() {
                    lower
                } else {
                    let hi = def.upper().eval_graph(g, worlds);
                    g.clip(hi, -b, b)
                };
                VarInterval { lower, upper }
            }
            Formula::Not(a) => {
                let a = self.eval(g, a, worlds, seeds)?;
                VarInterval { lower: g.neg(a.upper), upper: g.neg(a.lower) }
            }
            Formula::And(a, c) | Formula::Or(a, c) => {
                let a = self.eval(g, a, worlds, seeds)?;
                let c = self.eval(g, c, worlds, seeds)?;
                if matches!(f, Formula::And(..)) {
                    VarInterval { lower: g.minimum(a.lower, c.lower), upper: g.minimum(a.upper, c.upper) }
                } else {
                    VarInterval { lower: g.maximum(a.lower, c.lower), upper: g.maximum(a.upper, c.upper) }
                }
            }
            Formula::Necessity { .. } | Formula::Seq { .. } => {
                let s = self.node_scores(g, f, worlds, seeds, 0, self.base.cfg.n_mc)?;
                let tw = self.base.cfg.tau_omega;
                VarInterval { lower: g.softmin(s.min_l, Axis::Cols, tw), upper: g.softmin(s.min_u, Axis::Cols, tw) }
            }
            Formula::Possibility { .. } => {
                let s = self.node_scores(g, f, worlds, seeds, 0, self.base.cfg.n_mc)?;
                let tw = self.base.cfg.tau_omega;
                VarInterval { lower: g.softmax(s.max_l, Axis::Cols, tw), upper: g.softmax(s.max_u, Axis::Cols, tw) }
            }
        };
        if g.value(out.lower).iter().chain(g.value(out.upper)).any(|v| !v.is_finite()) {
            return Err(numeric(f));
        }
        Ok(out)
    }

    fn start_block(&self, g: &mut Graph, spec: &SdeSpec, worlds: Var) -> Result<(Var, Option<Var>)> {
        let ctx = self.base.ctx;
        match &spec.init {
            InitPolicy::TrueState => Ok((worlds, None)),
            InitPolicy::BelievedState(agent) => {
                let off = ctx
                    .belief_offsets
                    .get(agent)
                    .ok_or_else(|| Error::Config(format!("no believed state for agent `{agent}`")))?;
                if off.len() != spec.dim {
                    return Err(Error::Dimension(format!("belief offset for `{agent}` has wrong length")));
                }
                let o = g.constant(1, spec.dim, off.clone());
                Ok((g.add(worlds, o), None))
            }
            InitPolicy::Conditioned(key) => {
                let obs = ctx
                    .observations
                    .get(key)
                    .ok_or_else(|| Error::Config(format!("no observation `{key}` in context")))?;
                if obs.len() != spec.obs_dim {
                    return Err(Error::Dimension(format!("observation `{key}` has wrong length")));
                }
                let o = g.constant(1, obs.len(), obs.clone());
                Ok((worlds, Some(o)))
            }
        }
    }

    fn bound_for(&self, key: &str) -> Result<&BoundSde> {
        self.bound.get(key).ok_or_else(|| Error::UnknownModality(key.to_string()))
    }

    /// Per-path time aggregates for paths `n0..n1` of a modal node.
    fn node_scores(
        &self,
        g: &mut Graph,
        f: &Formula,
        worlds: Var,
        seeds: &[u64],
        n0: usize,
        n1: usize,
    ) -> Result<NodeScores> {
        let cfg = self.base.cfg;
        let lib = self.base.library;
        let (stages, body) = match f {
            Formula::Necessity { modality, window, body } | Formula::Possibility { modality, window, body } => {
                (Stages::Modal { spec: lib.get(modality)?, window: *window }, body)
            }
            Formula::Seq { actions, body } => {
                let specs = actions.iter().map(|a| Ok((a.as_str(), lib.action(a)?))).collect::<Result<_>>()?;
                (Stages::Seq { specs }, body)
            }
            _ => return Err(Error::Contract("path scores need a modal formula".into())),
        };
        let (m, d) = g.shape(worlds);
        let nc = n1 - n0;
        let rows = m * nc;
        let (states, times, escaped, start_time) = match stages {
            Stages::Modal { spec, window } => {
                let key = modality_key(f);
                let bound = self.bound_for(&key)?;
                let (start, obs) = self.start_block(g, spec, worlds)?;
                let z0 = g.repeat_rows(start, nc);
                let (a, b) = match window {
                    Some(w) => (w.start, w.end),
                    None => (0.0, spec.horizon),
                };
                if b == 0.0 {
                    (vec![z0], vec![0.0], vec![false; rows], a)
                } else {
                    let streams = row_streams(seeds, n0, n1, 0);
                    let gp = simulate_graph(g, spec, bound, z0, obs, &streams, cfg.k_steps, b, 0.0, self.base.policy)?;
                    (gp.states, gp.times, gp.escaped, a)
                }
            }
            Stages::Seq { specs } => {
                let mut z = g.repeat_rows(worlds, nc);
                let mut states = vec![z];
                let mut times = vec![0.0];
                let mut escaped = vec![false; rows];
                let mut t0 = 0.0;
                for (j, (name, spec)) in specs.iter().enumerate() {
                    let bound = self.bound_for(&format!("action:{name}"))?;
                    let streams = row_streams(seeds, n0, n1, (j * cfg.n_mc) as u64);
                    let gp = simulate_graph(g, spec, bound, z, None, &streams, cfg.k_steps, spec.horizon, t0, self.base.policy)?;
                    states.extend_from_slice(&gp.states[1..]);
                    times.extend_from_slice(&gp.times[1..]);
                    for (e, x) in escaped.iter_mut().zip(gp.escaped) {
                        *e |= x;
                    }
                    z = *gp.states.last().unwrap();
                    t0 += spec.horizon;
                }
                (states, times, escaped, 0.0)
            }
        };

        let kept: Vec<usize> = (0..times.len()).filter(|&k| times[k] >= start_time - 1e-12).collect();
        let kk = kept.len();
        let block: Vec<Var> = kept.iter().map(|&k| states[k]).collect();
        let big = if block.len() == 1 { block[0] } else { g.vcat(&block) };
        let mut child_seeds = Vec::with_capacity(kk * rows);
        for &k in &kept {
            for &s in seeds {
                for n in n0..n1 {
                    child_seeds.push(derive_seed(s, n as u64, k as u64));
                }
            }
        }
        debug_assert_eq!(g.shape(big), (kk * rows, d));
        let child = self.eval(g, body, big, &child_seeds)?;

        let ts = cfg.tau_s;
        let agg = |g: &mut Graph, v: Var, min: bool| {
            let grid = g.reshape(v, kk, rows);
            let r = if min { g.softmin(grid, Axis::Rows, ts) } else { g.softmax(grid, Axis::Rows, ts) };
            g.reshape(r, m, nc)
        };
        let min_l = agg(g, child.lower, true);
        let min_u = agg(g, child.upper, true);
        let max_l = agg(g, child.lower, false);
        let max_u = agg(g, child.upper, false);

        let lv = g.value(child.lower);
        let uv = g.value(child.upper);
        let hard_min = (0..rows).map(|r| (0..kk).map(|k| lv[k * rows + r]).fold(f64::INFINITY, f64::min)).collect();
        let hard_max =
            (0..rows).map(|r| (0..kk).map(|k| uv[k * rows + r]).fold(f64::NEG_INFINITY, f64::max)).collect();
        Ok(NodeScores { min_l, min_u, max_l, max_u, hard_min, hard_max, k: kk, escaped })
    }
}

fn modality_key(f: &Formula) -> String {
    match f {
        Formula::Necessity { modality, .. } | Formula::Possibility { modality, .. } => modality.key(),
        _ => String::new(),
    }
}

fn row_streams(seeds: &[u64], n0: usize, n1: usize, offset: u64) -> Vec<RowStream> {
    seeds
        .iter()
        .flat_map(|&seed| (n0..n1).map(move |n| RowStream { seed, stream: offset + n as u64 }))
        .collect()
}
