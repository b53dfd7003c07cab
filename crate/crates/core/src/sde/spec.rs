use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::autodiff::{BoundMlp, Graph, Mlp, Var};
use crate::error::{Error, Result};
use crate::formula::Modality;
use crate::sde::BaseDrift;

/// Where a modality's paths start relative to the evaluated world.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", content = "key", rename_all = "snake_case")]
pub enum InitPolicy {
    #[default]
    TrueState,
    /// Start at the agent's believed state.
    BelievedState(String),
    /// Start at the true state; the drift also sees the named observation.
    Conditioned(String),
}

/// Diagonal diffusion.
#[derive(Clone, Debug, PartialEq)]
pub enum Diffusion {
    Constant(Vec<f64>),
    /// `softplus(net(input))`, strictly positive.
    Learned(Mlp),
}

/// One named SDE: `dz = (base(z, s) + net(z, y, s)) ds + sigma(z, s) dW`.
#[derive(Clone, Debug, PartialEq)]
pub struct SdeSpec {
    pub name: String,
    pub dim: usize,
    pub horizon: f64,
    pub base: BaseDrift,
    pub correction: Option<Mlp>,
    pub diffusion: Diffusion,
    pub init: InitPolicy,
    /// Append the time `s` to the network inputs.
    pub time_input: bool,
    /// Width of the observation appended to the network inputs under
    /// [`InitPolicy::Conditioned`].
    pub obs_dim: usize,
}

/// Graph handles for an [`SdeSpec`]'s networks.
#[derive(Clone, Debug)]
pub struct BoundSde {
    pub correction: Option<BoundMlp>,
    pub diffusion: Option<BoundMlp>,
}

impl SdeSpec {
    pub fn new(name: impl Into<String>, dim: usize, horizon: f64) -> Self {
        Self {
            name: name.into(),
            dim,
            horizon,
            base: BaseDrift::Zero,
            correction: None,
            diffusion: Diffusion::Constant(vec![0.0; dim]),
            init: InitPolicy::TrueState,
            time_input: false,
            obs_dim: 0,
        }
    }

    pub fn with_base(mut self, base: BaseDrift) -> Self {
        self.base = base;
        self
    }

    pub fn with_correction(mut self, net: Mlp) -> Self {
        self.correction = Some(net);
        self
    }

    pub fn with_sigma(mut self, sigma: f64) -> Self {
        self.diffusion = Diffusion::Constant(vec![sigma; self.dim]);
        self
    }

    pub fn with_diffusion(mut self, diffusion: Diffusion) -> Self {
        self.diffusion = diffusion;
        self
    }

    pub fn with_init(mut self, init: InitPolicy) -> Self {
        self.init = init;
        self
    }

    pub fn with_time_input(mut self, flag: bool) -> Self {
        self.time_input = flag;
        self
    }

    pub fn with_obs_dim(mut self, n: usize) -> Self {
        self.obs_dim = n;
        self
    }

    pub fn with_horizon(mut self, horizon: f64) -> Self {
        self.horizon = horizon;
        self
    }

    /// Width of the network input `[z, y?, s?]`.
    pub fn net_input_width(&self) -> usize {
        self.dim + self.obs_dim + usize::from(self.time_input)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Dimension(format!("SDE `{}` has zero state dimension", self.name)));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::Contract(format!("SDE `{}` needs a positive horizon", self.name)));
        }
        self.base.check_dim(self.dim)?;
        let n_in = self.net_input_width();
        let check_net = |m: &Mlp, what: &str| {
            if m.input_width() != n_in || m.output_width() != self.dim {
                return Err(Error::Dimension(format!(
                    "SDE `{}` {what} network maps {} -> {}, expected {} -> {}",
                    self.name,
                    m.input_width(),
                    m.output_width(),
                    n_in,
                    self.dim
                )));
            }
            Ok(())
        };
        if let Some(m) = &self.correction {
            check_net(m, "drift")?;
        }
        match &self.diffusion {
            Diffusion::Constant(s) => {
                if s.len() != self.dim || s.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                    return Err(Error::Dimension(format!(
                        "SDE `{}` diffusion must be {} non-negative values",
                        self.name, self.dim
                    )));
                }
            }
            Diffusion::Learned(m) => check_net(m, "diffusion")?,
        }
        if matches!(self.init, InitPolicy::Conditioned(_)) != (self.obs_dim > 0) {
            return Err(Error::Config(format!(
                "SDE `{}`: observation width must be non-zero exactly for conditioned init",
                self.name
            )));
        }
        Ok(())
    }

    /// True when the diffusion is identically zero.
    pub fn is_deterministic(&self) -> bool {
        matches!(&self.diffusion, Diffusion::Constant(s) if s.iter().all(|v| *v == 0.0))
    }

    pub fn networks(&self) -> Vec<(String, &Mlp)> {
        let mut out = Vec::new();
        if let Some(m) = &self.correction {
            out.push((format!("{}.drift", self.name), m));
        }
        if let Diffusion::Learned(m) = &self.diffusion {
            out.push((format!("{}.diffusion", self.name), m));
        }
        out
    }

    pub fn networks_mut(&mut self) -> Vec<&mut Mlp> {
        let mut out = Vec::new();
        if let Some(m) = &mut self.correction {
            out.push(m);
        }
        if let Diffusion::Learned(m) = &mut self.diffusion {
            out.push(m);
        }
        out
    }

    fn net_input(&self, z: &[f64], obs: Option<&[f64]>, s: f64) -> Vec<f64> {
        let mut x = z.to_vec();
        if self.obs_dim > 0 {
            match obs {
                Some(o) => x.extend_from_slice(o),
                None => x.extend(std::iter::repeat(0.0).take(self.obs_dim)),
            }
        }
        if self.time_input {
            x.push(s);
        }
        x
    }

    pub fn drift_point(&self, z: &[f64], obs: Option<&[f64]>, s: f64) -> Vec<f64> {
        let mut f = self.base.eval_point(z, s);
        if let Some(m) = &self.correction {
            for (fi, c) in f.iter_mut().zip(m.forward_point(&self.net_input(z, obs, s))) {
                *fi += c;
            }
        }
        f
    }

    pub fn sigma_point(&self, z: &[f64], obs: Option<&[f64]>, s: f64) -> Vec<f64> {
        match &self.diffusion {
            Diffusion::Constant(v) => v.clone(),
            Diffusion::Learned(m) => m
                .forward_point(&self.net_input(z, obs, s))
                .into_iter()
                .map(softplus)
                .collect(),
        }
    }

    pub fn bind(&self, g: &mut Graph, track: bool) -> BoundSde {
        BoundSde {
            correction: self.correction.as_ref().map(|m| m.bind(g, track)),
            diffusion: match &self.diffusion {
                Diffusion::Learned(m) => Some(m.bind(g, track)),
                Diffusion::Constant(_) => None,
            },
        }
    }

    /// Copies the gradients held by `g` into the networks' tensors.
    pub fn accumulate_grads(&mut self, g: &Graph, bound: &BoundSde) {
        if let (Some(m), Some(b)) = (&mut self.correction, &bound.correction) {
            m.accumulate_grads(g, b);
        }
        if let (Diffusion::Learned(m), Some(b)) = (&mut self.diffusion, &bound.diffusion) {
            m.accumulate_grads(g, b);
        }
    }

    fn net_input_graph(&self, g: &mut Graph, z: Var, obs: Option<Var>, s: f64) -> Var {
        let (rows, _) = g.shape(z);
        let mut parts = vec![z];
        if self.obs_dim > 0 {
            let o = match obs {
                Some(o) if g.shape(o).0 == rows => o,
                Some(o) => g.repeat_rows(o, rows),
                None => g.constant(rows, self.obs_dim, vec![0.0; rows * self.obs_dim]),
            };
            parts.push(o);
        }
        if self.time_input {
            parts.push(g.constant(rows, 1, vec![s; rows]));
        }
        if parts.len() == 1 {
            z
        } else {
            g.hcat(&parts)
        }
    }

    pub fn drift_graph(&self, g: &mut Graph, bound: &BoundSde, z: Var, obs: Option<Var>, s: f64) -> Result<Var> {
        let mut f = if self.base.is_zero() { None } else { Some(self.base.eval_graph(g, z, s)) };
        if let Some(b) = &bound.correction {
            let x = self.net_input_graph(g, z, obs, s);
            let c = b.forward(g, x)?;
            f = Some(match f {
                Some(f) => g.add(f, c),
                None => c,
            });
        }
        Ok(match f {
            Some(f) => f,
            None => {
                let (r, d) = g.shape(z);
                g.constant(r, d, vec![0.0; r * d])
            }
        })
    }

    /// `rows x d` diffusion, or `1 x d` when it is constant.
    pub fn sigma_graph(&self, g: &mut Graph, bound: &BoundSde, z: Var, obs: Option<Var>, s: f64) -> Result<Var> {
        match (&self.diffusion, &bound.diffusion) {
            (Diffusion::Learned(_), Some(b)) => {
                let x = self.net_input_graph(g, z, obs, s);
                let y = b.forward(g, x)?;
                Ok(g.softplus(y))
            }
            (Diffusion::Constant(v), _) => Ok(g.constant(1, self.dim, v.clone())),
            (Diffusion::Learned(m), None) => {
                let b = m.bind(g, false);
                let x = self.net_input_graph(g, z, obs, s);
                let y = b.forward(g, x)?;
                Ok(g.softplus(y))
            }
        }
    }
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// Per-evaluation context: believed-state offsets per agent and named
/// observation vectors.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalContext {
    #[serde(default)]
    pub belief_offsets: BTreeMap<String, Vec<f64>>,
    #[serde(default)]
    pub observations: BTreeMap<String, Vec<f64>>,
}

impl EvalContext {
    pub fn with_belief(mut self, agent: impl Into<String>, offset: Vec<f64>) -> Self {
        self.belief_offsets.insert(agent.into(), offset);
        self
    }

    pub fn with_observation(mut self, key: impl Into<String>, obs: Vec<f64>) -> Self {
        self.observations.insert(key.into(), obs);
        self
    }
}

/// Starting state and optional observation for a simulation.
#[derive(Clone, Debug, PartialEq)]
pub struct ResolvedInit {
    pub state: Vec<f64>,
    pub obs: Option<Vec<f64>>,
}

/// Applies `spec`'s init policy at the true state `x_true`.
pub fn resolve_init(spec: &SdeSpec, x_true: &[f64], ctx: &EvalContext) -> Result<ResolvedInit> {
    if x_true.len() != spec.dim {
        return Err(Error::Dimension(format!(
            "world has {} coordinates, SDE `{}` expects {}",
            x_true.len(),
            spec.name,
            spec.dim
        )));
    }
    match &spec.init {
        InitPolicy::TrueState => Ok(ResolvedInit { state: x_true.to_vec(), obs: None }),
        InitPolicy::BelievedState(agent) => {
            let off = ctx
                .belief_offsets
                .get(agent)
                .ok_or_else(|| Error::Config(format!("no believed state for agent `{agent}`")))?;
            if off.len() != spec.dim {
                return Err(Error::Dimension(format!("belief offset for `{agent}` has wrong length")));
            }
            Ok(ResolvedInit { state: x_true.iter().zip(off).map(|(x, o)| x + o).collect(), obs: None })
        }
        InitPolicy::Conditioned(key) => {
            let obs = ctx
                .observations
                .get(key)
                .ok_or_else(|| Error::Config(format!("no observation `{key}` in context")))?;
            if obs.len() != spec.obs_dim {
                return Err(Error::Dimension(format!("observation `{key}` has wrong length")));
            }
            Ok(ResolvedInit { state: x_true.to_vec(), obs: Some(obs.clone()) })
        }
    }
}

/// Named SDEs keyed by modality or action.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SdeLibrary {
    specs: BTreeMap<String, SdeSpec>,
}

impl SdeLibrary {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, modality: &Modality, spec: SdeSpec) {
        self.specs.insert(modality.key(), spec);
    }

    pub fn with(mut self, modality: Modality, spec: SdeSpec) -> Self {
        self.insert(&modality, spec);
        self
    }

    pub fn insert_action(&mut self, action: &str, spec: SdeSpec) {
        self.specs.insert(format!("action:{action}"), spec);
    }

    pub fn with_action(mut self, action: &str, spec: SdeSpec) -> Self {
        self.insert_action(action, spec);
        self
    }

    pub fn insert_key(&mut self, key: impl Into<String>, spec: SdeSpec) {
        self.specs.insert(key.into(), spec);
    }

    pub fn get(&self, modality: &Modality) -> Result<&SdeSpec> {
        self.specs.get(&modality.key()).ok_or_else(|| Error::UnknownModality(modality.key()))
    }

    pub fn get_mut(&mut self, modality: &Modality) -> Result<&mut SdeSpec> {
        self.specs.get_mut(&modality.key()).ok_or_else(|| Error::UnknownModality(modality.key()))
    }

    pub fn action(&self, name: &str) -> Result<&SdeSpec> {
        self.specs
            .get(&format!("action:{name}"))
            .ok_or_else(|| Error::UnknownModality(format!("action:{name}")))
    }

    pub fn by_key(&self, key: &str) -> Option<&SdeSpec> {
        self.specs.get(key)
    }

    pub fn by_key_mut(&mut self, key: &str) -> Option<&mut SdeSpec> {
        self.specs.get_mut(key)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &SdeSpec)> {
        self.specs.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut SdeSpec)> {
        self.specs.iter_mut()
    }

    pub fn keys(&self) -> impl Iterator<Item = &String> {
        self.specs.keys()
    }

    pub fn validate(&self) -> Result<()> {
        let mut dim = None;
        for spec in self.specs.values() {
            spec.validate()?;
            if *dim.get_or_insert(spec.dim) != spec.dim {
                return Err(Error::Dimension("SDE library mixes state dimensions".into()));
            }
        }
        Ok(())
    }

    /// All networks with stable names, for checkpoints.
    pub fn networks(&self) -> Vec<(String, &Mlp)> {
        self.specs.values().flat_map(SdeSpec::networks).collect()
    }

    pub fn zero_grad(&mut self) {
        for spec in self.specs.values_mut() {
            for m in spec.networks_mut() {
                m.zero_grad();
            }
        }
    }
}
