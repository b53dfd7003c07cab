use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::formula::Formula;

/// Analytic robustness function of a world state. Positive means satisfied.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AtomFn {
    Constant {
        value: f64,
    },
    /// `w . z + bias`
    Linear {
        weights: Vec<f64>,
        bias: f64,
    },
    /// `tanh(w . z + bias)`
    Tanh {
        weights: Vec<f64>,
        bias: f64,
    },
    /// `||z[coords] - center|| - radius`: positive outside the ball.
    OutsideBall {
        center: Vec<f64>,
        radius: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        coords: Option<Vec<usize>>,
    },
    /// `radius - ||z[coords] - center||`: positive inside the ball.
    InsideBall {
        center: Vec<f64>,
        radius: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        coords: Option<Vec<usize>>,
    },
}

impl AtomFn {
    pub fn constant(value: f64) -> Self {
        AtomFn::Constant { value }
    }

    pub fn linear(weights: Vec<f64>, bias: f64) -> Self {
        AtomFn::Linear { weights, bias }
    }

    pub fn tanh(weights: Vec<f64>, bias: f64) -> Self {
        AtomFn::Tanh { weights, bias }
    }

    pub fn outside_ball(center: Vec<f64>, radius: f64) -> Self {
        AtomFn::OutsideBall { center, radius, coords: None }
    }

    pub fn inside_ball(center: Vec<f64>, radius: f64) -> Self {
        AtomFn::InsideBall { center, radius, coords: None }
    }

    /// Restricts a ball atom to a subset of state coordinates.
    pub fn on_coords(self, idx: Vec<usize>) -> Self {
        match self {
            AtomFn::OutsideBall { center, radius, .. } => {
                AtomFn::OutsideBall { center, radius, coords: Some(idx) }
            }
            AtomFn::InsideBall { center, radius, .. } => {
                AtomFn::InsideBall { center, radius, coords: Some(idx) }
            }
            other => other,
        }
    }

    fn ball_coords(center: &[f64], coords: &Option<Vec<usize>>) -> Vec<usize> {
        coords.clone().unwrap_or_else(|| (0..center.len()).collect())
    }

    /// Checks that the atom can be evaluated on `dim`-dimensional states.
    pub fn check_dim(&self, dim: usize) -> Result<()> {
        let ok = match self {
            AtomFn::Constant { value } => value.is_finite(),
            AtomFn::Linear { weights, bias } | AtomFn::Tanh { weights, bias } => {
                weights.len() == dim && bias.is_finite()
            }
            AtomFn::OutsideBall { center, radius, coords } | AtomFn::InsideBall { center, radius, coords } => {
                let idx = Self::ball_coords(center, coords);
                idx.len() == center.len() && idx.iter().all(|&i| i < dim) && radius.is_finite()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Dimension(format!("atom {self:?} is incompatible with state dimension {dim}")))
        }
    }

    pub fn eval_point(&self, z: &[f64]) -> f64 {
        let dot = |w: &[f64]| w.iter().zip(z).map(|(a, b)| a * b).sum::<f64>();
        let dist = |center: &[f64], coords: &Option<Vec<usize>>| {
            Self::ball_coords(center, coords)
                .iter()
                .zip(center)
                .map(|(&i, c)| (z[i] - c).powi(2))
                .sum::<f64>()
                .sqrt()
        };
        match self {
            AtomFn::Constant { value } => *value,
            AtomFn::Linear { weights, bias } => dot(weights) + bias,
            AtomFn::Tanh { weights, bias } => (dot(weights) + bias).tanh(),
            AtomFn::OutsideBall { center, radius, coords } => dist(center, coords) - radius,
            AtomFn::InsideBall { center, radius, coords } => radius - dist(center, coords),
        }
    }

    /// Evaluates on a batch of states (`rows x dim`), returning `rows x 1`.
    pub fn eval_graph(&self, g: &mut Graph, z: Var) -> Var {
        let (rows, _) = g.shape(z);
        let ball = |g: &mut Graph, center: &[f64], coords: &Option<Vec<usize>>| {
            let idx = Self::ball_coords(center, coords);
            let sub = g.columns(z, &idx);
            let c = g.constant(1, center.len(), center.to_vec());
            let diff = g.sub(sub, c);
            g.norm_rows(diff)
        };
        match self {
            AtomFn::Constant { value } => g.constant(rows, 1, vec![*value; rows]),
            AtomFn::Linear { weights, bias } | AtomFn::Tanh { weights, bias } => {
                let w = g.constant(weights.len(), 1, weights.clone());
                let y = g.matmul(z, w);
                let y = g.add_scalar(y, *bias);
                if matches!(self, AtomFn::Tanh { .. }) {
                    g.tanh(y)
                } else {
                    y
                }
            }
            AtomFn::OutsideBall { center, radius, coords } => {
                let d = ball(g, center, coords);
                g.add_scalar(d, -radius)
            }
            AtomFn::InsideBall { center, radius, coords } => {
                let d = ball(g, center, coords);
                let d = g.neg(d);
                g.add_scalar(d, *radius)
            }
        }
    }
}

/// Registered atom. `upper` defaults to `lower`, giving a point interval.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AtomDef {
    pub lower: AtomFn,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upper: Option<AtomFn>,
    /// Declared Lipschitz constant, informational.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lipschitz: Option<f64>,
}

impl AtomDef {
    pub fn exact(f: AtomFn) -> Self {
        Self { lower: f, upper: None, lipschitz: None }
    }

    pub fn interval(lower: AtomFn, upper: AtomFn) -> Self {
        Self { lower, upper: Some(upper), lipschitz: None }
    }

    pub fn upper(&self) -> &AtomFn {
        self.upper.as_ref().unwrap_or(&self.lower)
    }

    pub fn is_exact(&self) -> bool {
        self.upper.is_none()
    }
}

impl From<AtomFn> for AtomDef {
    fn from(f: AtomFn) -> Self {
        AtomDef::exact(f)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AtomRegistry {
    atoms: BTreeMap<String, AtomDef>,
}

impl AtomRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, def: impl Into<AtomDef>) {
        self.atoms.insert(name.into(), def.into());
    }

    pub fn with(mut self, name: impl Into<String>, def: impl Into<AtomDef>) -> Self {
        self.insert(name, def);
        self
    }

    pub fn get(&self, name: &str) -> Result<&AtomDef> {
        self.atoms.get(name).ok_or_else(|| Error::UnknownAtom(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &AtomDef)> {
        self.atoms.iter()
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    /// Every atom of `f` is registered and accepts `dim`-dimensional states.
    pub fn check_formula(&self, f: &Formula, dim: usize) -> Result<()> {
        for name in f.atoms() {
            let def = self.get(&name)?;
            def.lower.check_dim(dim)?;
            def.upper().check_dim(dim)?;
        }
        Ok(())
    }
}
