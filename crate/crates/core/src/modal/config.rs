use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest temperature accepted anywhere.
pub const TAU_FLOOR: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OperatorConfig {
    /// Temperature of the soft minimum over grid times.
    pub tau_s: f64,
    /// Temperature of the soft minimum over sample paths.
    pub tau_omega: f64,
    pub n_mc: usize,
    pub k_steps: usize,
    /// Atom robustness is clipped to `[-clip, clip]`.
    pub clip: f64,
    /// Scale of the logistic normalization.
    pub beta_norm: f64,
    /// Deepest modal nesting the evaluator accepts.
    pub max_depth: usize,
}

impl Default for OperatorConfig {
    fn default() -> Self {
        Self { tau_s: 0.1, tau_omega: 0.1, n_mc: 64, k_steps: 32, clip: 2.0, beta_norm: 1.0, max_depth: 2 }
    }
}

impl OperatorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau_s >= TAU_FLOOR && self.tau_omega >= TAU_FLOOR) {
            return Err(Error::Config(format!(
                "temperatures must be at least {TAU_FLOOR} (tau_s = {}, tau_omega = {})",
                self.tau_s, self.tau_omega
            )));
        }
        if self.n_mc == 0 || self.k_steps < 2 {
            return Err(Error::Config("need n_mc >= 1 and k_steps >= 2".into()));
        }
        if !(self.clip > 0.0 && self.clip.is_finite() && self.beta_norm > 0.0) {
            return Err(Error::Config("clip and beta_norm must be positive".into()));
        }
        Ok(())
    }

    pub fn with_taus(mut self, tau: f64) -> Self {
        self.tau_s = tau;
        self.tau_omega = tau;
        self
    }

    pub fn with_n_mc(mut self, n: usize) -> Self {
        self.n_mc = n;
        self
    }

    pub fn with_k_steps(mut self, k: usize) -> Self {
        self.k_steps = k;
        self
    }

    /// `tau_s * ln(k) + tau_omega * ln(n_mc)`: how far a Box lower bound
    /// may sit above the atom's value at the evaluated world.
    pub fn soundness_slack(&self, k: usize) -> f64 {
        self.tau_s * (k as f64).ln() + self.tau_omega * (self.n_mc as f64).ln()
    }
}

/// Robustness bounds `[lower, upper]` of a formula at a world.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthInterval {
    pub lower: f64,
    pub upper: f64,
}

impl TruthInterval {
    pub fn new(lower: f64, upper: f64) -> Self {
        Self { lower, upper }
    }

    pub fn point(v: f64) -> Self {
        Self { lower: v, upper: v }
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    /// Squared violation of `lower <= upper`.
    pub fn contradiction(&self) -> f64 {
        (self.lower - self.upper).max(0.0).powi(2)
    }

    pub fn is_finite(&self) -> bool {
        self.lower.is_finite() && self.upper.is_finite()
    }
}

/// Monte Carlo concentration bound for path counts.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationBound {
    /// Ratio bound: the clip satisfies `B <= C * tau_omega`.
    pub c: f64,
    pub epsilon: f64,
    pub delta: f64,
}

impl ConcentrationBound {
    pub fn new(c: f64, epsilon: f64, delta: f64) -> Result<Self> {
        if !(c > 0.0 && epsilon > 0.0 && epsilon < 1.0 && delta > 0.0 && delta < 1.0) {
            return Err(Error::Config(format!(
                "concentration bound needs C > 0 and epsilon, delta in (0, 1); got {c}, {epsilon}, {delta}"
            )));
        }
        Ok(Self { c, epsilon, delta })
    }

    /// `c(C) = 2 / ((e^C - e^-C)^2 e^(2C))`.
    pub fn c_of_c(&self) -> f64 {
        let s = self.c.exp() - (-self.c).exp();
        2.0 / (s * s * (2.0 * self.c).exp())
    }

    /// Smallest path count reaching `(epsilon, delta)` accuracy.
    pub fn required_n_mc(&self, tau_omega: f64) -> usize {
        let n = tau_omega * tau_omega * (2.0 / self.delta).ln() / (self.c_of_c() * self.epsilon * self.epsilon);
        n.ceil() as usize
    }

    /// `2 exp(-c(C) n eps^2 / tau_omega^2)`.
    pub fn tail_bound(&self, n_mc: usize, tau_omega: f64) -> f64 {
        2.0 * (-self.c_of_c() * n_mc as f64 * self.epsilon * self.epsilon / (tau_omega * tau_omega)).exp()
    }

    /// Whether the clip bound meets the ratio assumption.
    pub fn admits(&self, clip: f64, tau_omega: f64) -> bool {
        clip <= self.c * tau_omega + 1e-12
    }
}
