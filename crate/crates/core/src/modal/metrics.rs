use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::sde::{resolve_init, simulate_with, EvalContext, SdeSpec, SimOptions};

/// Number of random directions of the sliced distance.
pub const SLICED_PROJECTIONS: usize = 64;
const PROJECTION_SEED: u64 = 0x51_1CED;

/// Logistic normalization `1 / (1 + exp(-L / beta))` onto `(0, 1)`.
pub fn normalize(l: f64, beta_norm: f64) -> f64 {
    let x = l / beta_norm;
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub std_err: f64,
}

/// Mean over paths of `sup_s exp(-|w' - z_s|^2 / (2 sigma_b^2))`, paths
/// started at `w`.
pub fn accessibility(
    spec: &SdeSpec,
    w: &[f64],
    w_prime: &[f64],
    sigma_b: f64,
    n_paths: usize,
    k_steps: usize,
    seed: u64,
) -> Result<Estimate> {
    if !(sigma_b > 0.0) {
        return Err(Error::Contract("accessibility bandwidth must be positive".into()));
    }
    if w_prime.len() != spec.dim {
        return Err(Error::Dimension("target world has the wrong dimension".into()));
    }
    let bundle = simulate_with(spec, w, n_paths, k_steps, seed, &SimOptions::default())?;
    let vals: Vec<f64> = (0..n_paths)
        .map(|n| {
            (0..bundle.k())
                .map(|k| {
                    let d2: f64 = bundle.state(n, k).iter().zip(w_prime).map(|(a, b)| (a - b).powi(2)).sum();
                    (-d2 / (2.0 * sigma_b * sigma_b)).exp()
                })
                .fold(0.0, f64::max)
        })
        .collect();
    Ok(mean_and_se(&vals))
}

pub(crate) fn mean_and_se(vals: &[f64]) -> Estimate {
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let var = if vals.len() > 1 { vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    Estimate { mean, std_err: (var / n).sqrt() }
}

/// 1-Wasserstein distance between equal-size samples on the line.
pub fn wasserstein_1d(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "samples must have equal size");
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
}

// E|theta_1| for theta uniform on the unit sphere in R^d.
fn sphere_abs_moment(d: usize) -> f64 {
    fn ln_gamma_half(k: usize) -> f64 {
        // ln Gamma(k / 2) by the recurrence from Gamma(1/2) or Gamma(1).
        let (mut x, mut acc) = if k % 2 == 0 { (1.0, 0.0) } else { (0.5, 0.5 * std::f64::consts::PI.ln()) };
        while x < k as f64 / 2.0 {
            acc += x.ln();
            x += 1.0;
        }
        acc
    }
    (ln_gamma_half(d) - ln_gamma_half(d + 1)).exp() / std::f64::consts::PI.sqrt()
}

// Projection directions: evenly spaced angles in the plane, otherwise
// blocks of random orthonormal frames.
fn directions(d: usize) -> Vec<Vec<f64>> {
    if d == 2 {
        return (0..SLICED_PROJECTIONS)
            .map(|j| {
                let a = std::f64::consts::PI * (j as f64 + 0.5) / SLICED_PROJECTIONS as f64;
                vec![a.cos(), a.sin()]
            })
            .collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(PROJECTION_SEED);
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(SLICED_PROJECTIONS);
    while out.len() < SLICED_PROJECTIONS {
        let frame_start = out.len();
        for _ in 0..d.min(SLICED_PROJECTIONS - frame_start) {
            let mut v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
            for u in &out[frame_start..] {
                let dot: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(u).for_each(|(a, b)| *a -= dot * b);
            }
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.iter_mut().for_each(|x| *x /= norm);
            out.push(v);
        }
    }
    out
}

/// Sliced 1-Wasserstein distance: the mean of projected 1-D distances over
/// fixed directions, divided by `E|theta . e|` so that a rigid translation by
/// `v` scores close to `|v|`. Exact for `d == 1`.
pub fn sliced_wasserstein(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let d = a.first().map_or(0, Vec::len);
    if d == 1 {
        let a: Vec<f64> = a.iter().map(|v| v[0]).collect();
        let b: Vec<f64> = b.iter().map(|v| v[0]).collect();
        return wasserstein_1d(&a, &b);
    }
    let dirs = directions(d);
    let proj = |s: &[Vec<f64>], dir: &[f64]| -> Vec<f64> {
        s.iter().map(|p| p.iter().zip(dir).map(|(x, y)| x * y).sum()).collect()
    };
    let total: f64 = dirs.iter().map(|dir| wasserstein_1d(&proj(a, dir), &proj(b, dir))).sum();
    total / dirs.len() as f64 / sphere_abs_moment(d)
}

/// Distance between the time-`s` state clouds of two SDEs started from their
/// own initial states at `w`.
#[allow(clippy::too_many_arguments)]
pub fn wasserstein_gap(
    spec_a: &SdeSpec,
    spec_b: &SdeSpec,
    w: &[f64],
    ctx: &EvalContext,
    s: f64,
    n_paths: usize,
    k_steps: usize,
    seed: u64,
) -> Result<f64> {
    if spec_a.dim != spec_b.dim {
        return Err(Error::Dimension("Wasserstein gap needs SDEs of equal dimension".into()));
    }
    if !(s > 0.0) {
        return Err(Error::Contract("Wasserstein gap needs a positive time".into()));
    }
    let cloud = |spec: &SdeSpec| -> Result<Vec<Vec<f64>>> {
        let init = resolve_init(spec, w, ctx)?;
        let opts = SimOptions { horizon: Some(s), obs: init.obs, ..Default::default() };
        Ok(simulate_with(spec, &init.state, n_paths, k_steps, seed, &opts)?.terminals())
    };
    Ok(sliced_wasserstein(&cloud(spec_a)?, &cloud(spec_b)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_values() {
        assert_eq!(normalize(0.0, 0.7), 0.5);
        assert!((normalize(0.7, 0.7) - 1.0 / (1.0 + (-1.0f64).exp())).abs() < 1e-15);
        assert!(normalize(-800.0, 1.0) >= 0.0 && normalize(800.0, 1.0) <= 1.0);
    }

    #[test]
    fn sphere_moments() {
        assert!((sphere_abs_moment(2) - 2.0 / std::f64::consts::PI).abs() < 1e-14);
        assert!((sphere_abs_moment(3) - 0.5).abs() < 1e-14);
    }

    #[test]
    fn translations_score_their_length() {
        for d in [2, 3, 4] {
            let a: Vec<Vec<f64>> = (0..8).map(|i| (0..d).map(|j| (i * j) as f64 * 0.1).collect()).collect();
            for axis in 0..d {
                let b: Vec<Vec<f64>> = a.iter().map(|p| { let mut q = p.clone(); q[axis] += 2.0; q }).collect();
                let w = sliced_wasserstein(&a, &b);
                assert!((w - 2.0).abs() < 0.2, "d={d} axis={axis} w={w}");
            }
        }
    }

    #[test]
    fn one_dimensional_distance() {
        assert_eq!(wasserstein_1d(&[0.0, 1.0], &[1.0, 2.0]), 1.0);
        assert_eq!(wasserstein_1d(&[3.0, 1.0], &[1.0, 3.0]), 0.0);
    }
}
