use rayon::prelude::*;

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::sde::rng::gaussian_increments;
use crate::sde::{BoundSde, NoisePath, SdeSpec};

/// Paths whose norm exceeds this are frozen and marked escaped.
pub const ESCAPE_NORM: f64 = 1e6;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum DivergencePolicy {
    /// Freeze the path at its last finite state and mark it escaped.
    #[default]
    Record,
    /// Fail with [`Error::Divergence`].
    Error,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SimOptions {
    pub divergence: DivergencePolicy,
    /// Overrides the spec's horizon.
    pub horizon: Option<f64>,
    /// Added to the path index to select the noise stream.
    pub stream_offset: u64,
    /// Observation fed to conditioned drifts.
    pub obs: Option<Vec<f64>>,
}

/// `n_paths x k x dim` states on a uniform grid starting at 0.
#[derive(Clone, Debug, PartialEq)]
pub struct PathBundle {
    pub dim: usize,
    pub n_paths: usize,
    pub times: Vec<f64>,
    pub states: Vec<f64>,
    pub escaped: Vec<bool>,
    pub base_seed: u64,
    pub spec_name: String,
    stream_offset: u64,
    single_stage: bool,
}

impl PathBundle {
    pub fn k(&self) -> usize {
        self.times.len()
    }

    pub fn path(&self, n: usize) -> &[f64] {
        let len = self.k() * self.dim;
        &self.states[n * len..(n + 1) * len]
    }

    pub fn state(&self, n: usize, k: usize) -> &[f64] {
        let off = (n * self.k() + k) * self.dim;
        &self.states[off..off + self.dim]
    }

    pub fn terminal(&self, n: usize) -> &[f64] {
        self.state(n, self.k() - 1)
    }

    pub fn terminals(&self) -> Vec<Vec<f64>> {
        (0..self.n_paths).map(|n| self.terminal(n).to_vec()).collect()
    }

    /// States of every path at grid index `k`.
    pub fn slice(&self, k: usize) -> Vec<Vec<f64>> {
        (0..self.n_paths).map(|n| self.state(n, k).to_vec()).collect()
    }

    pub fn escape_rate(&self) -> f64 {
        self.escaped.iter().filter(|e| **e).count() as f64 / self.n_paths as f64
    }

    /// The noise that drove path `n`. Only available for single-stage
    /// bundles; composed bundles draw from several streams.
    pub fn noise(&self, n: usize) -> Option<NoisePath> {
        if !self.single_stage || self.k() < 2 {
            return None;
        }
        let dt = self.times[1] - self.times[0];
        Some(NoisePath::generate(self.base_seed, self.stream_offset + n as u64, self.k() - 1, self.dim, dt))
    }
}

struct PathOutcome {
    states: Vec<f64>,
    escaped: bool,
    diverged_at: Option<usize>,
}

fn norm(z: &[f64]) -> f64 {
    z.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn out_of_bounds(z: &[f64]) -> bool {
    z.iter().any(|v| !v.is_finite()) || norm(z) > ESCAPE_NORM
}

#[allow(clippy::too_many_arguments)]
fn integrate_path(
    spec: &SdeSpec,
    z0: &[f64],
    obs: Option<&[f64]>,
    seed: u64,
    stream: u64,
    k_steps: usize,
    dt: f64,
    t0: f64,
) -> PathOutcome {
    let d = spec.dim;
    let mut states = Vec::with_capacity(k_steps * d);
    states.extend_from_slice(z0);
    let deterministic = spec.is_deterministic();
    let dw = if deterministic {
        Vec::new()
    } else {
        gaussian_increments(seed, stream, (k_steps - 1) * d, dt.sqrt())
    };
    let mut z = z0.to_vec();
    let mut escaped = out_of_bounds(z0);
    let mut diverged_at = escaped.then_some(0);
    for k in 0..k_steps - 1 {
        if !escaped {
            let s = t0 + k as f64 * dt;
            let f = spec.drift_point(&z, obs, s);
            let mut next: Vec<f64> = z.iter().zip(&f).map(|(zi, fi)| zi + fi * dt).collect();
            if !deterministic {
                let sig = spec.sigma_point(&z, obs, s);
                for j in 0..d {
                    next[j] += dw[k * d + j] * sig[j];
                }
            }
            if out_of_bounds(&next) {
                escaped = true;
                diverged_at = Some(k + 1);
            } else {
                z = next;
            }
        }
        states.extend_from_slice(&z);
    }
    PathOutcome { states, escaped, diverged_at }
}

fn grid(horizon: f64, k_steps: usize, t0: f64) -> (Vec<f64>, f64) {
    let dt = horizon / (k_steps - 1) as f64;
    ((0..k_steps).map(|k| t0 + k as f64 * dt).collect(), dt)
}

fn check_args(spec: &SdeSpec, w0: &[f64], n_paths: usize, k_steps: usize) -> Result<()> {
    spec.validate()?;
    if w0.len() != spec.dim {
        return Err(Error::Dimension(format!(
            "initial state has {} coordinates, SDE `{}` expects {}",
            w0.len(),
            spec.name,
            spec.dim
        )));
    }
    if n_paths == 0 || k_steps < 2 {
        return Err(Error::Contract(format!("need n_paths >= 1 and k_steps >= 2, got {n_paths}, {k_steps}")));
    }
    Ok(())
}

fn divergence_error(spec: &SdeSpec, outcomes: &[PathOutcome]) -> Option<Error> {
    outcomes.iter().enumerate().find_map(|(n, o)| {
        o.diverged_at.map(|step| Error::Divergence {
            step,
            detail: format!("path {n} of SDE `{}` left the finite region", spec.name),
        })
    })
}

/// Euler-Maruyama on the uniform grid `s_k = k * S / (k_steps - 1)`.
pub fn simulate(spec: &SdeSpec, w0: &[f64], n_paths: usize, k_steps: usize, base_seed: u64) -> Result<PathBundle> {
    simulate_with(spec, w0, n_paths, k_steps, base_seed, &SimOptions::default())
}

pub fn simulate_with(
    spec: &SdeSpec,
    w0: &[f64],
    n_paths: usize,
    k_steps: usize,
    base_seed: u64,
    opts: &SimOptions,
) -> Result<PathBundle> {
    check_args(spec, w0, n_paths, k_steps)?;
    let horizon = opts.horizon.unwrap_or(spec.horizon);
    let (times, dt) = grid(horizon, k_steps, 0.0);
    let obs = opts.obs.as_deref();
    let outcomes: Vec<PathOutcome> = (0..n_paths)
        .into_par_iter()
        .map(|n| integrate_path(spec, w0, obs, base_seed, opts.stream_offset + n as u64, k_steps, dt, 0.0))
        .collect();
    if opts.divergence == DivergencePolicy::Error {
        if let Some(e) = divergence_error(spec, &outcomes) {
            return Err(e);
        }
    }
    let mut states = Vec::with_capacity(n_paths * k_steps * spec.dim);
    let mut escaped = Vec::with_capacity(n_paths);
    for o in outcomes {
        states.extend(o.states);
        escaped.push(o.escaped);
    }
    Ok(PathBundle {
        dim: spec.dim,
        n_paths,
        times,
        states,
        escaped,
        base_seed,
        spec_name: spec.name.clone(),
        stream_offset: opts.stream_offset,
        single_stage: true,
    })
}

/// Chains the SDEs: stage `j` starts every path from its stage `j - 1`
/// terminal state, draws noise from streams `j * n_paths + n`, and runs over
/// its own horizon with `k_steps` grid points. Junction points are not
/// duplicated and times continue from the previous stage.
pub fn compose(specs: &[&SdeSpec], w0: &[f64], n_paths: usize, k_steps: usize, base_seed: u64) -> Result<PathBundle> {
    let Some(first) = specs.first() else {
        return Err(Error::Contract("compose needs at least one SDE".into()));
    };
    for s in specs {
        check_args(s, w0, n_paths, k_steps)?;
    }
    let d = first.dim;
    let mut paths: Vec<Vec<f64>> = vec![w0.to_vec(); n_paths];
    let mut escaped = vec![false; n_paths];
    let mut times = vec![0.0];
    let mut t0 = 0.0;
    for (j, spec) in specs.iter().enumerate() {
        let (stage_times, dt) = grid(spec.horizon, k_steps, t0);
        let offset = (j * n_paths) as u64;
        let outcomes: Vec<PathOutcome> = paths
            .par_iter()
            .enumerate()
            .map(|(n, p)| {
                let start = &p[p.len() - d..];
                if escaped[n] {
                    PathOutcome { states: start.repeat(k_steps), escaped: true, diverged_at: None }
                } else {
                    integrate_path(spec, start, None, base_seed, offset + n as u64, k_steps, dt, t0)
                }
            })
            .collect();
        for (n, o) in outcomes.into_iter().enumerate() {
            paths[n].extend_from_slice(&o.states[d..]);
            escaped[n] |= o.escaped;
        }
        times.extend_from_slice(&stage_times[1..]);
        t0 += spec.horizon;
    }
    Ok(PathBundle {
        dim: d,
        n_paths,
        times,
        states: paths.concat(),
        escaped,
        base_seed,
        spec_name: specs.iter().map(|s| s.name.as_str()).collect::<Vec<_>>().join(";"),
        stream_offset: 0,
        single_stage: specs.len() == 1,
    })
}

/// Graph-built paths: one `rows x d` node per grid point.
#[derive(Clone, Debug)]
pub struct GraphPaths {
    pub times: Vec<f64>,
    pub states: Vec<Var>,
    pub escaped: Vec<bool>,
}

/// Noise source of one graph row.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RowStream {
    pub seed: u64,
    pub stream: u64,
}

/// Unrolled Euler-Maruyama on the graph. Row `r` of `z0` is driven by the
/// noise stream `rows[r]`, identical to what [`simulate`] draws for the same
/// `(seed, stream)`.
#[allow(clippy::too_many_arguments)]
pub fn simulate_graph(
    g: &mut Graph,
    spec: &SdeSpec,
    bound: &BoundSde,
    z0: Var,
    obs: Option<Var>,
    rows: &[RowStream],
    k_steps: usize,
    horizon: f64,
    t0: f64,
    policy: DivergencePolicy,
) -> Result<GraphPaths> {
    let (r, d) = g.shape(z0);
    if d != spec.dim || rows.len() != r {
        return Err(Error::Dimension(format!(
            "graph simulation of `{}`: state block {r}x{d}, {} noise rows",
            spec.name,
            rows.len()
        )));
    }
    if k_steps < 2 {
        return Err(Error::Contract("k_steps must be at least 2".into()));
    }
    let (times, dt) = grid(horizon, k_steps, t0);
    let deterministic = spec.is_deterministic();
    let noise: Vec<Vec<f64>> = if deterministic {
        Vec::new()
    } else {
        rows.par_iter()
            .map(|rs| gaussian_increments(rs.seed, rs.stream, (k_steps - 1) * d, dt.sqrt()))
            .collect()
    };
    let mut escaped: Vec<bool> = g.value(z0).chunks(d).map(out_of_bounds).collect();
    let mut states = Vec::with_capacity(k_steps);
    states.push(z0);
    let mut z = z0;
    for k in 0..k_steps - 1 {
        let s = times[k];
        let f = spec.drift_graph(g, bound, z, obs, s)?;
        let fd = g.scale(f, dt);
        let mut next = g.add(z, fd);
        if !deterministic {
            let sig = spec.sigma_graph(g, bound, z, obs, s)?;
            let mut block = Vec::with_capacity(r * d);
            for row in &noise {
                block.extend_from_slice(&row[k * d..(k + 1) * d]);
            }
            let dw = g.constant(r, d, block);
            let inc = g.mul(dw, sig);
            next = g.add(next, inc);
        }
        let mut frozen = escaped.clone();
        let mut fresh = false;
        for (i, row) in g.value(next).chunks(d).enumerate() {
            if !escaped[i] && out_of_bounds(row) {
                if policy == DivergencePolicy::Error {
                    return Err(Error::Divergence {
                        step: k + 1,
                        detail: format!("row {i} of SDE `{}` left the finite region", spec.name),
                    });
                }
                frozen[i] = true;
                fresh = true;
            }
        }
        if frozen.iter().any(|f| *f) {
            next = g.select_rows(frozen.clone(), z, next);
        }
        if fresh {
            escaped = frozen;
        }
        states.push(next);
        z = next;
    }
    Ok(GraphPaths { times, states, escaped })
}

/// Two-sample Kolmogorov-Smirnov statistic.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (mut i, mut j, mut best) = (0usize, 0usize, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        let diff = (i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs();
        best = best.max(diff);
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sde::BaseDrift;

    #[test]
    fn frozen_flow_stays_put() {
        let spec = SdeSpec::new("frozen", 2, 1.0);
        let b = simulate(&spec, &[0.3, -1.0], 3, 5, 9).unwrap();
        assert!(b.states.chunks(2).all(|z| z == [0.3, -1.0]));
        assert_eq!(b.times[0], 0.0);
        assert_eq!(*b.times.last().unwrap(), 1.0);
    }

    #[test]
    fn first_state_is_initial_state() {
        let spec = SdeSpec::new("bm", 1, 1.0).with_sigma(1.0);
        let b = simulate(&spec, &[0.5], 16, 8, 1).unwrap();
        assert!((0..16).all(|n| b.state(n, 0) == [0.5]));
        let noise = b.noise(3).unwrap();
        let expected = 0.5 + noise.increments.iter().sum::<f64>();
        assert!((b.terminal(3)[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn bad_arguments() {
        let spec = SdeSpec::new("x", 1, 1.0);
        assert!(matches!(simulate(&spec, &[0.0, 1.0], 1, 4, 0), Err(Error::Dimension(_))));
        assert!(matches!(simulate(&spec, &[0.0], 0, 4, 0), Err(Error::Contract(_))));
        assert!(matches!(simulate(&spec, &[0.0], 1, 1, 0), Err(Error::Contract(_))));
    }

    #[test]
    fn divergence_is_recorded_or_raised() {
        let spec = SdeSpec::new("blowup", 1, 1.0).with_base(BaseDrift::Constant { value: vec![1e9] });
        let b = simulate(&spec, &[0.0], 2, 4, 0).unwrap();
        assert_eq!(b.escaped, vec![true, true]);
        assert!(b.states.iter().all(|v| v.is_finite()));
        let opts = SimOptions { divergence: DivergencePolicy::Error, ..Default::default() };
        match simulate_with(&spec, &[0.0], 2, 4, 0, &opts) {
            Err(Error::Divergence { step, .. }) => assert_eq!(step, 1),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn graph_matches_plain_integrator() {
        let spec = SdeSpec::new("ou", 2, 1.0)
            .with_base(BaseDrift::Confinement { swirl: 1.0, pressure: -0.5 })
            .with_sigma(0.3);
        let plain = simulate(&spec, &[0.2, 0.4], 4, 6, 77).unwrap();
        let mut g = Graph::new();
        let bound = spec.bind(&mut g, false);
        let z0 = g.constant(4, 2, [0.2, 0.4].repeat(4));
        let rows: Vec<RowStream> = (0..4).map(|n| RowStream { seed: 77, stream: n }).collect();
        let gp = simulate_graph(&mut g, &spec, &bound, z0, None, &rows, 6, 1.0, 0.0, DivergencePolicy::Record).unwrap();
        for k in 0..6 {
            for n in 0..4 {
                for j in 0..2 {
                    let a = g.value(gp.states[k])[n * 2 + j];
                    assert!((a - plain.state(n, k)[j]).abs() < 1e-13);
                }
            }
        }
    }

    #[test]
    fn ks_of_identical_samples_is_zero() {
        let a = [0.1, 0.5, 0.3];
        assert_eq!(ks_statistic(&a, &a), 0.0);
        assert_eq!(ks_statistic(&[0.0, 0.1], &[1.0, 2.0]), 1.0);
    }
}
