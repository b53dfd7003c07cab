use crate::autodiff::Graph;
use crate::error::{Error, Result};
use crate::formula::{AtomRegistry, Formula};
use crate::modal::{Evaluator, OperatorConfig};
use crate::sde::rng::uniform;
use crate::sde::{derive_seed, EvalContext, SdeLibrary};

const MAX_HALVINGS: usize = 12;

fn mining_seed(seed: u64, i: usize) -> u64 {
    derive_seed(seed, i as u64, 0xD5)
}

/// A world found by [`mine_contradictions`]; evaluating there with `seed`
/// reproduces `score`.
#[derive(Clone, Debug, PartialEq)]
pub struct MinedWorld {
    pub world: Vec<f64>,
    pub score: f64,
    pub seed: u64,
}

/// `max(0, L - U)^2` of `f` at `w`.
pub fn contradiction(ev: &Evaluator, f: &Formula, w: &[f64], seed: u64) -> Result<f64> {
    Ok(ev.eval(f, w, seed)?.contradiction())
}

// Scores and world gradients for a pool.
fn scores(ev: &Evaluator, f: &Formula, pool: &[Vec<f64>], seeds: &[u64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let d = pool[0].len();
    let mut g = Graph::new();
    let ge = ev.bind(&mut g, false);
    let w = g.variable(pool.len(), d, pool.iter().flatten().copied().collect());
    let iv = ge.eval(&mut g, f, w, seeds)?;
    let diff = g.sub(iv.lower, iv.upper);
    let zero = g.scalar(0.0);
    let pos = g.maximum(diff, zero);
    let c = g.square(pos);
    let total = g.sum(c);
    let vals = g.value(c).to_vec();
    g.backward(total)?;
    let grad = g.grad(w).map(|x| x.to_vec()).unwrap_or_else(|| vec![0.0; pool.len() * d]);
    Ok((vals, grad))
}

fn project(w: &mut [f64], region: &[(f64, f64)]) {
    for (x, (lo, hi)) in w.iter_mut().zip(region) {
        *x = x.clamp(*lo, *hi);
    }
}

/// Searches `region` for worlds where the lower bound of `f` exceeds its
/// upper bound. Starts from `pool` uniform samples, runs projected gradient
/// ascent on `c(w) = max(0, L - U)^2` with backtracking, and returns the
/// worlds with `c > 0`, highest score first.
#[allow(clippy::too_many_arguments)]
pub fn mine_contradictions(
    f: &Formula,
    region: &[(f64, f64)],
    library: &SdeLibrary,
    atoms: &AtomRegistry,
    cfg: &OperatorConfig,
    ctx: &EvalContext,
    pool: usize,
    ascent_steps: usize,
    step_size: f64,
    seed: u64,
) -> Result<Vec<MinedWorld>> {
    let d = region.len();
    if d == 0 || region.iter().any(|(a, b)| !(a <= b) || !a.is_finite() || !b.is_finite()) {
        return Err(Error::Contract("mining region must be a bounded box".into()));
    }
    if pool == 0 {
        return Ok(Vec::new());
    }
    let ev = Evaluator::new(library, atoms, cfg, ctx);
    ev.check(f, d)?;
    let u = uniform(seed, 0, pool * d, 0.0, 1.0);
    let mut worlds: Vec<Vec<f64>> = u
        .chunks(d)
        .map(|p| p.iter().zip(region).map(|(x, (lo, hi))| lo + x * (hi - lo)).collect())
        .collect();
    let seeds: Vec<u64> = (0..pool).map(|i| mining_seed(seed, i)).collect();
    let (mut c, mut grad) = scores(&ev, f, &worlds, &seeds)?;
    for _ in 0..ascent_steps {
        let mut step = vec![step_size; pool];
        let mut settled = vec![false; pool];
        for (i, s) in settled.iter_mut().enumerate() {
            *s = grad[i * d..(i + 1) * d].iter().all(|x| *x == 0.0);
        }
        let mut candidate = worlds.clone();
        for _ in 0..MAX_HALVINGS {
            if settled.iter().all(|s| *s) {
                break;
            }
            for i in (0..pool).filter(|i| !settled[*i]) {
                for j in 0..d {
                    candidate[i][j] = worlds[i][j] + step[i] * grad[i * d + j];
                }
                project(&mut candidate[i], region);
            }
            let (c_new, g_new) = scores(&ev, f, &candidate, &seeds)?;
            for i in 0..pool {
                if settled[i] {
                    continue;
                }
                if c_new[i] >= c[i] {
                    worlds[i] = candidate[i].clone();
                    c[i] = c_new[i];
                    grad[i * d..(i + 1) * d].copy_from_slice(&g_new[i * d..(i + 1) * d]);
                    settled[i] = true;
                } else {
                    step[i] *= 0.5;
                    candidate[i] = worlds[i].clone();
                }
            }
        }
    }
    let mut out: Vec<MinedWorld> = worlds
        .into_iter()
        .zip(c)
        .zip(seeds)
        .filter(|((_, c), _)| *c > 0.0)
        .map(|((world, score), seed)| MinedWorld { world, score, seed })
        .collect();
    out.sort_by(|a, b| b.score.total_cmp(&a.score));
    Ok(out)
}
