use crate::formula::AtomFn;
use crate::modal::{softmax, softmin, PlotRow};
use crate::sde::rng::uniform;
use crate::sde::PathBundle;

/// Per grid time: soft minimum and soft maximum over paths of the atom.
pub fn quantifier_profile(bundle: &PathBundle, atom: &AtomFn, clip: f64, tau_omega: f64) -> Vec<PlotRow> {
    (0..bundle.k())
        .map(|k| {
            let vals: Vec<f64> =
                (0..bundle.n_paths).map(|n| atom.eval_point(bundle.state(n, k)).clamp(-clip, clip)).collect();
            PlotRow { time: bundle.times[k], l_box: softmin(&vals, tau_omega), u_diamond: softmax(&vals, tau_omega) }
        })
        .collect()
}

/// Mean over grid times of the path-quantifier spread. Zero whenever all
/// paths coincide.
pub fn quantifier_gap(profile: &[PlotRow]) -> f64 {
    profile.iter().map(PlotRow::gap).sum::<f64>() / profile.len() as f64
}

/// Box lower and Diamond upper bound of a single atom read off a bundle,
/// using every `stride`-th grid point as the time grid.
pub fn bundle_box_diamond(bundle: &PathBundle, atom: &AtomFn, stride: usize, tau_s: f64, tau_omega: f64, clip: f64) -> (f64, f64) {
    let mut boxes = Vec::with_capacity(bundle.n_paths);
    let mut diamonds = Vec::with_capacity(bundle.n_paths);
    for n in 0..bundle.n_paths {
        let vals: Vec<f64> =
            (0..bundle.k()).step_by(stride.max(1)).map(|k| atom.eval_point(bundle.state(n, k)).clamp(-clip, clip)).collect();
        boxes.push(softmin(&vals, tau_s));
        diamonds.push(softmax(&vals, tau_s));
    }
    (softmin(&boxes, tau_omega), softmax(&diamonds, tau_omega))
}

/// Fraction of paths on which `inside` turns negative at some grid time.
pub fn exit_fraction(bundles: &[PathBundle], inside: impl Fn(&[f64]) -> bool) -> f64 {
    let mut total = 0usize;
    let mut out = 0usize;
    for b in bundles {
        for n in 0..b.n_paths {
            total += 1;
            if b.escaped[n] || (0..b.k()).any(|k| !inside(b.state(n, k))) {
                out += 1;
            }
        }
    }
    out as f64 / total.max(1) as f64
}

/// Uniform points in the planar annulus `r_in <= r <= r_out`.
pub fn annulus(seed: u64, count: usize, r_in: f64, r_out: f64) -> Vec<[f64; 2]> {
    let u = uniform(seed, 0, 2 * count, 0.0, 1.0);
    u.chunks(2)
        .map(|p| {
            let r = (r_in * r_in + p[0] * (r_out * r_out - r_in * r_in)).sqrt();
            let a = std::f64::consts::TAU * p[1];
            [r * a.cos(), r * a.sin()]
        })
        .collect()
}

pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        0.0
    } else {
        cov / (vx * vy).sqrt()
    }
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Median of the trailing `window` values at every `stride`-th step.
pub fn trailing_medians(xs: &[f64], window: usize, stride: usize) -> Vec<f64> {
    (window..=xs.len()).step_by(stride.max(1)).map(|end| median(&xs[end - window..end])).collect()
}
