use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};

fn default_scale() -> f64 {
    1.0
}

/// Fixed analytic drift term. All variants have a batched graph form and a
/// single-point form that agree to rounding.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BaseDrift {
    #[default]
    Zero,
    Constant {
        value: Vec<f64>,
    },
    /// Lorenz-63 in affine coordinates `u = (x - shift) / scale`.
    Lorenz {
        sigma: f64,
        rho: f64,
        beta: f64,
        #[serde(default = "default_scale")]
        scale: f64,
        #[serde(default)]
        shift: Vec<f64>,
    },
    /// Planar swirl plus radial push on the first two coordinates:
    /// `swirl * (-y, x) + pressure * (x, y)`.
    Confinement {
        swirl: f64,
        pressure: f64,
    },
    /// `-gain * r_hat` on the first two coordinates where `r > threshold`.
    RadialRestoring {
        gain: f64,
        threshold: f64,
    },
    /// Point mass `(px, py, vx, vy)` relaxing toward a cruise velocity.
    Kinematic {
        damping: f64,
        cruise: Vec<f64>,
    },
    /// Gaussian repulsive bump on the velocity of a `(px, py, vx, vy)` state.
    Repulsor {
        center: Vec<f64>,
        length: f64,
        strength: f64,
    },
    Sum {
        terms: Vec<BaseDrift>,
    },
    /// `before` for `s < at`, `after` from then on.
    TimeSwitch {
        at: f64,
        before: Box<BaseDrift>,
        after: Box<BaseDrift>,
    },
}

impl BaseDrift {
    pub fn lorenz63() -> Self {
        BaseDrift::Lorenz { sigma: 10.0, rho: 28.0, beta: 8.0 / 3.0, scale: 1.0, shift: vec![] }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            BaseDrift::Zero => true,
            BaseDrift::Sum { terms } => terms.iter().all(BaseDrift::is_zero),
            _ => false,
        }
    }

    pub fn check_dim(&self, d: usize) -> Result<()> {
        let ok = match self {
            BaseDrift::Zero => true,
            BaseDrift::Constant { value } => value.len() == d,
            BaseDrift::Lorenz { shift, scale, .. } => {
                d == 3 && (shift.is_empty() || shift.len() == 3) && *scale != 0.0
            }
            BaseDrift::Confinement { .. } | BaseDrift::RadialRestoring { .. } => d >= 2,
            BaseDrift::Kinematic { cruise, .. } => d == 4 && cruise.len() == 2,
            BaseDrift::Repulsor { center, length, .. } => d == 4 && center.len() == 2 && *length > 0.0,
            BaseDrift::Sum { terms } => return terms.iter().try_for_each(|t| t.check_dim(d)),
            BaseDrift::TimeSwitch { before, after, .. } => {
                before.check_dim(d)?;
                return after.check_dim(d);
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Dimension(format!("base drift {self:?} does not fit state dimension {d}")))
        }
    }

    pub fn eval_point(&self, z: &[f64], s: f64) -> Vec<f64> {
        let d = z.len();
        match self {
            BaseDrift::Zero => vec![0.0; d],
            BaseDrift::Constant { value } => value.clone(),
            BaseDrift::Lorenz { sigma, rho, beta, scale, shift } => {
                let sh = |i: usize| shift.get(i).copied().unwrap_or(0.0);
                let x = scale * z[0] + sh(0);
                let y = scale * z[1] + sh(1);
                let w = scale * z[2] + sh(2);
                vec![
                    sigma * (y - x) / scale,
                    (x * (rho - w) - y) / scale,
                    (x * y - beta * w) / scale,
                ]
            }
            BaseDrift::Confinement { swirl, pressure } => {
                let mut out = vec![0.0; d];
                out[0] = -swirl * z[1] + pressure * z[0];
                out[1] = swirl * z[0] + pressure * z[1];
                out
            }
            BaseDrift::RadialRestoring { gain, threshold } => {
                let mut out = vec![0.0; d];
                let r = z[0].hypot(z[1]);
                if r > *threshold {
                    let inv = 1.0 / r.max(*threshold);
                    out[0] = -gain * z[0] * inv;
                    out[1] = -gain * z[1] * inv;
                }
                out
            }
            BaseDrift::Kinematic { damping, cruise } => vec![
                z[2],
                z[3],
                -damping * (z[2] - cruise[0]),
                -damping * (z[3] - cruise[1]),
            ],
            BaseDrift::Repulsor { center, length, strength } => {
                let (dx, dy) = (z[0] - center[0], z[1] - center[1]);
                let bump = strength * (-(dx * dx + dy * dy) / (2.0 * length * length)).exp();
                vec![0.0, 0.0, dx * bump, dy * bump]
            }
            BaseDrift::Sum { terms } => {
                let mut out = vec![0.0; d];
                for t in terms {
                    for (o, v) in out.iter_mut().zip(t.eval_point(z, s)) {
                        *o += v;
                    }
                }
                out
            }
            BaseDrift::TimeSwitch { at, before, after } => {
                if s < *at {
                    before.eval_point(z, s)
                } else {
                    after.eval_point(z, s)
                }
            }
        }
    }

    /// Batched drift for `z` of shape `rows x d`.
    pub fn eval_graph(&self, g: &mut Graph, z: Var, s: f64) -> Var {
        let (rows, d) = g.shape(z);
        let zeros = |g: &mut Graph| g.constant(rows, 1, vec![0.0; rows]);
        let pad = |g: &mut Graph, mut cols: Vec<Var>| {
            while cols.len() < d {
                cols.push(zeros(g));
            }
            g.hcat(&cols)
        };
        match self {
            BaseDrift::Zero => g.constant(rows, d, vec![0.0; rows * d]),
            BaseDrift::Constant { value } => {
                let row = g.constant(1, d, value.clone());
                g.repeat_rows(row, rows)
            }
            BaseDrift::Lorenz { sigma, rho, beta, scale, shift } => {
                let sh = |i: usize| shift.get(i).copied().unwrap_or(0.0);
                let raw = |g: &mut Graph, i: usize| {
                    let c = g.column(z, i);
                    let c = g.scale(c, *scale);
                    g.add_scalar(c, sh(i))
                };
                let (x, y, w) = (raw(g, 0), raw(g, 1), raw(g, 2));
                let yx = g.sub(y, x);
                let f0 = g.scale(yx, sigma / scale);
                let rw = g.scale(w, -1.0);
                let rw = g.add_scalar(rw, *rho);
                let xr = g.mul(x, rw);
                let f1 = g.sub(xr, y);
                let f1 = g.scale(f1, 1.0 / scale);
                let xy = g.mul(x, y);
                let bw = g.scale(w, *beta);
                let f2 = g.sub(xy, bw);
                let f2 = g.scale(f2, 1.0 / scale);
                g.hcat(&[f0, f1, f2])
            }
            BaseDrift::Confinement { swirl, pressure } => {
                let x = g.column(z, 0);
                let y = g.column(z, 1);
                let a = g.scale(y, -swirl);
                let b = g.scale(x, *pressure);
                let f0 = g.add(a, b);
                let a = g.scale(x, *swirl);
                let b = g.scale(y, *pressure);
                let f1 = g.add(a, b);
                pad(g, vec![f0, f1])
            }
            BaseDrift::RadialRestoring { gain, threshold } => {
                let xy = g.columns(z, &[0, 1]);
                let r = g.norm_rows(xy);
                let floor = g.constant(1, 1, vec![*threshold]);
                let rs = g.maximum(r, floor);
                let lr = g.log(rs);
                let lr = g.neg(lr);
                let inv = g.exp(lr);
                let dir = g.mul(xy, inv);
                let push = g.scale(dir, -gain);
                let (c0, c1) = (g.column(push, 0), g.column(push, 1));
                let push = pad(g, vec![c0, c1]);
                let mask: Vec<bool> = g.value(r).iter().map(|r| *r > *threshold).collect();
                let zero = g.constant(rows, d, vec![0.0; rows * d]);
                g.select_rows(mask, push, zero)
            }
            BaseDrift::Kinematic { damping, cruise } => {
                let v = g.columns(z, &[2, 3]);
                let c = g.constant(1, 2, cruise.clone());
                let dv = g.sub(v, c);
                let dv = g.scale(dv, -damping);
                g.hcat(&[v, dv])
            }
            BaseDrift::Repulsor { center, length, strength } => {
                let p = g.columns(z, &[0, 1]);
                let c = g.constant(1, 2, center.clone());
                let diff = g.sub(p, c);
                let sq = g.square(diff);
                let r2 = g.sum_axis(sq, crate::autodiff::Axis::Cols);
                let e = g.scale(r2, -1.0 / (2.0 * length * length));
                let e = g.exp(e);
                let e = g.scale(e, *strength);
                let acc = g.mul(diff, e);
                let zero = g.constant(rows, 2, vec![0.0; rows * 2]);
                g.hcat(&[zero, acc])
            }
            BaseDrift::Sum { terms } => {
                let mut acc = g.constant(rows, d, vec![0.0; rows * d]);
                for t in terms {
                    let v = t.eval_graph(g, z, s);
                    acc = g.add(acc, v);
                }
                acc
            }
            BaseDrift::TimeSwitch { at, before, after } => {
                if s < *at {
                    before.eval_graph(g, z, s)
                } else {
                    after.eval_graph(g, z, s)
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn all_kinds() -> Vec<(BaseDrift, usize)> {
        vec![
            (BaseDrift::Zero, 3),
            (BaseDrift::Constant { value: vec![1.0, -2.0] }, 2),
            (BaseDrift::Lorenz { sigma: 10.0, rho: 28.0, beta: 8.0 / 3.0, scale: 10.0, shift: vec![0.0, 0.0, 25.0] }, 3),
            (BaseDrift::Confinement { swirl: 1.0, pressure: 0.5 }, 2),
            (BaseDrift::RadialRestoring { gain: 1.0, threshold: 0.6 }, 2),
            (BaseDrift::Kinematic { damping: 2.0, cruise: vec![1.0, 0.0] }, 4),
            (BaseDrift::Repulsor { center: vec![1.0, 0.5], length: 0.7, strength: 3.0 }, 4),
            (
                BaseDrift::Sum {
                    terms: vec![
                        BaseDrift::Confinement { swirl: 0.2, pressure: 0.1 },
                        BaseDrift::Constant { value: vec![0.5, 0.5] },
                    ],
                },
                2,
            ),
        ]
    }

    #[test]
    fn graph_and_point_forms_agree() {
        for (drift, d) in all_kinds() {
            drift.check_dim(d).unwrap();
            let states: Vec<Vec<f64>> = (0..5)
                .map(|i| (0..d).map(|j| ((i * 7 + j * 3) as f64 * 0.37).sin() * 1.2).collect())
                .collect();
            let mut g = Graph::new();
            let z = g.constant(5, d, states.concat());
            let y = drift.eval_graph(&mut g, z, 0.3);
            for (i, s) in states.iter().enumerate() {
                let want = drift.eval_point(s, 0.3);
                for j in 0..d {
                    assert!((g.value(y)[i * d + j] - want[j]).abs() < 1e-12, "{drift:?}");
                }
            }
        }
    }

    #[test]
    fn time_switch_selects_branch() {
        let d = BaseDrift::TimeSwitch {
            at: 1.0,
            before: Box::new(BaseDrift::Constant { value: vec![1.0] }),
            after: Box::new(BaseDrift::Zero),
        };
        assert_eq!(d.eval_point(&[0.0], 0.5), vec![1.0]);
        assert_eq!(d.eval_point(&[0.0], 1.0), vec![0.0]);
    }

    #[test]
    fn dimension_checks() {
        assert!(BaseDrift::lorenz63().check_dim(2).is_err());
        assert!(BaseDrift::Constant { value: vec![1.0] }.check_dim(2).is_err());
    }
}
