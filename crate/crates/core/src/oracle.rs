//! Reference solvers used to check the planner and the network code.
//!
//! Everything here is deliberately slow and written without reusing any
//! arithmetic from the planner.

use ndarray::{Array1, Array2, ArrayView2};

use crate::net::{evaluate_loss, Batch, NetworkSpec, Targets};
use crate::{Error, Result};

/// One linearized step problem:
///
/// ```text
/// max  sum g_j d_j
/// s.t. sum_{w_j = 0} p_j |d_j| + sum_{w_j != 0} p_j sign(w_j) d_j <= slack
///      |d_j| <= s_j
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct LinStepInstance {
    pub w: Vec<f64>,
    pub g: Vec<f64>,
    pub p: Vec<f64>,
    pub s: Vec<f64>,
    pub slack: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub updates: Vec<f64>,
    pub objective: f64,
}

impl LinStepInstance {
    fn check(&self) -> Result<usize> {
        let n = self.w.len();
        if self.g.len() != n || self.p.len() != n || self.s.len() != n {
            return Err(Error::Shape("instance vectors differ in length".into()));
        }
        let ok = |v: &f64| v.is_finite() && *v >= 0.0;
        if !self.p.iter().all(ok) || !self.s.iter().all(ok) {
            return Err(Error::Argument("p and s must be finite and >= 0".into()));
        }
        if !self.slack.is_finite() || !self.w.iter().chain(&self.g).all(|v| v.is_finite()) {
            return Err(Error::Argument("non-finite instance".into()));
        }
        Ok(n)
    }

    pub fn objective(&self, d: &[f64]) -> f64 {
        self.g.iter().zip(d).map(|(g, d)| g * d).sum()
    }

    /// Left-hand side of the linearized constraint at `d`.
    pub fn usage(&self, d: &[f64]) -> f64 {
        let mut total = 0.0;
        for j in 0..self.w.len() {
            if self.w[j] == 0.0 {
                total += self.p[j] * d[j].abs();
            } else if self.w[j] > 0.0 {
                total += self.p[j] * d[j];
            } else {
                total -= self.p[j] * d[j];
            }
        }
        total
    }
}

fn direction(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Exact optimum by the continuous-knapsack greedy.
///
/// Start every parameter at its cheapest position (nonzero ones fully shrunk,
/// zeros left alone, unpenalized ones at their best move), then spend the
/// freed budget on "pieces" in order of gain per unit cost. A nonzero
/// parameter offers one piece of length `2 s` in the direction of its sign, a
/// zero one a piece of length `s` in the direction of `g`. If even the
/// cheapest position is infeasible, it is returned as is.
///
/// Pieces with equal ratio are filled by ascending index.
pub fn lp_step_oracle(inst: &LinStepInstance) -> Result<LpSolution> {
    let n = inst.check()?;
    let mut d = vec![0.0; n];
    let mut budget = inst.slack;
    // (ratio, index, direction, length)
    let mut pieces: Vec<(f64, usize, f64, f64)> = Vec::new();
    for j in 0..n {
        let (w, g, p, s) = (inst.w[j], inst.g[j], inst.p[j], inst.s[j]);
        if p == 0.0 {
            d[j] = direction(g) * s;
            continue;
        }
        if w != 0.0 {
            d[j] = -direction(w) * s;
            budget += p * s;
            if g * w > 0.0 {
                pieces.push((g.abs() / p, j, direction(w), 2.0 * s));
            }
        } else if g != 0.0 {
            pieces.push((g.abs() / p, j, direction(g), s));
        }
    }
    if budget >= 0.0 {
        pieces.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        for (_, j, dir, len) in pieces {
            if budget <= 0.0 {
                break;
            }
            let p = inst.p[j];
            let take = len.min(budget / p);
            d[j] += dir * take;
            budget -= p * take;
        }
    }
    let objective = inst.objective(&d);
    Ok(LpSolution {
        updates: d,
        objective,
    })
}

/// Best value of the last coordinate `j` when the others use `used` of the
/// budget; `None` if no value is feasible.
fn best_last(inst: &LinStepInstance, j: usize, used: f64) -> Option<f64> {
    let (w, g, p, s) = (inst.w[j], inst.g[j], inst.p[j], inst.s[j]);
    let room = inst.slack - used;
    if p == 0.0 {
        return (room >= 0.0).then(|| direction(g) * s);
    }
    if w == 0.0 {
        return (room >= 0.0).then(|| direction(g) * s.min(room / p));
    }
    // cost p * sign(w) * d, so sign(w) * d <= room / p
    let along = direction(w);
    let cap = room / p;
    if cap < -s {
        return None;
    }
    Some(if g * along > 0.0 { along * s.min(cap) } else { -along * s })
}

/// Grid search for up to 3 parameters: all but the last coordinate on a grid
/// of 2001 points per side, the last one solved exactly, then repeated
/// refinement around the best point down to a grid step of `1e-6` of the box.
/// Ties prefer the point that uses less budget.
pub fn lp_brute_force(inst: &LinStepInstance) -> Result<LpSolution> {
    let n = inst.check()?;
    if n == 0 || n > 3 {
        return Err(Error::Argument(format!("brute force handles 1..=3 parameters, got {n}")));
    }
    let last = n - 1;
    let dims = last;
    let mut lo: Vec<f64> = inst.s[..dims].iter().map(|s| -s).collect();
    let mut hi: Vec<f64> = inst.s[..dims].to_vec();
    let mut steps: Vec<usize> = lo
        .iter()
        .zip(&hi)
        .map(|(l, h)| if h > l { 2001 } else { 1 })
        .collect();
    let mut best: Option<(f64, f64, Vec<f64>)> = None;
    let mut point = vec![0.0; n];
    loop {
        let mut idx = vec![0usize; dims];
        'grid: loop {
            for k in 0..dims {
                let m = steps[k];
                point[k] = if m == 1 {
                    lo[k]
                } else {
                    lo[k] + (hi[k] - lo[k]) * idx[k] as f64 / (m - 1) as f64
                };
            }
            point[last] = 0.0;
            let used = inst.usage(&point);
            if let Some(v) = best_last(inst, last, used) {
                point[last] = v;
                let used = inst.usage(&point);
                let obj = inst.objective(&point);
                if best
                    .as_ref()
                    .is_none_or(|(b, bu, _)| obj > *b || (obj == *b && used < *bu))
                {
                    best = Some((obj, used, point.clone()));
                }
            }
            let mut k = 0;
            loop {
                if k == dims {
                    break 'grid;
                }
                idx[k] += 1;
                if idx[k] < steps[k] {
                    break;
                }
                idx[k] = 0;
                k += 1;
            }
        }
        let Some((_, _, ref center)) = best else {
            // Nothing feasible: the cheapest corner is the answer.
            let d: Vec<f64> = (0..n)
                .map(|j| {
                    if inst.p[j] == 0.0 {
                        direction(inst.g[j]) * inst.s[j]
                    } else {
                        -direction(inst.w[j]) * inst.s[j]
                    }
                })
                .collect();
            return Ok(LpSolution {
                objective: inst.objective(&d),
                updates: d,
            });
        };
        let width: Vec<f64> = (0..dims)
            .map(|k| (hi[k] - lo[k]) / (steps[k].max(2) - 1) as f64)
            .collect();
        let side = inst.s[..dims].iter().copied().fold(0.0, f64::max);
        if width.iter().all(|&w| w <= 1e-6 * side) {
            break;
        }
        for k in 0..dims {
            let s = inst.s[k];
            lo[k] = (center[k] - 2.0 * width[k]).max(-s);
            hi[k] = (center[k] + 2.0 * width[k]).min(s);
            steps[k] = if hi[k] > lo[k] { 41 } else { 1 };
        }
    }
    let (objective, _, updates) = best.expect("checked above");
    Ok(LpSolution { updates, objective })
}

/// One point of a constrained lasso path.
#[derive(Debug, Clone, PartialEq)]
pub struct LassoFit {
    pub t: f64,
    pub lambda: f64,
    pub weights: Vec<f64>,
    pub intercept: f64,
}

const CD_TOLERANCE: f64 = 1e-8;
const CD_MAX_SWEEPS: usize = 200_000;

struct Gram {
    g: Array2<f64>,
    c: Array1<f64>,
}

fn soft(v: f64, lambda: f64) -> f64 {
    if v > lambda {
        v - lambda
    } else if v < -lambda {
        v + lambda
    } else {
        0.0
    }
}

/// Minimizes `(1/2n)|y - Xw|^2 + lambda |w|_1` by coordinate descent,
/// starting from `w`.
fn coordinate_descent(gram: &Gram, lambda: f64, w: &mut [f64]) -> Result<()> {
    let p = w.len();
    let mut gw: Vec<f64> = (0..p)
        .map(|j| (0..p).map(|k| gram.g[[j, k]] * w[k]).sum())
        .collect();
    for _ in 0..CD_MAX_SWEEPS {
        let mut largest = 0.0f64;
        for j in 0..p {
            let gjj = gram.g[[j, j]];
            if gjj <= 0.0 {
                w[j] = 0.0;
                continue;
            }
            let rho = gram.c[j] - gw[j] + gjj * w[j];
            let new = soft(rho, lambda) / gjj;
            let change = new - w[j];
            if change != 0.0 {
                for k in 0..p {
                    gw[k] += gram.g[[k, j]] * change;
                }
                w[j] = new;
            }
            largest = largest.max(change.abs());
        }
        if largest < CD_TOLERANCE {
            return Ok(());
        }
    }
    Err(Error::Oracle(format!(
        "coordinate descent did not converge for lambda {lambda}"
    )))
}

fn l1(w: &[f64]) -> f64 {
    w.iter().map(|v| v.abs()).sum()
}

/// Constrained-form lasso solutions `argmin |y - Xw - b|^2 s.t. |w|_1 <= t`
/// for each `t`, by bisection on the multiplier of the penalized form over
/// `[0, max |X'y| / n]` (100 steps).
pub fn lasso_path_oracle(
    x: ArrayView2<f64>,
    y: &[f64],
    t_grid: &[f64],
    fit_intercept: bool,
) -> Result<Vec<LassoFit>> {
    let (n, p) = x.dim();
    if y.len() != n || n == 0 {
        return Err(Error::Shape(format!("{n} rows but {} targets", y.len())));
    }
    let (x_mean, y_mean) = if fit_intercept {
        (
            x.mean_axis(ndarray::Axis(0)).expect("n > 0"),
            y.iter().sum::<f64>() / n as f64,
        )
    } else {
        (Array1::zeros(p), 0.0)
    };
    let xc = &x - &x_mean;
    let yc: Array1<f64> = y.iter().map(|v| v - y_mean).collect();
    let gram = Gram {
        g: xc.t().dot(&xc) / n as f64,
        c: xc.t().dot(&yc) / n as f64,
    };
    let intercept_of = |w: &[f64]| -> f64 {
        y_mean - w.iter().zip(x_mean.iter()).map(|(a, b)| a * b).sum::<f64>()
    };

    let lambda_max = gram.c.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut ols = vec![0.0; p];
    coordinate_descent(&gram, 0.0, &mut ols)?;
    let ols_norm = l1(&ols);

    let mut fits = Vec::with_capacity(t_grid.len());
    let mut warm = vec![0.0; p];
    for &t in t_grid {
        if !(t >= 0.0) {
            return Err(Error::Argument(format!("budget must be >= 0, got {t}")));
        }
        let (lambda, weights) = if t >= ols_norm {
            (0.0, ols.clone())
        } else if t == 0.0 {
            (lambda_max, vec![0.0; p])
        } else {
            let (mut lo, mut hi) = (0.0, lambda_max);
            let mut w_hi = vec![0.0; p];
            for _ in 0..100 {
                let mid = 0.5 * (lo + hi);
                let mut w = warm.clone();
                coordinate_descent(&gram, mid, &mut w)?;
                if l1(&w) > t {
                    lo = mid;
                } else {
                    hi = mid;
                    w_hi = w.clone();
                }
                warm = w;
            }
            (hi, w_hi)
        };
        warm = weights.clone();
        fits.push(LassoFit {
            t,
            lambda,
            intercept: intercept_of(&weights),
            weights,
        });
    }
    Ok(fits)
}

/// Central differences `(f(w + h e_j) - f(w - h e_j)) / 2h`.
pub fn central_difference<F>(f: F, at: &[f64], h: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let mut w = at.to_vec();
    (0..at.len())
        .map(|j| {
            let orig = w[j];
            w[j] = orig + h;
            let up = f(&w);
            w[j] = orig - h;
            let down = f(&w);
            w[j] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Central-difference gradient of the mean loss.
pub fn finite_diff_gradient(
    spec: &NetworkSpec,
    params: &[f64],
    x: ArrayView2<f64>,
    y: &Targets,
    h: f64,
) -> Result<Vec<f64>> {
    if !(h > 0.0) {
        return Err(Error::Argument(format!("step must be > 0, got {h}")));
    }
    let batch = Batch::new(x.to_owned(), y.clone())?;
    evaluate_loss(spec, params, &batch)?;
    Ok(central_difference(
        |w| evaluate_loss(spec, w, &batch).unwrap_or(f64::NAN),
        params,
        h,
    ))
}
