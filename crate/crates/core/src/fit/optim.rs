//! Dense BFGS minimizer with a strong-Wolfe line search.
//!
//! The objective returns `None` for points where it is not finite; the line
//! search treats those as rejected steps and backtracks.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimOptions {
    /// Tolerance on the relative gradient
    /// `max_j |g_j| max(|x_j|, 1) / max(|f|, 1)`.
    pub gtol: f64,
    pub max_iter: usize,
    /// BFGS iterations before a penalized fit switches to Newton steps.
    pub newton_after: usize,
}

impl Default for OptimOptions {
    fn default() -> Self {
        OptimOptions {
            gtol: 1e-6,
            max_iter: 500,
            newton_after: 150,
        }
    }
}

#[derive(Debug, Clone)]
pub struct OptimOutcome {
    pub x: Vec<f64>,
    pub f: f64,
    pub grad: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

const C1: f64 = 1e-4;
const C2: f64 = 0.9;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn relative_gradient(x: &[f64], f: f64, g: &[f64]) -> f64 {
    let scale = f.abs().max(1.0);
    x.iter()
        .zip(g)
        .map(|(xi, gi)| gi.abs() * xi.abs().max(1.0) / scale)
        .fold(0.0, f64::max)
}

struct Point {
    alpha: f64,
    f: f64,
    g: Vec<f64>,
    dg: f64,
}

/// Minimizes `objective`, which maps a point to `(value, gradient)`.
/// Returns `None` only if the starting point itself is not finite.
pub fn minimize<F>(objective: F, x0: &[f64], opts: &OptimOptions) -> Option<OptimOutcome>
where
    F: Fn(&[f64]) -> Option<(f64, Vec<f64>)>,
{
    let n = x0.len();
    let mut x = x0.to_vec();
    let (mut f, mut g) = objective(&x)?;
    if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return None;
    }
    if n == 0 {
        return Some(OptimOutcome {
            x,
            f,
            grad: g,
            iterations: 0,
            converged: true,
        });
    }
    // Inverse Hessian approximation, row-major.
    let mut h = identity(n);
    let mut fresh = true;
    let mut iterations = 0;
    let mut converged = relative_gradient(&x, f, &g) < opts.gtol;
    let mut xt = vec![0.0; n];

    while !converged && iterations < opts.max_iter {
        iterations += 1;
        let mut d: Vec<f64> = (0..n).map(|i| -dot(&h[i * n..(i + 1) * n], &g)).collect();
        let mut dg = dot(&d, &g);
        if !(dg < 0.0) {
            h = identity(n);
            fresh = true;
            d = g.iter().map(|v| -v).collect();
            dg = dot(&d, &g);
        }
        let alpha0 = if fresh {
            let gmax = g.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
            (1.0 / gmax.max(1e-12)).min(1.0)
        } else {
            1.0
        };
        let eval = |alpha: f64, xt: &mut Vec<f64>| -> Option<Point> {
            for i in 0..n {
                xt[i] = x[i] + alpha * d[i];
            }
            let (fv, gv) = objective(xt)?;
            if !fv.is_finite() || gv.iter().any(|v| !v.is_finite()) {
                return None;
            }
            let dgv = dot(&gv, &d);
            Some(Point {
                alpha,
                f: fv,
                g: gv,
                dg: dgv,
            })
        };
        let step = line_search(&eval, &mut xt, f, dg, alpha0);
        let Some(p) = step else {
            if fresh {
                break;
            }
            h = identity(n);
            fresh = true;
            continue;
        };
        let s: Vec<f64> = d.iter().map(|di| p.alpha * di).collect();
        let y: Vec<f64> = p.g.iter().zip(&g).map(|(a, b)| a - b).collect();
        for i in 0..n {
            x[i] += s[i];
        }
        let f_prev = f;
        f = p.f;
        g = p.g;
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            if fresh {
                let scale = sy / dot(&y, &y);
                h.iter_mut().for_each(|v| *v *= scale);
                fresh = false;
            }
            bfgs_update(&mut h, &s, &y, sy, n);
        }
        converged = relative_gradient(&x, f, &g) < opts.gtol;
        if !converged && (f_prev - f).abs() <= 1e-15 * f.abs().max(1.0) && fresh {
            break;
        }
    }
    Some(OptimOutcome {
        x,
        f,
        grad: g,
        iterations,
        converged,
    })
}

fn identity(n: usize) -> Vec<f64> {
    let mut h = vec![0.0; n * n];
    for i in 0..n {
        h[i * n + i] = 1.0;
    }
    h
}

/// `H <- (I - r s y') H (I - r y s') + r s s'` with `r = 1 / s'y`.
fn bfgs_update(h: &mut [f64], s: &[f64], y: &[f64], sy: f64, n: usize) {
    let r = 1.0 / sy;
    let hy: Vec<f64> = (0..n).map(|i| dot(&h[i * n..(i + 1) * n], y)).collect();
    let yhy = dot(y, &hy);
    let coef = (1.0 + r * yhy) * r;
    for i in 0..n {
        for j in 0..n {
            h[i * n + j] += coef * s[i] * s[j] - r * (hy[i] * s[j] + s[i] * hy[j]);
        }
    }
}

fn line_search<E>(eval: &E, xt: &mut Vec<f64>, f0: f64, dg0: f64, alpha0: f64) -> Option<Point>
where
    E: Fn(f64, &mut Vec<f64>) -> Option<Point>,
{
    let mut prev = Point {
        alpha: 0.0,
        f: f0,
        g: Vec::new(),
        dg: dg0,
    };
    let mut alpha = alpha0;
    let mut best_armijo: Option<Point> = None;
    for iter in 0..40 {
        let Some(p) = eval(alpha, xt) else {
            // Non-finite: backtrack toward the last accepted point.
            alpha = prev.alpha + 0.1 * (alpha - prev.alpha);
            if alpha - prev.alpha < 1e-16 {
                return best_armijo;
            }
            continue;
        };
        if p.f > f0 + C1 * alpha * dg0 || (iter > 0 && p.f >= prev.f) {
            return zoom(eval, xt, f0, dg0, prev, p).or(best_armijo);
        }
        if p.dg.abs() <= -C2 * dg0 {
            return Some(p);
        }
        if p.dg >= 0.0 {
            return zoom(eval, xt, f0, dg0, p, prev).or(best_armijo);
        }
        alpha = 2.0 * p.alpha;
        if alpha > 1e10 {
            return Some(p);
        }
        best_armijo = Some(Point {
            alpha: p.alpha,
            f: p.f,
            g: p.g.clone(),
            dg: p.dg,
        });
        prev = p;
    }
    best_armijo
}

fn zoom<E>(
    eval: &E,
    xt: &mut Vec<f64>,
    f0: f64,
    dg0: f64,
    mut lo: Point,
    mut hi: Point,
) -> Option<Point>
where
    E: Fn(f64, &mut Vec<f64>) -> Option<Point>,
{
    for _ in 0..60 {
        let width = hi.alpha - lo.alpha;
        // Quadratic interpolation from lo's value and slope and hi's value.
        let mut alpha = {
            let denom = 2.0 * (hi.f - lo.f - lo.dg * width);
            if denom > 0.0 && hi.f.is_finite() {
                lo.alpha - lo.dg * width * width / denom
            } else {
                lo.alpha + 0.5 * width
            }
        };
        let (a, b) = if lo.alpha < hi.alpha {
            (lo.alpha, hi.alpha)
        } else {
            (hi.alpha, lo.alpha)
        };
        let margin = 0.1 * (b - a);
        if !(alpha > a + margin && alpha < b - margin) {
            alpha = 0.5 * (a + b);
        }
        if (b - a).abs() < 1e-16 * b.abs().max(1.0) {
            break;
        }
        let Some(p) = eval(alpha, xt) else {
            hi = Point {
                alpha,
                f: f64::INFINITY,
                g: Vec::new(),
                dg: 0.0,
            };
            continue;
        };
        if p.f > f0 + C1 * alpha * dg0 || p.f >= lo.f {
            hi = p;
        } else {
            if p.dg.abs() <= -C2 * dg0 {
                return Some(p);
            }
            if p.dg * (hi.alpha - lo.alpha) >= 0.0 {
                hi = lo;
            }
            lo = p;
        }
    }
    // Accept the best sufficient-decrease point found, if any.
    (lo.alpha > 0.0 && !lo.g.is_empty()).then_some(lo)
}

/// Damped Newton iterations from `x0` using a Hessian callback (of the
/// minimized function). Eigenvalues are floored so every step is a descent
/// direction; steps are halved until the value decreases.
pub fn newton_polish<F, H>(
    objective: F,
    hessian: H,
    x0: &[f64],
    opts: &OptimOptions,
    max_iter: usize,
) -> Option<OptimOutcome>
where
    F: Fn(&[f64]) -> Option<(f64, Vec<f64>)>,
    H: Fn(&[f64]) -> Option<nalgebra::DMatrix<f64>>,
{
    let n = x0.len();
    let mut x = x0.to_vec();
    let (mut f, mut g) = objective(&x)?;
    let mut iterations = 0;
    let mut converged = relative_gradient(&x, f, &g) < opts.gtol;
    while !converged && iterations < max_iter {
        iterations += 1;
        let Some(h) = hessian(&x) else { break };
        let eig = h.symmetric_eigen();
        let max = eig.eigenvalues.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        let floor = (max * 1e-10).max(1e-10);
        let q = &eig.eigenvectors;
        let qg = q.transpose() * nalgebra::DVector::from_column_slice(&g);
        let scaled = nalgebra::DVector::from_iterator(
            n,
            qg.iter().zip(eig.eigenvalues.iter()).map(|(v, l)| -v / l.abs().max(floor)),
        );
        let d = q * scaled;
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let xt: Vec<f64> = x.iter().zip(d.iter()).map(|(a, b)| a + alpha * b).collect();
            if let Some((ft, gt)) = objective(&xt) {
                if ft.is_finite() && ft <= f && gt.iter().all(|v| v.is_finite()) {
                    accepted = Some((xt, ft, gt));
                    break;
                }
            }
            alpha *= 0.5;
        }
        let Some((xt, ft, gt)) = accepted else { break };
        let stalled = (f - ft).abs() <= 1e-15 * f.abs().max(1.0);
        x = xt;
        f = ft;
        g = gt;
        converged = relative_gradient(&x, f, &g) < opts.gtol;
        if stalled && !converged {
            break;
        }
    }
    Some(OptimOutcome {
        x,
        f,
        grad: g,
        iterations,
        converged,
    })
}
