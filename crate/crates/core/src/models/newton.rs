//! Box-constrained damped Newton for the low-dimensional node problems.

use nalgebra::{DMatrix, DVector};

use crate::error::{HteError, Result};

pub(crate) const GRAD_TOL: f64 = 1e-8;
pub(crate) const MAX_ITER: usize = 100;

/// Objective value, gradient and row-major Hessian. `None` marks an
/// infeasible point (zero probability mass, overflow, violated ordering).
pub(crate) struct Eval {
    pub value: f64,
    pub grad: Vec<f64>,
    pub hess: Vec<f64>,
}

pub(crate) struct Outcome {
    pub theta: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub at_bound: Vec<bool>,
}

fn solve_free(hess: &[f64], grad: &[f64], free: &[usize], dim: usize) -> Vec<f64> {
    let k = free.len();
    let h = DMatrix::from_fn(k, k, |r, c| hess[free[r] * dim + free[c]]);
    let g = DVector::from_fn(k, |r, _| -grad[free[r]]);
    let scale = (0..k).map(|i| h[(i, i)].abs()).fold(0.0, f64::max).max(1e-300);
    let mut ridge = 0.0;
    for _ in 0..30 {
        let mut hr = h.clone();
        for i in 0..k {
            hr[(i, i)] += ridge;
        }
        if let Some(ch) = hr.cholesky() {
            let d = ch.solve(&g);
            if d.iter().all(|v| v.is_finite()) {
                return d.iter().copied().collect();
            }
        }
        ridge = if ridge == 0.0 { scale * 1e-10 } else { ridge * 10.0 };
    }
    // Hessian unusable: fall back to steepest descent.
    g.iter().copied().collect()
}

/// Minimizes `f` over the box `[lower, upper]`.
///
/// Coordinates sitting on a bound with the gradient pointing outward are held
/// fixed; the rest take a Newton step with step halving so the objective
/// never increases.
pub(crate) fn minimize<F>(f: F, theta0: Vec<f64>, lower: &[f64], upper: &[f64]) -> Result<Outcome>
where
    F: Fn(&[f64], bool) -> Option<Eval>,
{
    let dim = theta0.len();
    let clamp = |t: &mut Vec<f64>| {
        for i in 0..dim {
            t[i] = t[i].clamp(lower[i], upper[i]);
        }
    };
    let mut theta = theta0;
    clamp(&mut theta);
    let mut current =
        f(&theta, true).ok_or_else(|| HteError::Evaluation("objective undefined at starting values".into()))?;
    let mut last_gmax = f64::INFINITY;

    for iter in 0..MAX_ITER {
        let g = &current.grad;
        let mut free: Vec<usize> = (0..dim)
            .filter(|&i| !((theta[i] <= lower[i] && g[i] > 0.0) || (theta[i] >= upper[i] && g[i] < 0.0)))
            .collect();
        let gmax = free.iter().map(|&i| g[i].abs()).fold(0.0, f64::max);
        last_gmax = gmax;
        if gmax < GRAD_TOL || free.is_empty() {
            return Ok(finish(theta, current.value, iter, lower, upper));
        }

        // Newton direction; drop coordinates the step would push through their bound.
        let mut dir = vec![0.0; dim];
        loop {
            let d = solve_free(&current.hess, g, &free, dim);
            let blocked: Vec<usize> = free
                .iter()
                .zip(&d)
                .filter(|(&i, &di)| (theta[i] <= lower[i] && di < 0.0) || (theta[i] >= upper[i] && di > 0.0))
                .map(|(&i, _)| i)
                .collect();
            if blocked.is_empty() || blocked.len() == free.len() {
                dir.iter_mut().for_each(|v| *v = 0.0);
                if blocked.is_empty() {
                    for (&i, &di) in free.iter().zip(&d) {
                        dir[i] = di;
                    }
                }
                break;
            }
            free.retain(|i| !blocked.contains(i));
        }
        if dir.iter().all(|&v| v == 0.0) {
            return Ok(finish(theta, current.value, iter, lower, upper));
        }

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let mut cand: Vec<f64> = theta.iter().zip(&dir).map(|(t, d)| t + step * d).collect();
            clamp(&mut cand);
            if let Some(e) = f(&cand, false) {
                // Near the optimum the objective is flat to rounding error;
                // comparing exactly would reject good Newton steps.
                if e.value.is_finite() && e.value <= current.value + 1e-13 * (1.0 + current.value.abs()) {
                    accepted = Some(cand);
                    break;
                }
            }
            step *= 0.5;
        }
        match accepted {
            Some(cand) => {
                let moved = cand.iter().zip(&theta).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                theta = cand;
                current = f(&theta, true)
                    .ok_or_else(|| HteError::Evaluation("objective undefined after accepted step".into()))?;
                if moved == 0.0 {
                    // Floating-point floor: no representable improvement left.
                    if last_gmax < 1e-5 * (1.0 + current.value.abs()) {
                        return Ok(finish(theta, current.value, iter + 1, lower, upper));
                    }
                    return Err(HteError::NonConvergence {
                        iterations: iter + 1,
                        gradient_norm: last_gmax,
                    });
                }
            }
            None => {
                if gmax < 1e-5 * (1.0 + current.value.abs()) {
                    return Ok(finish(theta, current.value, iter, lower, upper));
                }
                return Err(HteError::NonConvergence {
                    iterations: iter,
                    gradient_norm: gmax,
                });
            }
        }
    }
    // Cycling at the floating-point floor near the optimum.
    if last_gmax < 1e-5 * (1.0 + current.value.abs()) {
        return Ok(finish(theta, current.value, MAX_ITER, lower, upper));
    }
    Err(HteError::NonConvergence {
        iterations: MAX_ITER,
        gradient_norm: last_gmax,
    })
}

fn finish(theta: Vec<f64>, value: f64, iterations: usize, lower: &[f64], upper: &[f64]) -> Outcome {
    let at_bound = theta
        .iter()
        .zip(lower.iter().zip(upper))
        .map(|(t, (lo, hi))| t <= lo || t >= hi)
        .collect();
    Outcome {
        theta,
        value,
        iterations,
        at_bound,
    }
}
