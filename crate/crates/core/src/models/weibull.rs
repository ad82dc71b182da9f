//! Weibull proportional hazards as a transformation model:
//! `P(Y <= y) = F(nu1 + nu2 log(y) - eta)` with `F(z) = 1 - exp(-exp(z))`.

use super::newton::{self, Eval};
use super::{ModelParams, NodeFit, Obs, Response, PARAM_CAP};
use crate::error::{HteError, Result};
use crate::math::{interval_term, LinkDist};

const DIST: LinkDist = LinkDist::MinExtreme;
const NU1_BOUND: f64 = 100.0;
const NU2_MIN: f64 = 1e-4;
const NU2_MAX: f64 = 1e4;

/// Per-observation contribution with derivatives in the local coordinates.
struct Term {
    value: f64,
    // gradient and Hessian over theta = (nu1, nu2, tau)
    grad: [f64; 3],
    hess: [[f64; 3]; 3],
}

fn log_or_zero(x: f64) -> f64 {
    if x > 0.0 && x.is_finite() {
        x.ln()
    } else {
        0.0
    }
}

fn term(nu1: f64, nu2: f64, tau: f64, o: &Obs, derivs: bool) -> Option<Term> {
    let eta = o.offset + tau * o.z;
    let mut grad = [0.0; 3];
    let mut hess = [[0.0; 3]; 3];
    let value = match o.y {
        Response::Survival { log_time, event, .. } => {
            let z = nu1 + nu2 * log_time - eta;
            let u = z.exp();
            if !u.is_finite() {
                return None;
            }
            let (value, d1) = if event {
                (u - z - nu2.ln() + log_time, u - 1.0)
            } else {
                (u, u)
            };
            if derivs {
                let dz = [1.0, log_time, -o.z];
                for a in 0..3 {
                    grad[a] = d1 * dz[a];
                    for b in 0..3 {
                        hess[a][b] = u * dz[a] * dz[b];
                    }
                }
                if event {
                    grad[1] -= 1.0 / nu2;
                    hess[1][1] += 1.0 / (nu2 * nu2);
                }
            }
            value
        }
        Response::Interval { lower, upper } => {
            let (lu, ll) = (log_or_zero(upper), log_or_zero(lower));
            let a = if upper.is_infinite() {
                f64::INFINITY
            } else {
                nu1 + nu2 * lu - eta
            };
            let b = if lower <= 0.0 {
                f64::NEG_INFINITY
            } else {
                nu1 + nu2 * ll - eta
            };
            let t = interval_term(DIST, a, b)?;
            if derivs {
                let da = if a.is_finite() { [1.0, lu, -o.z] } else { [0.0; 3] };
                let db = if b.is_finite() { [1.0, ll, -o.z] } else { [0.0; 3] };
                for i in 0..3 {
                    grad[i] = t.d_upper * da[i] + t.d_lower * db[i];
                    for j in 0..3 {
                        hess[i][j] =
                            t.d_uu * da[i] * da[j] + t.d_ul * (da[i] * db[j] + db[i] * da[j]) + t.d_ll * db[i] * db[j];
                    }
                }
            }
            t.value
        }
        _ => unreachable!("weibull family on non-survival outcome"),
    };
    Some(Term { value, grad, hess })
}

fn eval(theta: &[f64], obs: &[Obs], derivs: bool) -> Option<Eval> {
    let mut value = 0.0;
    let mut g = vec![0.0; 3];
    let mut h = vec![0.0; 9];
    for o in obs {
        let t = term(theta[0], theta[1], theta[2], o, derivs)?;
        value += o.weight * t.value;
        if derivs {
            for a in 0..3 {
                g[a] += o.weight * t.grad[a];
                for b in 0..3 {
                    h[a * 3 + b] += o.weight * t.hess[a][b];
                }
            }
        }
    }
    if !value.is_finite() {
        return None;
    }
    Some(Eval {
        value,
        grad: g,
        hess: h,
    })
}

/// Weighted event count and exposure used for exponential starting values.
fn exposure(obs: &[Obs]) -> (f64, f64) {
    let (mut events, mut time) = (0.0, 0.0);
    for o in obs {
        match o.y {
            Response::Survival { time: t, event, .. } => {
                time += o.weight * t;
                if event {
                    events += o.weight;
                }
            }
            Response::Interval { lower, upper } => {
                if upper.is_finite() {
                    events += o.weight;
                    time += o.weight * 0.5 * (lower + upper);
                } else {
                    time += o.weight * lower;
                }
            }
            _ => {}
        }
    }
    (events, time)
}

pub(super) fn fit(obs: &[Obs]) -> Result<NodeFit> {
    let sw: f64 = obs.iter().map(|o| o.weight).sum();
    let off = obs.iter().map(|o| o.weight * o.offset).sum::<f64>() / sw;
    let (events, time) = exposure(obs);
    let nu1_start =
        ((events.max(0.5) / time.max(f64::MIN_POSITIVE)).ln() + off).clamp(-NU1_BOUND + 1.0, NU1_BOUND - 1.0);
    if events <= 0.0 {
        let params = ModelParams {
            nu: Some([nu1_start, 1.0]),
            ..ModelParams::new(0.0, 0.0)
        };
        let value = nll(&params, obs)?;
        return Ok(NodeFit {
            params,
            neg_log_lik: value,
            iterations: 0,
            capped: true,
            degenerate: true,
        });
    }
    let out = newton::minimize(
        |t, d| eval(t, obs, d),
        vec![nu1_start, 1.0, 0.0],
        &[-NU1_BOUND, NU2_MIN, -PARAM_CAP],
        &[NU1_BOUND, NU2_MAX, PARAM_CAP],
    )?;
    Ok(NodeFit {
        params: ModelParams {
            nu: Some([out.theta[0], out.theta[1]]),
            ..ModelParams::new(0.0, out.theta[2])
        },
        neg_log_lik: out.value,
        iterations: out.iterations,
        capped: out.at_bound.iter().any(|&b| b),
        degenerate: false,
    })
}

fn params_theta(p: &ModelParams) -> [f64; 3] {
    let [nu1, nu2] = p.nu.expect("checked");
    // a free intercept is absorbed by nu1
    [nu1 - p.mu, nu2, p.tau]
}

pub(super) fn nll(p: &ModelParams, obs: &[Obs]) -> Result<f64> {
    let [nu1, nu2, tau] = params_theta(p);
    let mut total = 0.0;
    for o in obs {
        let t =
            term(nu1, nu2, tau, o, false).ok_or_else(|| HteError::Evaluation("weibull likelihood undefined".into()))?;
        total += o.weight * t.value;
    }
    Ok(total)
}

pub(super) fn score(p: &ModelParams, obs: &[Obs]) -> Result<Vec<[f64; 2]>> {
    let [nu1, nu2, tau] = params_theta(p);
    obs.iter()
        .map(|o| {
            let eta = o.offset + tau * o.z;
            let s = match o.y {
                Response::Survival { log_time, event, .. } => {
                    let u = (nu1 + nu2 * log_time - eta).exp();
                    u - if event { 1.0 } else { 0.0 }
                }
                Response::Interval { lower, upper } => {
                    let a = if upper.is_infinite() {
                        f64::INFINITY
                    } else {
                        nu1 + nu2 * upper.ln() - eta
                    };
                    let b = if lower <= 0.0 {
                        f64::NEG_INFINITY
                    } else {
                        nu1 + nu2 * lower.ln() - eta
                    };
                    let t = interval_term(DIST, a, b)
                        .ok_or_else(|| HteError::Evaluation("interval has zero probability".into()))?;
                    t.d_upper + t.d_lower
                }
                _ => unreachable!("weibull family on non-survival outcome"),
            };
            if !s.is_finite() {
                return Err(HteError::Evaluation("weibull score overflow".into()));
            }
            Ok([s, s * o.z])
        })
        .collect()
}
