use super::newton::{self, Eval};
use super::{ModelParams, NodeFit, Obs, Response, PARAM_CAP};
use crate::error::Result;
use crate::math::{expit, log1pexp, logit};

fn y(o: &Obs) -> f64 {
    match o.y {
        Response::Binary(v) => v,
        _ => unreachable!("binomial family on non-binary outcome"),
    }
}

fn eval(theta: &[f64], obs: &[Obs], derivs: bool) -> Option<Eval> {
    let (mu, tau) = (theta[0], theta[1]);
    let mut value = 0.0;
    let mut g = [0.0; 2];
    let mut h = [0.0; 3];
    for o in obs {
        let eta = o.offset + mu + tau * o.z;
        let yi = y(o);
        value += o.weight * (log1pexp(eta) - yi * eta);
        if derivs {
            let p = expit(eta);
            let d = o.weight * (p - yi);
            let c = o.weight * p * (1.0 - p);
            g[0] += d;
            g[1] += d * o.z;
            h[0] += c;
            h[1] += c * o.z;
            h[2] += c * o.z * o.z;
        }
    }
    if !value.is_finite() {
        return None;
    }
    Some(Eval {
        value,
        grad: g.to_vec(),
        hess: vec![h[0], h[1], h[1], h[2]],
    })
}

pub(super) fn fit(obs: &[Obs]) -> Result<NodeFit> {
    let sw: f64 = obs.iter().map(|o| o.weight).sum();
    let off = obs.iter().map(|o| o.weight * o.offset).sum::<f64>() / sw;
    let rate = obs.iter().map(|o| o.weight * y(o)).sum::<f64>() / sw;
    let degenerate = rate <= 0.0 || rate >= 1.0;
    let mu0 = (logit(rate.clamp(0.01, 0.99)) - off).clamp(-PARAM_CAP, PARAM_CAP);
    let out = newton::minimize(
        |t, d| eval(t, obs, d),
        vec![mu0, 0.0],
        &[-PARAM_CAP, -PARAM_CAP],
        &[PARAM_CAP, PARAM_CAP],
    )?;
    if out.at_bound.iter().any(|&b| b) {
        log::debug!("binomial node fit capped at |param| = {PARAM_CAP}");
    }
    Ok(NodeFit {
        params: ModelParams::new(out.theta[0], out.theta[1]),
        neg_log_lik: out.value,
        iterations: out.iterations,
        capped: out.at_bound.iter().any(|&b| b),
        degenerate,
    })
}

pub(super) fn nll(p: &ModelParams, obs: &[Obs]) -> f64 {
    eval(&[p.mu, p.tau], obs, false).map_or(f64::INFINITY, |e| e.value)
}

pub(super) fn score(p: &ModelParams, obs: &[Obs]) -> Vec<[f64; 2]> {
    obs.iter()
        .map(|o| {
            let r = y(o) - expit(o.offset + p.mu + p.tau * o.z);
            [r, r * o.z]
        })
        .collect()
}
