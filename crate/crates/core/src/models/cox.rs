//! Cox partial likelihood with Breslow ties. The hazard is proportional to
//! `exp(-eta)`, matching the sign convention of the transformation models.

use super::newton::{self, Eval};
use super::{ModelParams, NodeFit, Obs, Response, PARAM_CAP};
use crate::error::Result;

fn time_event(o: &Obs) -> (f64, bool) {
    match o.y {
        Response::Survival { time, event, .. } => (time, event),
        _ => unreachable!("cox family on non-survival outcome"),
    }
}

/// Indices sorted by decreasing time, grouped into tie blocks.
fn tie_blocks(obs: &[Obs]) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..obs.len()).collect();
    order.sort_by(|&a, &b| time_event(&obs[b]).0.total_cmp(&time_event(&obs[a]).0));
    let mut blocks: Vec<Vec<usize>> = Vec::new();
    for i in order {
        match blocks.last_mut() {
            Some(b) if time_event(&obs[b[0]]).0 == time_event(&obs[i]).0 => b.push(i),
            _ => blocks.push(vec![i]),
        }
    }
    blocks
}

struct Sweep {
    value: f64,
    grad: f64,
    hess: f64,
}

/// Negative log partial likelihood in `tau` with first and second derivatives.
fn sweep(obs: &[Obs], blocks: &[Vec<usize>], mu: f64, tau: f64) -> Option<Sweep> {
    let eta: Vec<f64> = obs.iter().map(|o| o.offset + mu + tau * o.z).collect();
    let center = eta.iter().copied().fold(f64::INFINITY, f64::min);
    let (mut s0, mut s1, mut s2) = (0.0, 0.0, 0.0);
    let (mut value, mut grad, mut hess) = (0.0, 0.0, 0.0);
    for block in blocks {
        for &i in block {
            let r = obs[i].weight * (-(eta[i] - center)).exp();
            let z = obs[i].z;
            s0 += r;
            s1 += r * z;
            s2 += r * z * z;
        }
        let d: f64 = block
            .iter()
            .filter(|&&i| time_event(&obs[i]).1)
            .map(|&i| obs[i].weight)
            .sum();
        if d == 0.0 {
            continue;
        }
        if !(s0 > 0.0) {
            return None;
        }
        let zbar = s1 / s0;
        for &i in block {
            if time_event(&obs[i]).1 {
                let w = obs[i].weight;
                value += w * ((eta[i] - center) + s0.ln());
                grad += w * (obs[i].z - zbar);
            }
        }
        hess += d * (s2 / s0 - zbar * zbar).max(0.0);
    }
    if !value.is_finite() {
        return None;
    }
    // d/dtau of (eta_i - center + log S0) = z_i - zbar
    Some(Sweep { value, grad, hess })
}

/// Martingale residuals `delta_i - r_i Lambda0(t_i)` under Breslow's baseline.
pub(super) fn martingale(obs: &[Obs], mu: f64, tau: f64) -> Vec<f64> {
    let blocks = tie_blocks(obs);
    let eta: Vec<f64> = obs.iter().map(|o| o.offset + mu + tau * o.z).collect();
    let center = eta.iter().copied().fold(f64::INFINITY, f64::min);
    let rel: Vec<f64> = eta.iter().map(|e| (-(e - center)).exp()).collect();
    let mut increments = Vec::with_capacity(blocks.len());
    let mut s0 = 0.0;
    for block in &blocks {
        for &i in block {
            s0 += obs[i].weight * rel[i];
        }
        let d: f64 = block
            .iter()
            .filter(|&&i| time_event(&obs[i]).1)
            .map(|&i| obs[i].weight)
            .sum();
        increments.push(if d > 0.0 { d / s0 } else { 0.0 });
    }
    let mut out = vec![0.0; obs.len()];
    let mut cum = 0.0;
    for (block, inc) in blocks.iter().zip(&increments).rev() {
        cum += inc;
        for &i in block {
            let delta = if time_event(&obs[i]).1 { 1.0 } else { 0.0 };
            out[i] = delta - rel[i] * cum;
        }
    }
    out
}

pub(super) fn fit(obs: &[Obs]) -> Result<NodeFit> {
    let blocks = tie_blocks(obs);
    let events: f64 = obs.iter().filter(|o| time_event(o).1).map(|o| o.weight).sum();
    if events <= 0.0 {
        let value = nll(&ModelParams::new(0.0, 0.0), obs);
        return Ok(NodeFit {
            params: ModelParams::new(0.0, 0.0),
            neg_log_lik: value,
            iterations: 0,
            capped: true,
            degenerate: true,
        });
    }
    let out = newton::minimize(
        |t, _| {
            sweep(obs, &blocks, 0.0, t[0]).map(|s| Eval {
                value: s.value,
                grad: vec![s.grad],
                hess: vec![s.hess],
            })
        },
        vec![0.0],
        &[-PARAM_CAP],
        &[PARAM_CAP],
    )?;
    Ok(NodeFit {
        params: ModelParams::new(0.0, out.theta[0]),
        neg_log_lik: out.value,
        iterations: out.iterations,
        capped: out.at_bound[0],
        degenerate: false,
    })
}

pub(super) fn nll(p: &ModelParams, obs: &[Obs]) -> f64 {
    let blocks = tie_blocks(obs);
    sweep(obs, &blocks, p.mu, p.tau).map_or(f64::INFINITY, |s| s.value)
}

pub(super) fn score(p: &ModelParams, obs: &[Obs]) -> Vec<[f64; 2]> {
    martingale(obs, p.mu, p.tau)
        .into_iter()
        .zip(obs)
        .map(|(m, o)| [-m, -m * o.z])
        .collect()
}

#[cfg(test)]
mod tests {
    use super::super::{fit_obs, ModelFamily};
    use super::*;

    fn surv(time: f64, event: bool, z: f64) -> Obs {
        Obs {
            y: Response::Survival {
                time,
                log_time: time.ln(),
                event,
            },
            z,
            offset: 0.0,
            weight: 1.0,
        }
    }

    fn sample() -> Vec<Obs> {
        vec![
            surv(1.0, true, 1.0),
            surv(2.0, false, 0.0),
            surv(2.0, true, 1.0),
            surv(3.0, true, 0.0),
            surv(3.0, true, 1.0),
            surv(4.5, false, 1.0),
            surv(5.0, true, 0.0),
            surv(0.5, true, 0.0),
        ]
    }

    #[test]
    fn martingale_residuals_sum_to_zero() {
        for tau in [-1.3, 0.0, 0.4, 2.0] {
            let m = martingale(&sample(), 0.0, tau);
            assert!(m.iter().sum::<f64>().abs() < 1e-12);
        }
    }

    #[test]
    fn two_subjects_by_hand() {
        // risk set at t=1: both; partial likelihood exp(-tau) / (exp(-tau) + 1)
        let obs = vec![surv(1.0, true, 1.0), surv(2.0, false, 0.0)];
        let tau: f64 = 0.7;
        let expected = -((-tau).exp() / ((-tau).exp() + 1.0)).ln();
        let v = nll(&ModelParams::new(0.0, tau), &obs);
        assert!((v - expected).abs() < 1e-14);
    }

    #[test]
    fn intercept_cancels() {
        let obs = sample();
        let a = nll(&ModelParams::new(0.0, 0.3), &obs);
        let b = nll(&ModelParams::new(5.0, 0.3), &obs);
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn fit_zeroes_the_score() {
        let obs = sample();
        let f = fit_obs(ModelFamily::CoxPartial, &obs).unwrap();
        let s = score(&f.params, &obs);
        let tot: f64 = s.iter().map(|r| r[1]).sum();
        assert!(tot.abs() < 1e-8);
    }

    #[test]
    fn no_events_is_degenerate() {
        let obs: Vec<Obs> = (1..6).map(|i| surv(i as f64, false, (i % 2) as f64)).collect();
        let f = fit_obs(ModelFamily::CoxPartial, &obs).unwrap();
        assert!(f.degenerate);
        assert_eq!(f.params.tau, 0.0);
    }
}
