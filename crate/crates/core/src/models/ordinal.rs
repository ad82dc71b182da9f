//! Cumulative logit (proportional odds) model, `P(Y <= k) = expit(theta_k - eta)`.
//!
//! Only the thresholds bordering observed (positive-weight) levels are
//! estimated; thresholds next to empty levels are tied to their neighbours,
//! and those below the lowest / above the highest observed level are pushed
//! `UNOBSERVED_GAP` logits outward.

use super::newton::{self, Eval};
use super::{ModelParams, NodeFit, Obs, Response, PARAM_CAP};
use crate::error::{HteError, Result};
use crate::math::{interval_term, logit, LinkDist};

const DIST: LinkDist = LinkDist::Logistic;
const UNOBSERVED_GAP: f64 = 30.0;
const THRESHOLD_BOUND: f64 = 200.0;

fn level(o: &Obs) -> usize {
    match o.y {
        Response::Ordinal(l) => l,
        _ => unreachable!("proportional odds family on non-ordinal outcome"),
    }
}

/// Category probabilities `P(Y = k)`, `k = 1..=K`, at linear predictor `eta`.
pub fn category_probabilities(thresholds: &[f64], eta: f64) -> Vec<f64> {
    let k = thresholds.len() + 1;
    (1..=k)
        .map(|l| {
            let upper = if l == k { f64::INFINITY } else { thresholds[l - 1] - eta };
            let lower = if l == 1 {
                f64::NEG_INFINITY
            } else {
                thresholds[l - 2] - eta
            };
            DIST.mass(upper, lower)
        })
        .collect()
}

/// Bounds `(upper, lower)` on the latent scale for an observation at `level`.
fn bounds_for(thresholds: &[f64], level: usize) -> (f64, f64) {
    let k = thresholds.len() + 1;
    let upper = if level == k {
        f64::INFINITY
    } else {
        thresholds[level - 1]
    };
    let lower = if level == 1 {
        f64::NEG_INFINITY
    } else {
        thresholds[level - 2]
    };
    (upper, lower)
}

/// Reduced problem: `theta = (cut_0, ..., cut_{m-2}, tau)`, where `cut_j`
/// separates the j-th and (j+1)-th observed level.
fn eval(theta: &[f64], obs: &[Obs], slot: &[usize], m: usize, derivs: bool) -> Option<Eval> {
    let dim = m;
    let cuts = &theta[..m - 1];
    if cuts.windows(2).any(|w| w[1] <= w[0]) {
        return None;
    }
    let tau = theta[m - 1];
    let mut value = 0.0;
    let mut g = vec![0.0; dim];
    let mut h = vec![0.0; dim * dim];
    for o in obs {
        let j = slot[level(o)];
        let eta = o.offset + tau * o.z;
        let upper = if j + 1 < m { cuts[j] - eta } else { f64::INFINITY };
        let lower = if j > 0 { cuts[j - 1] - eta } else { f64::NEG_INFINITY };
        let t = interval_term(DIST, upper, lower)?;
        value += o.weight * t.value;
        if !derivs {
            continue;
        }
        let w = o.weight;
        // d upper / d theta: +1 on cut j, -z on tau; same for lower with cut j-1.
        let ti = m - 1;
        let du = j + 1 < m;
        let dl = j > 0;
        if du {
            g[j] += w * t.d_upper;
            h[j * dim + j] += w * t.d_uu;
        }
        if dl {
            g[j - 1] += w * t.d_lower;
            h[(j - 1) * dim + j - 1] += w * t.d_ll;
        }
        if du && dl {
            h[j * dim + j - 1] += w * t.d_ul;
            h[(j - 1) * dim + j] += w * t.d_ul;
        }
        let z = o.z;
        g[ti] += -z * w * (t.d_upper + t.d_lower);
        h[ti * dim + ti] += w * z * z * (t.d_uu + 2.0 * t.d_ul + t.d_ll);
        if du {
            let v = -z * w * (t.d_uu + t.d_ul);
            h[ti * dim + j] += v;
            h[j * dim + ti] += v;
        }
        if dl {
            let v = -z * w * (t.d_ul + t.d_ll);
            h[ti * dim + j - 1] += v;
            h[(j - 1) * dim + ti] += v;
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

fn expand(cuts: &[f64], observed: &[usize], levels: usize, base: f64) -> Vec<f64> {
    let lowest = observed[0];
    let highest = *observed.last().expect("non-empty");
    let first = cuts.first().copied().unwrap_or(base);
    let last = cuts.last().copied().unwrap_or(base);
    (1..levels)
        .map(|k| {
            if k < lowest {
                first - UNOBSERVED_GAP
            } else if k >= highest {
                last + UNOBSERVED_GAP
            } else {
                // largest observed level <= k
                let j = observed.iter().rposition(|&l| l <= k).expect("k >= lowest");
                cuts[j]
            }
        })
        .collect()
}

pub(super) fn fit(obs: &[Obs], levels: usize) -> Result<NodeFit> {
    let mut weight_at = vec![0.0; levels + 1];
    for o in obs {
        let l = level(o);
        if l == 0 || l > levels {
            return Err(HteError::Validation(format!("ordinal level {l} outside 1..={levels}")));
        }
        weight_at[l] += o.weight;
    }
    let observed: Vec<usize> = (1..=levels).filter(|&l| weight_at[l] > 0.0).collect();
    let sw: f64 = weight_at.iter().sum();
    let off = obs.iter().map(|o| o.weight * o.offset).sum::<f64>() / sw;
    let m = observed.len();
    if m < 2 {
        let thresholds = expand(&[], &observed, levels, off);
        let params = ModelParams {
            thresholds,
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
    let mut slot = vec![usize::MAX; levels + 1];
    for (j, &l) in observed.iter().enumerate() {
        slot[l] = j;
    }
    let mut cum = 0.0;
    let mut theta0 = Vec::with_capacity(m);
    for &l in &observed[..m - 1] {
        cum += weight_at[l];
        theta0.push(logit((cum / sw).clamp(1e-6, 1.0 - 1e-6)) + off);
    }
    theta0.push(0.0);
    let mut lower = vec![-THRESHOLD_BOUND + off; m];
    let mut upper = vec![THRESHOLD_BOUND + off; m];
    lower[m - 1] = -PARAM_CAP;
    upper[m - 1] = PARAM_CAP;
    let out = newton::minimize(|t, d| eval(t, obs, &slot, m, d), theta0, &lower, &upper)?;
    let tau = out.theta[m - 1];
    let thresholds = expand(&out.theta[..m - 1], &observed, levels, off);
    Ok(NodeFit {
        params: ModelParams {
            thresholds,
            ..ModelParams::new(0.0, tau)
        },
        neg_log_lik: out.value,
        iterations: out.iterations,
        capped: out.at_bound.iter().any(|&b| b),
        degenerate: false,
    })
}

pub(super) fn nll(p: &ModelParams, obs: &[Obs]) -> Result<f64> {
    let mut total = 0.0;
    for o in obs {
        let (upper, lower) = bounds_for(&p.thresholds, level(o));
        let eta = o.offset + p.mu + p.tau * o.z;
        let t = interval_term(DIST, upper - eta, lower - eta)
            .ok_or_else(|| HteError::Evaluation(format!("zero probability for ordinal level {}", level(o))))?;
        total += o.weight * t.value;
    }
    Ok(total)
}

pub(super) fn score(p: &ModelParams, obs: &[Obs]) -> Result<Vec<[f64; 2]>> {
    obs.iter()
        .map(|o| {
            let (upper, lower) = bounds_for(&p.thresholds, level(o));
            let eta = o.offset + p.mu + p.tau * o.z;
            let t = interval_term(DIST, upper - eta, lower - eta)
                .ok_or_else(|| HteError::Evaluation(format!("zero probability for ordinal level {}", level(o))))?;
            let s = t.d_upper + t.d_lower;
            Ok([s, s * o.z])
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::super::{fit_obs, ModelFamily};
    use super::*;

    fn quarter_thresholds() -> Vec<f64> {
        (1..4).map(|k| logit(k as f64 / 4.0)).collect()
    }

    fn obs(level: usize, z: f64) -> Obs {
        Obs {
            y: Response::Ordinal(level),
            z,
            offset: 0.0,
            weight: 1.0,
        }
    }

    #[test]
    fn equal_quarters_at_zero() {
        let p = ModelParams {
            thresholds: quarter_thresholds(),
            ..ModelParams::new(0.0, 0.0)
        };
        let v = nll(&p, &[obs(1, 1.0)]).unwrap();
        assert!((v + 0.25f64.ln()).abs() < 1e-14);
        for probs in [category_probabilities(&p.thresholds, 0.0)] {
            for q in probs {
                assert!((q - 0.25).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn probabilities_sum_to_one() {
        let th = quarter_thresholds();
        for eta in [-50.0, -3.0, 0.0, 0.7, 12.0, 45.0] {
            let s: f64 = category_probabilities(&th, eta).iter().sum();
            assert!((s - 1.0).abs() < 1e-12, "eta {eta}: {s}");
        }
    }

    #[test]
    fn empty_middle_level_collapses_thresholds() {
        let mut data = Vec::new();
        for i in 0..40 {
            let z = (i % 2) as f64;
            let l = [1, 2, 4][i % 3];
            data.push(obs(l, z));
        }
        let f = fit_obs(ModelFamily::ProportionalOdds { levels: 4 }, &data).unwrap();
        let th = &f.params.thresholds;
        assert_eq!(th.len(), 3);
        assert_eq!(th[1], th[2]);
        assert!(th[0] < th[1]);
        assert!(nll(&f.params, &data).unwrap().is_finite());
    }

    #[test]
    fn single_level_is_degenerate() {
        let data: Vec<Obs> = (0..10).map(|i| obs(3, (i % 2) as f64)).collect();
        let f = fit_obs(ModelFamily::ProportionalOdds { levels: 4 }, &data).unwrap();
        assert!(f.degenerate);
        assert_eq!(f.params.tau, 0.0);
    }
}
