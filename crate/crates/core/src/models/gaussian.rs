use super::{ModelParams, NodeFit, Obs, Response};
use crate::error::Result;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

fn y(o: &Obs) -> f64 {
    match o.y {
        Response::Continuous(v) => v,
        _ => unreachable!("gaussian family on non-continuous outcome"),
    }
}

/// Closed-form weighted least squares of `y - offset` on `(1, z)`; `phi` is the ML scale.
pub(super) fn fit(obs: &[Obs]) -> Result<NodeFit> {
    let sw: f64 = obs.iter().map(|o| o.weight).sum();
    let zbar = obs.iter().map(|o| o.weight * o.z).sum::<f64>() / sw;
    let ybar = obs.iter().map(|o| o.weight * (y(o) - o.offset)).sum::<f64>() / sw;
    let (mut szz, mut szy) = (0.0, 0.0);
    for o in obs {
        let dz = o.z - zbar;
        szz += o.weight * dz * dz;
        szy += o.weight * dz * (y(o) - o.offset - ybar);
    }
    let tau = szy / szz;
    let mu = ybar - tau * zbar;
    let (mut rss, mut scale) = (0.0, 0.0);
    for o in obs {
        let yt = y(o) - o.offset;
        let r = yt - mu - tau * o.z;
        rss += o.weight * r * r;
        scale += o.weight * yt * yt;
    }
    let floor = 1e-20 * (scale / sw).max(1.0);
    let mut phi2 = rss / sw;
    let degenerate = phi2 <= floor;
    if degenerate {
        phi2 = floor;
    }
    let params = ModelParams {
        phi: Some(phi2.sqrt()),
        ..ModelParams::new(mu, tau)
    };
    let neg_log_lik = nll(&params, obs);
    Ok(NodeFit {
        params,
        neg_log_lik,
        iterations: 1,
        capped: false,
        degenerate,
    })
}

pub(super) fn nll(p: &ModelParams, obs: &[Obs]) -> f64 {
    let phi = p.phi.expect("checked");
    obs.iter()
        .map(|o| {
            let r = y(o) - o.offset - p.mu - p.tau * o.z;
            o.weight * (HALF_LN_2PI + phi.ln() + r * r / (2.0 * phi * phi))
        })
        .sum()
}

pub(super) fn score(p: &ModelParams, obs: &[Obs]) -> Vec<[f64; 2]> {
    let phi2 = p.phi.expect("checked").powi(2);
    obs.iter()
        .map(|o| {
            let r = (y(o) - o.offset - p.mu - p.tau * o.z) / phi2;
            [r, r * o.z]
        })
        .collect()
}
