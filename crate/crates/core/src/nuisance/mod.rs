//! First-stage estimates: propensities, arm-wise linear predictors, offsets
//! and the variance-weighted centering used by the Gao variants.

mod boost;
mod propensity;

pub use boost::{fit_boosting, pooled_thresholds, BoostConfig, BoostLoss, BoostedModel};
pub use propensity::{estimate_propensity, PropensityConfig};

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{CenteredDesign, Dataset, OutcomeValue, Variant};
use crate::error::{HteError, Result};
use crate::math::{derive_seed, expit};
use crate::models::{self, ModelFamily, Obs, Response};

pub const CLIP: f64 = 0.01;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NuisanceConfig {
    pub propensity: PropensityConfig,
    pub boost: BoostConfig,
    /// Regress the outcome on the covariates directly for the Gaussian offset
    /// instead of composing it from the two arm predictors.
    pub direct_gaussian_m: bool,
}

/// Per-sample first-stage quantities for one training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NuisanceProfile {
    pub family: ModelFamily,
    pub pi: Vec<f64>,
    pub eta0: Vec<f64>,
    pub eta1: Vec<f64>,
    pub m: Vec<f64>,
    /// Gao centering weight; absent for families without a derivation.
    pub a: Option<Vec<f64>>,
    pub nu: Option<Vec<f64>>,
    /// Probability of an uncensored observation under control and treatment.
    pub uncensored_prob: Option<Vec<[f64; 2]>>,
}

impl NuisanceProfile {
    pub fn len(&self) -> usize {
        self.pi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pi.is_empty()
    }

    /// Profile dump, one row per training sample.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut wtr = csv::Writer::from_path(path)?;
        wtr.write_record(["pi", "eta0", "eta1", "m", "a", "nu", "uncensored0", "uncensored1"])?;
        let opt = |v: &Option<Vec<f64>>, i: usize| v.as_ref().map_or(String::new(), |v| format!("{:?}", v[i]));
        for i in 0..self.len() {
            let (u0, u1) = self
                .uncensored_prob
                .as_ref()
                .map_or((String::new(), String::new()), |u| {
                    (format!("{:?}", u[i][0]), format!("{:?}", u[i][1]))
                });
            wtr.write_record([
                format!("{:?}", self.pi[i]),
                format!("{:?}", self.eta0[i]),
                format!("{:?}", self.eta1[i]),
                format!("{:?}", self.m[i]),
                opt(&self.a, i),
                opt(&self.nu, i),
                u0,
                u1,
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// `m = pi eta1 + (1 - pi) eta0`, elementwise.
pub fn compute_offsets(pi: &[f64], eta0: &[f64], eta1: &[f64]) -> Vec<f64> {
    pi.iter()
        .zip(eta0.iter().zip(eta1))
        .map(|(&p, (&e0, &e1))| p * e1 + (1.0 - p) * e0)
        .collect()
}

/// Gao centering weights `a(x)`, clipped to `[0.01, 0.99]`.
pub fn compute_gao_weights(
    pi: &[f64],
    eta0: &[f64],
    eta1: &[f64],
    family: ModelFamily,
    uncensored_prob: Option<&[[f64; 2]]>,
) -> Result<Vec<f64>> {
    let raw: Vec<f64> = match family {
        ModelFamily::LinearGaussian => pi.to_vec(),
        ModelFamily::BinomialLogit => pi
            .iter()
            .zip(eta0.iter().zip(eta1))
            .map(|(&p, (&e0, &e1))| {
                let (p0, p1) = (expit(e0), expit(e1));
                let ratio = (p0 * (1.0 - p0)) / (p1 * (1.0 - p1));
                p / (p + (1.0 - p) * ratio)
            })
            .collect(),
        ModelFamily::CoxPartial => {
            let probs = uncensored_prob
                .ok_or_else(|| HteError::Argument("cox centering weights need uncensored probabilities".into()))?;
            pi.iter()
                .zip(probs)
                .map(|(&p, &[q0, q1])| p * q1 / (p * q1 + (1.0 - p) * q0))
                .collect()
        }
        other => {
            return Err(HteError::UnsupportedVariant {
                variant: "gao".into(),
                family: other.name(),
            })
        }
    };
    Ok(raw
        .into_iter()
        .map(|a| if a.is_nan() { 0.5 } else { a.clamp(CLIP, 1.0 - CLIP) })
        .collect())
}

fn arm_rows(data: &Dataset) -> [Vec<usize>; 2] {
    let mut rows = [Vec::new(), Vec::new()];
    for (i, s) in data.samples().iter().enumerate() {
        rows[s.treatment as usize].push(i);
    }
    rows
}

fn predict_all(model: &BoostedModel, data: &Dataset) -> Vec<f64> {
    data.samples().iter().map(|s| model.predict(&s.covariates)).collect()
}

/// Shift that puts the treated arm's partial-likelihood predictor on the
/// control arm's scale: a pooled Cox fit with offset `eta_w` and regressor `w`.
fn align_survival_arms(data: &Dataset, eta0: &[f64], eta1: &mut [f64]) -> Result<()> {
    let obs: Vec<Obs> = data
        .samples()
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let OutcomeValue::Survival { time, event } = s.outcome else {
                unreachable!("checked by the loss");
            };
            let w = s.treatment as f64;
            Obs {
                y: Response::Survival {
                    time,
                    log_time: time.ln(),
                    event,
                },
                z: w,
                offset: if s.treatment == 1 { eta1[i] } else { eta0[i] },
                weight: 1.0,
            }
        })
        .collect();
    let fit = models::fit_obs(ModelFamily::CoxPartial, &obs)?;
    let shift = fit.params.tau;
    eta1.iter_mut().for_each(|e| *e += shift);
    Ok(())
}

/// Boosted arm-wise predictors `(eta0, eta1)` evaluated for every sample.
pub fn estimate_arm_predictors(
    data: &Dataset,
    family: ModelFamily,
    cfg: &BoostConfig,
    seed: u64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    data.require_both_arms()?;
    let loss = BoostLoss::for_family(family, data)?;
    let [rows0, rows1] = arm_rows(data);
    let m0 = fit_boosting(data, &rows0, &loss, cfg, derive_seed(&[seed, 0]))?;
    let m1 = fit_boosting(data, &rows1, &loss, cfg, derive_seed(&[seed, 1]))?;
    let eta0 = predict_all(&m0, data);
    let mut eta1 = predict_all(&m1, data);
    if loss == BoostLoss::Cox {
        align_survival_arms(data, &eta0, &mut eta1)?;
    }
    Ok((eta0, eta1))
}

/// Per-arm probabilities of observing the event, `P(C >= Y | x, W = w)`,
/// from boosted logistic models on the event indicator. Clipped below at 0.01.
pub fn estimate_uncensored_prob(data: &Dataset, cfg: &BoostConfig, seed: u64) -> Result<Vec<[f64; 2]>> {
    if data
        .samples()
        .iter()
        .any(|s| !matches!(s.outcome, OutcomeValue::Survival { .. }))
    {
        return Err(HteError::Validation(
            "uncensored probabilities need survival outcomes".into(),
        ));
    }
    data.require_both_arms()?;
    let rows = arm_rows(data);
    let mut out = vec![[0.0; 2]; data.n()];
    for (w, arm) in rows.iter().enumerate() {
        let events = arm
            .iter()
            .filter(|&&i| matches!(data.samples()[i].outcome, OutcomeValue::Survival { event: true, .. }))
            .count();
        if events == 0 {
            log::warn!("arm {w} is fully censored; uncensored probabilities clipped at {CLIP}");
        }
        let model = fit_boosting(
            data,
            arm,
            &BoostLoss::Binomial,
            cfg,
            derive_seed(&[seed, 10 + w as u64]),
        )?;
        for (i, s) in data.samples().iter().enumerate() {
            out[i][w] = expit(model.predict(&s.covariates)).clamp(CLIP, 1.0);
        }
    }
    Ok(out)
}

/// All first-stage quantities for `data` under `family`.
pub fn estimate_profile(
    data: &Dataset,
    family: ModelFamily,
    cfg: &NuisanceConfig,
    seed: u64,
) -> Result<NuisanceProfile> {
    if !family.accepts(data.outcome_kind()) {
        return Err(HteError::Validation(format!(
            "family {family} cannot model {} outcomes",
            data.outcome_kind()
        )));
    }
    let pi = estimate_propensity(data, &cfg.propensity, derive_seed(&[seed, 1]))?;
    let (eta0, eta1) = estimate_arm_predictors(data, family, &cfg.boost, derive_seed(&[seed, 2]))?;
    let m = if cfg.direct_gaussian_m && family == ModelFamily::LinearGaussian {
        let rows: Vec<usize> = (0..data.n()).collect();
        let model = fit_boosting(data, &rows, &BoostLoss::Squared, &cfg.boost, derive_seed(&[seed, 3]))?;
        predict_all(&model, data)
    } else {
        compute_offsets(&pi, &eta0, &eta1)
    };
    let uncensored_prob = if family == ModelFamily::CoxPartial {
        Some(estimate_uncensored_prob(data, &cfg.boost, derive_seed(&[seed, 4]))?)
    } else {
        None
    };
    let a = match family {
        ModelFamily::LinearGaussian | ModelFamily::BinomialLogit | ModelFamily::CoxPartial => Some(
            compute_gao_weights(&pi, &eta0, &eta1, family, uncensored_prob.as_deref())?,
        ),
        _ => None,
    };
    let nu = a.as_ref().map(|a| compute_offsets(a, &eta0, &eta1));
    Ok(NuisanceProfile {
        family,
        pi,
        eta0,
        eta1,
        m,
        a,
        nu,
        uncensored_prob,
    })
}

/// Treatment regressor and offset for `variant`. `Naive` ignores the profile.
pub fn build_design(variant: Variant, data: &Dataset, profile: Option<&NuisanceProfile>) -> Result<CenteredDesign> {
    if variant == Variant::Naive {
        return Ok(CenteredDesign::naive(data));
    }
    let profile = profile.ok_or_else(|| HteError::Argument(format!("variant {variant} needs a nuisance profile")))?;
    if profile.len() != data.n() {
        return Err(HteError::Argument(format!(
            "profile has {} rows, dataset has {}",
            profile.len(),
            data.n()
        )));
    }
    let w = data.treatment();
    let zeros = vec![0.0; data.n()];
    let centered = |by: &[f64]| -> Vec<f64> { w.iter().zip(by).map(|(w, c)| w - c).collect() };
    let gao = || {
        profile
            .a
            .as_ref()
            .zip(profile.nu.as_ref())
            .ok_or_else(|| HteError::UnsupportedVariant {
                variant: variant.name().into(),
                family: profile.family.name(),
            })
    };
    match variant {
        Variant::Naive => unreachable!(),
        Variant::RobinsonW => CenteredDesign::new(centered(&profile.pi), zeros, variant),
        Variant::Robinson => CenteredDesign::new(centered(&profile.pi), profile.m.clone(), variant),
        Variant::GaoW => {
            let (a, _) = gao()?;
            CenteredDesign::new(centered(a), zeros, variant)
        }
        Variant::Gao => {
            let (a, nu) = gao()?;
            CenteredDesign::new(centered(a), nu.clone(), variant)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn offset_examples() {
        assert_eq!(compute_offsets(&[0.5], &[1.0], &[3.0]), vec![2.0]);
        assert_eq!(compute_offsets(&[1.0], &[-4.0], &[3.0]), vec![3.0]);
        assert!((compute_offsets(&[0.3], &[0.0], &[1.0])[0] - 0.3).abs() < 1e-15);
    }

    #[test]
    fn binomial_gao_weight_by_hand() {
        let a = compute_gao_weights(
            &[0.5],
            &[0.0],
            &[crate::math::logit(0.1)],
            ModelFamily::BinomialLogit,
            None,
        )
        .unwrap();
        let expected = 0.5 / (0.5 + 0.5 * (0.25 / 0.09));
        assert!((a[0] - expected).abs() < 1e-12);
        assert!((a[0] - 0.2647).abs() < 1e-4);
    }

    #[test]
    fn equal_arm_factors_give_pi() {
        let pi = [0.2, 0.7];
        let a = compute_gao_weights(&pi, &[0.4, -1.0], &[0.4, -1.0], ModelFamily::BinomialLogit, None).unwrap();
        assert!((a[0] - 0.2).abs() < 1e-15 && (a[1] - 0.7).abs() < 1e-15);
        let probs = [[0.6, 0.6], [0.3, 0.3]];
        let a = compute_gao_weights(&pi, &[0.0; 2], &[0.0; 2], ModelFamily::CoxPartial, Some(&probs)).unwrap();
        assert!((a[0] - 0.2).abs() < 1e-15 && (a[1] - 0.7).abs() < 1e-15);
    }

    #[test]
    fn ordinal_and_weibull_have_no_gao_weights() {
        for family in [ModelFamily::ProportionalOdds { levels: 4 }, ModelFamily::WeibullPH] {
            assert!(matches!(
                compute_gao_weights(&[0.5], &[0.0], &[0.0], family, None),
                Err(HteError::UnsupportedVariant { .. })
            ));
        }
    }
}
