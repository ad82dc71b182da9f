//! Base-model likelihoods fitted in every tree node and at every forest query.
//!
//! All families share the linear predictor `eta = offset + mu + tau * z`,
//! where `z` is the (possibly centered) treatment regressor. For the
//! transformation families (proportional odds, Weibull, Cox) `mu` is fixed
//! at zero because the transformation function carries the intercept, and
//! the outcome distribution is `P(Y <= y) = F(h(y) - eta)`.

mod binomial;
mod cox;
mod gaussian;
mod newton;
mod ordinal;
mod weibull;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{CenteredDesign, Dataset, OutcomeKind, OutcomeValue};
use crate::error::{HteError, Result};
use crate::math::expit;

pub use ordinal::category_probabilities;

/// Bound on |mu| and |tau| for families that can separate.
pub const PARAM_CAP: f64 = 15.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelFamily {
    /// Identity link, normal errors with scale `phi`.
    LinearGaussian,
    /// Logit link for 0/1 outcomes.
    BinomialLogit,
    /// Cumulative logit model with `levels` ordered categories.
    ProportionalOdds { levels: usize },
    /// `h(y) = nu1 + nu2 log(y)` with the minimum extreme value inverse link.
    WeibullPH,
    /// Cox partial likelihood (Breslow ties).
    CoxPartial,
}

impl ModelFamily {
    pub fn name(&self) -> String {
        match self {
            ModelFamily::LinearGaussian => "normal".into(),
            ModelFamily::BinomialLogit => "binomial".into(),
            ModelFamily::ProportionalOdds { levels } => format!("ordinal{levels}"),
            ModelFamily::WeibullPH => "weibull".into(),
            ModelFamily::CoxPartial => "cox".into(),
        }
    }

    /// Whether the prognostic intercept `mu` is a free parameter.
    pub fn has_free_mu(&self) -> bool {
        matches!(self, ModelFamily::LinearGaussian | ModelFamily::BinomialLogit)
    }

    pub fn accepts(&self, kind: OutcomeKind) -> bool {
        match (self, kind) {
            (ModelFamily::LinearGaussian, OutcomeKind::Continuous) => true,
            (ModelFamily::BinomialLogit, OutcomeKind::Binary) => true,
            (ModelFamily::ProportionalOdds { levels }, OutcomeKind::Ordinal { levels: k }) => *levels == k,
            (ModelFamily::WeibullPH, OutcomeKind::Survival | OutcomeKind::Interval) => true,
            (ModelFamily::CoxPartial, OutcomeKind::Survival) => true,
            _ => false,
        }
    }

    /// Derivative of the inverse canonical link (the variance function) at `eta`,
    /// defined for the exponential-family members only.
    pub fn canonical_variance(&self, eta: f64) -> Option<f64> {
        match self {
            ModelFamily::LinearGaussian => Some(1.0),
            ModelFamily::BinomialLogit => {
                let p = expit(eta);
                Some(p * (1.0 - p))
            }
            _ => None,
        }
    }

    /// Inverse link applied to the linear predictor (mean scale), where one exists.
    pub fn inverse_link(&self, eta: f64) -> Option<f64> {
        match self {
            ModelFamily::LinearGaussian => Some(eta),
            ModelFamily::BinomialLogit => Some(expit(eta)),
            _ => None,
        }
    }
}

impl fmt::Display for ModelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for ModelFamily {
    type Err = HteError;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase();
        match key.as_str() {
            "normal" | "gaussian" | "linear" => Ok(ModelFamily::LinearGaussian),
            "binomial" | "logit" | "binary" => Ok(ModelFamily::BinomialLogit),
            "weibull" => Ok(ModelFamily::WeibullPH),
            "cox" => Ok(ModelFamily::CoxPartial),
            "multinomial" | "ordinal" | "polr" => Ok(ModelFamily::ProportionalOdds { levels: 4 }),
            other => {
                let digits = other
                    .strip_prefix("ordinal")
                    .or_else(|| other.strip_prefix("multinomial"));
                match digits.and_then(|d| d.parse::<usize>().ok()) {
                    Some(levels) if levels >= 2 => Ok(ModelFamily::ProportionalOdds { levels }),
                    _ => Err(HteError::Argument(format!("unknown family '{s}'"))),
                }
            }
        }
    }
}

/// Fitted node parameters. Fields that a family does not use are `None`/empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub mu: f64,
    pub tau: f64,
    /// Gaussian scale.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi: Option<f64>,
    /// Proportional-odds thresholds `theta_1 <= ... <= theta_{K-1}`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub thresholds: Vec<f64>,
    /// Weibull transformation `h(y) = nu[0] + nu[1] log(y)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nu: Option<[f64; 2]>,
}

impl ModelParams {
    pub fn new(mu: f64, tau: f64) -> Self {
        ModelParams {
            mu,
            tau,
            phi: None,
            thresholds: Vec::new(),
            nu: None,
        }
    }

    pub fn check(&self, family: ModelFamily) -> Result<()> {
        if !self.mu.is_finite() || !self.tau.is_finite() {
            return Err(HteError::Argument("non-finite mu or tau".into()));
        }
        match family {
            ModelFamily::LinearGaussian => match self.phi {
                Some(phi) if phi > 0.0 => Ok(()),
                _ => Err(HteError::Argument("gaussian scale phi must be positive".into())),
            },
            ModelFamily::ProportionalOdds { levels } => {
                if self.thresholds.len() != levels - 1 {
                    return Err(HteError::Argument(format!(
                        "expected {} thresholds, got {}",
                        levels - 1,
                        self.thresholds.len()
                    )));
                }
                if self.thresholds.windows(2).any(|w| w[1] < w[0]) {
                    return Err(HteError::Argument("thresholds must be increasing".into()));
                }
                Ok(())
            }
            ModelFamily::WeibullPH => match self.nu {
                Some([a, b]) if a.is_finite() && b > 0.0 => Ok(()),
                _ => Err(HteError::Argument("weibull needs nu2 > 0".into())),
            },
            _ => Ok(()),
        }
    }
}

/// Result of a weighted maximum-likelihood fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeFit {
    pub params: ModelParams,
    pub neg_log_lik: f64,
    pub iterations: usize,
    /// A parameter stopped at its cap (separation or monotone likelihood).
    pub capped: bool,
    /// The data are fitted exactly (zero residual scale, single observed category,
    /// no events); scores carry no information for splitting.
    pub degenerate: bool,
}

/// Per-observation log-likelihood gradients with respect to `(mu, tau)`.
///
/// Rows are per unit weight, so the weighted total gradient is
/// `sum_i weight_i * row_i`. For families with `mu` fixed at zero the first
/// column is the derivative with respect to a constant shift of the linear
/// predictor (negative martingale residuals for the survival families).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScoreMatrix {
    pub rows: Vec<[f64; 2]>,
}

impl ScoreMatrix {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn column_sums(&self) -> [f64; 2] {
        self.rows
            .iter()
            .fold([0.0, 0.0], |acc, r| [acc[0] + r[0], acc[1] + r[1]])
    }
}

/// Response prepared for likelihood evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Response {
    Continuous(f64),
    Binary(f64),
    Ordinal(usize),
    /// `log_time` cached for the Weibull transformation.
    Survival {
        time: f64,
        log_time: f64,
        event: bool,
    },
    Interval {
        lower: f64,
        upper: f64,
    },
}

impl Response {
    fn from_outcome(o: &OutcomeValue) -> Response {
        match *o {
            OutcomeValue::Continuous { value } => Response::Continuous(value),
            OutcomeValue::Binary { value } => Response::Binary(if value { 1.0 } else { 0.0 }),
            OutcomeValue::Ordinal { level, .. } => Response::Ordinal(level),
            OutcomeValue::Survival { time, event } => Response::Survival {
                time,
                log_time: time.ln(),
                event,
            },
            OutcomeValue::Interval { lower, upper } => Response::Interval { lower, upper },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Obs {
    pub y: Response,
    pub z: f64,
    pub offset: f64,
    pub weight: f64,
}

/// Unit-weight observations of a dataset under one design.
pub(crate) fn prepare_obs(family: ModelFamily, data: &Dataset, design: &CenteredDesign) -> Result<Vec<Obs>> {
    if !family.accepts(data.outcome_kind()) {
        return Err(HteError::Validation(format!(
            "family {family} cannot model {} outcomes",
            data.outcome_kind()
        )));
    }
    if design.len() != data.n() {
        return Err(HteError::Argument(format!(
            "design has {} rows, dataset has {}",
            design.len(),
            data.n()
        )));
    }
    Ok(data
        .samples()
        .iter()
        .zip(design.regressor().iter().zip(design.offset()))
        .map(|(s, (&z, &offset))| Obs {
            y: Response::from_outcome(&s.outcome),
            z,
            offset,
            weight: 1.0,
        })
        .collect())
}

fn weighted_obs(family: ModelFamily, data: &Dataset, weights: &[f64], design: &CenteredDesign) -> Result<Vec<Obs>> {
    if weights.len() != data.n() {
        return Err(HteError::Argument(format!(
            "{} weights for {} samples",
            weights.len(),
            data.n()
        )));
    }
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(HteError::Argument("weights must be finite and non-negative".into()));
    }
    let mut obs = prepare_obs(family, data, design)?;
    for (o, &w) in obs.iter_mut().zip(weights) {
        o.weight = w;
    }
    Ok(obs)
}

/// Weighted variance check on the treatment regressor.
pub(crate) fn check_regressor_variation(obs: &[Obs]) -> Result<()> {
    let sw: f64 = obs.iter().map(|o| o.weight).sum();
    if !(sw > 0.0) {
        return Err(HteError::Argument("sum of weights must be positive".into()));
    }
    let zbar = obs.iter().map(|o| o.weight * o.z).sum::<f64>() / sw;
    let szz = obs.iter().map(|o| o.weight * (o.z - zbar) * (o.z - zbar)).sum::<f64>() / sw;
    if !(szz > 1e-12 * (1.0 + zbar * zbar)) {
        return Err(HteError::RankDeficient);
    }
    Ok(())
}

/// Weighted maximum likelihood on prepared observations. Zero-weight rows are ignored.
pub(crate) fn fit_obs(family: ModelFamily, obs: &[Obs]) -> Result<NodeFit> {
    let active: Vec<Obs>;
    let obs = if obs.iter().any(|o| o.weight == 0.0) {
        active = obs.iter().copied().filter(|o| o.weight > 0.0).collect();
        &active[..]
    } else {
        obs
    };
    check_regressor_variation(obs)?;
    match family {
        ModelFamily::LinearGaussian => gaussian::fit(obs),
        ModelFamily::BinomialLogit => binomial::fit(obs),
        ModelFamily::ProportionalOdds { levels } => ordinal::fit(obs, levels),
        ModelFamily::WeibullPH => weibull::fit(obs),
        ModelFamily::CoxPartial => cox::fit(obs),
    }
}

pub(crate) fn nll_obs(family: ModelFamily, params: &ModelParams, obs: &[Obs]) -> Result<f64> {
    params.check(family)?;
    let value = match family {
        ModelFamily::LinearGaussian => gaussian::nll(params, obs),
        ModelFamily::BinomialLogit => binomial::nll(params, obs),
        ModelFamily::ProportionalOdds { .. } => ordinal::nll(params, obs)?,
        ModelFamily::WeibullPH => weibull::nll(params, obs)?,
        ModelFamily::CoxPartial => cox::nll(params, obs),
    };
    if value.is_finite() {
        Ok(value)
    } else {
        Err(HteError::Evaluation(format!("negative log-likelihood is {value}")))
    }
}

pub(crate) fn score_obs(family: ModelFamily, params: &ModelParams, obs: &[Obs]) -> Result<ScoreMatrix> {
    params.check(family)?;
    let rows = match family {
        ModelFamily::LinearGaussian => gaussian::score(params, obs),
        ModelFamily::BinomialLogit => binomial::score(params, obs),
        ModelFamily::ProportionalOdds { .. } => ordinal::score(params, obs)?,
        ModelFamily::WeibullPH => weibull::score(params, obs)?,
        ModelFamily::CoxPartial => cox::score(params, obs),
    };
    Ok(ScoreMatrix { rows })
}

/// Weighted maximum-likelihood estimate of all free parameters.
///
/// The offset enters the linear predictor additively. Newton iterations stop
/// when the largest free gradient component falls below `1e-8`; families
/// that separate return with `capped = true` instead of failing.
pub fn fit_node(family: ModelFamily, data: &Dataset, weights: &[f64], design: &CenteredDesign) -> Result<NodeFit> {
    let obs = weighted_obs(family, data, weights, design)?;
    fit_obs(family, &obs)
}

/// Weighted negative log-likelihood (negative log partial likelihood for Cox).
pub fn neg_log_lik(
    family: ModelFamily,
    params: &ModelParams,
    data: &Dataset,
    weights: &[f64],
    design: &CenteredDesign,
) -> Result<f64> {
    let obs = weighted_obs(family, data, weights, design)?;
    nll_obs(family, params, &obs)
}

/// Unit-weight per-observation scores.
pub fn score(
    family: ModelFamily,
    params: &ModelParams,
    data: &Dataset,
    design: &CenteredDesign,
) -> Result<ScoreMatrix> {
    let obs = prepare_obs(family, data, design)?;
    score_obs(family, params, &obs)
}

/// Difference in natural parameters, `eta1 - eta0`.
pub fn dina(eta0: f64, eta1: f64) -> f64 {
    eta1 - eta0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn family_names_round_trip() {
        for f in [
            ModelFamily::LinearGaussian,
            ModelFamily::BinomialLogit,
            ModelFamily::ProportionalOdds { levels: 4 },
            ModelFamily::ProportionalOdds { levels: 7 },
            ModelFamily::WeibullPH,
            ModelFamily::CoxPartial,
        ] {
            assert_eq!(f.name().parse::<ModelFamily>().unwrap(), f);
        }
        assert!("poisson".parse::<ModelFamily>().is_err());
    }

    #[test]
    fn dina_examples() {
        assert_eq!(dina(1.0, 1.0), 0.0);
        assert_eq!(dina(0.0, 0.7), 0.7);
    }

    #[test]
    fn binomial_variance_is_positive() {
        for eta in [-30.0, -2.0, 0.0, 5.0, 30.0] {
            assert!(ModelFamily::BinomialLogit.canonical_variance(eta).unwrap() > 0.0);
        }
    }
}
