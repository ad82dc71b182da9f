//! Gradient boosting with shallow regression trees and family losses.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cart::{CartParams, RegressionTree};
use crate::data::{Dataset, OutcomeValue};
use crate::error::{HteError, Result};
use crate::math::{expit, interval_term, log1pexp, logit, LinkDist};
use crate::models::{self, ModelFamily, ModelParams, Obs, Response};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoostConfig {
    pub n_rounds: usize,
    pub learning_rate: f64,
    pub max_tree_depth: usize,
    /// Smallest leaf of each base learner.
    pub min_leaf: usize,
}

impl Default for BoostConfig {
    fn default() -> Self {
        BoostConfig {
            n_rounds: 100,
            learning_rate: 0.1,
            max_tree_depth: 2,
            min_leaf: 10,
        }
    }
}

impl BoostConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_rounds == 0 {
            return Err(HteError::Argument("n_rounds must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(HteError::Argument("learning_rate must lie in (0, 1]".into()));
        }
        if self.max_tree_depth == 0 {
            return Err(HteError::Argument("max_tree_depth must be at least 1".into()));
        }
        Ok(())
    }
}

/// Loss on the linear-predictor scale of the matching node model.
#[derive(Debug, Clone, PartialEq)]
pub enum BoostLoss {
    Squared,
    Binomial,
    /// Cumulative logit with thresholds held fixed.
    Ordinal {
        thresholds: Vec<f64>,
    },
    /// Negative log partial likelihood; hazard proportional to `exp(-eta)`.
    Cox,
}

impl BoostLoss {
    /// Loss matched to a node family; Weibull data are boosted with the Cox loss.
    pub fn for_family(family: ModelFamily, data: &Dataset) -> Result<BoostLoss> {
        match family {
            ModelFamily::LinearGaussian => Ok(BoostLoss::Squared),
            ModelFamily::BinomialLogit => Ok(BoostLoss::Binomial),
            ModelFamily::ProportionalOdds { levels } => Ok(BoostLoss::Ordinal {
                thresholds: pooled_thresholds(data, levels),
            }),
            ModelFamily::WeibullPH | ModelFamily::CoxPartial => {
                if data
                    .samples()
                    .iter()
                    .any(|s| !matches!(s.outcome, OutcomeValue::Survival { .. }))
                {
                    return Err(HteError::Validation(
                        "nuisance models need right-censored survival outcomes".into(),
                    ));
                }
                Ok(BoostLoss::Cox)
            }
        }
    }
}

/// Cumulative-logit thresholds from the marginal level frequencies.
pub fn pooled_thresholds(data: &Dataset, levels: usize) -> Vec<f64> {
    let mut counts = vec![0.0; levels + 1];
    for s in data.samples() {
        if let OutcomeValue::Ordinal { level, .. } = s.outcome {
            counts[level.min(levels)] += 1.0;
        }
    }
    let n: f64 = counts.iter().sum();
    let mut cum = 0.0;
    let mut out: Vec<f64> = Vec::with_capacity(levels - 1);
    for &c in &counts[1..levels] {
        cum += c;
        let mut t = logit((cum / n).clamp(1e-3, 1.0 - 1e-3));
        if let Some(&prev) = out.last() {
            t = t.max(prev + 1e-3);
        }
        out.push(t);
    }
    out
}

/// One arm's responses, prepared for loss evaluation.
struct ArmData {
    rows: Vec<usize>,
    outcome: Vec<OutcomeValue>,
}

impl ArmData {
    fn cox_obs(&self, eta: &[f64]) -> Vec<Obs> {
        self.outcome
            .iter()
            .zip(eta)
            .map(|(o, &e)| {
                let OutcomeValue::Survival { time, event } = *o else {
                    unreachable!("cox loss on non-survival outcome");
                };
                Obs {
                    y: Response::Survival {
                        time,
                        log_time: time.ln(),
                        event,
                    },
                    z: 0.0,
                    offset: e,
                    weight: 1.0,
                }
            })
            .collect()
    }
}

fn y_value(o: &OutcomeValue) -> f64 {
    match *o {
        OutcomeValue::Continuous { value } => value,
        OutcomeValue::Binary { value } => value as u8 as f64,
        OutcomeValue::Ordinal { level, .. } => level as f64,
        OutcomeValue::Survival { event, .. } => event as u8 as f64,
        OutcomeValue::Interval { .. } => f64::NAN,
    }
}

impl BoostLoss {
    fn initial(&self, arm: &ArmData) -> f64 {
        let n = arm.outcome.len() as f64;
        match self {
            BoostLoss::Squared => arm.outcome.iter().map(y_value).sum::<f64>() / n,
            BoostLoss::Binomial => {
                let rate = arm.outcome.iter().map(y_value).sum::<f64>() / n;
                logit(rate.clamp(0.01, 0.99))
            }
            BoostLoss::Ordinal { .. } | BoostLoss::Cox => 0.0,
        }
    }

    fn ordinal_term(thresholds: &[f64], o: &OutcomeValue, eta: f64) -> Option<crate::math::IntervalTerm> {
        let OutcomeValue::Ordinal { level, .. } = *o else {
            return None;
        };
        let k = thresholds.len() + 1;
        let upper = if level >= k {
            f64::INFINITY
        } else {
            thresholds[level - 1] - eta
        };
        let lower = if level <= 1 {
            f64::NEG_INFINITY
        } else {
            thresholds[level - 2] - eta
        };
        interval_term(LinkDist::Logistic, upper, lower)
    }

    fn value(&self, arm: &ArmData, eta: &[f64]) -> f64 {
        match self {
            BoostLoss::Squared => arm
                .outcome
                .iter()
                .zip(eta)
                .map(|(o, e)| 0.5 * (y_value(o) - e).powi(2))
                .sum(),
            BoostLoss::Binomial => arm
                .outcome
                .iter()
                .zip(eta)
                .map(|(o, &e)| log1pexp(e) - y_value(o) * e)
                .sum(),
            BoostLoss::Ordinal { thresholds } => arm
                .outcome
                .iter()
                .zip(eta)
                .map(|(o, &e)| Self::ordinal_term(thresholds, o, e).map_or(f64::INFINITY, |t| t.value))
                .sum(),
            BoostLoss::Cox => {
                let obs = arm.cox_obs(eta);
                models::nll_obs(ModelFamily::CoxPartial, &ModelParams::new(0.0, 0.0), &obs).unwrap_or(f64::INFINITY)
            }
        }
    }

    /// Negative gradient and a positive curvature for each observation.
    pub fn gradient(&self, outcome: &[OutcomeValue], eta: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let arm = ArmData {
            rows: Vec::new(),
            outcome: outcome.to_vec(),
        };
        self.gradient_arm(&arm, eta)
    }

    fn gradient_arm(&self, arm: &ArmData, eta: &[f64]) -> (Vec<f64>, Vec<f64>) {
        match self {
            BoostLoss::Squared => (
                arm.outcome.iter().zip(eta).map(|(o, e)| y_value(o) - e).collect(),
                vec![1.0; eta.len()],
            ),
            BoostLoss::Binomial => arm
                .outcome
                .iter()
                .zip(eta)
                .map(|(o, &e)| {
                    let p = expit(e);
                    (y_value(o) - p, p * (1.0 - p))
                })
                .unzip(),
            BoostLoss::Ordinal { thresholds } => arm
                .outcome
                .iter()
                .zip(eta)
                .map(|(o, &e)| match Self::ordinal_term(thresholds, o, e) {
                    Some(t) => (t.d_upper + t.d_lower, t.d_uu + 2.0 * t.d_ul + t.d_ll),
                    None => (0.0, 0.0),
                })
                .unzip(),
            BoostLoss::Cox => {
                let obs = arm.cox_obs(eta);
                let scores = models::score_obs(ModelFamily::CoxPartial, &ModelParams::new(0.0, 0.0), &obs)
                    .expect("cox scores are total");
                // score = -(martingale residual); r_i Lambda(t_i) = delta_i - M_i
                arm.outcome
                    .iter()
                    .zip(&scores.rows)
                    .map(|(o, r)| (r[0], (y_value(o) + r[0]).max(0.0)))
                    .unzip()
            }
        }
    }
}

/// Fitted boosting machine for one arm.
#[derive(Debug, Clone)]
pub struct BoostedModel {
    init: f64,
    trees: Vec<(RegressionTree, f64)>,
    /// Training loss before the first round and after each accepted round.
    pub loss_path: Vec<f64>,
}

impl BoostedModel {
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.init + self.trees.iter().map(|(t, s)| s * t.predict(x)).sum::<f64>()
    }

    pub fn rounds(&self) -> usize {
        self.trees.len()
    }
}

/// Boosts `loss` on the rows of `data` listed in `rows`.
///
/// Each round fits a depth-limited least-squares tree to the negative
/// gradient, sets Newton leaf values, and halves the step until the
/// training loss does not increase.
pub fn fit_boosting(
    data: &Dataset,
    rows: &[usize],
    loss: &BoostLoss,
    cfg: &BoostConfig,
    seed: u64,
) -> Result<BoostedModel> {
    cfg.validate()?;
    if rows.is_empty() {
        return Err(HteError::Validation("cannot boost on an empty arm".into()));
    }
    let samples = data.samples();
    let arm = ArmData {
        rows: rows.to_vec(),
        outcome: rows.iter().map(|&i| samples[i].outcome).collect(),
    };
    let mut n_rounds = cfg.n_rounds;
    if rows.len() < 20 {
        n_rounds = ((cfg.n_rounds * rows.len()) / 20).max(1);
        log::warn!(
            "arm has only {} observations; boosting rounds reduced to {n_rounds}",
            rows.len()
        );
    }
    let columns = data.covariate_columns();
    let init = loss.initial(&arm);
    let mut eta = vec![init; rows.len()];
    let mut current = loss.value(&arm, &eta);
    let mut model = BoostedModel {
        init,
        trees: Vec::new(),
        loss_path: vec![current],
    };
    let params = CartParams {
        max_depth: Some(cfg.max_tree_depth),
        min_leaf: cfg.min_leaf.max(1),
        mtry: data.p(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut target = vec![0.0; data.n()];
    for _ in 0..n_rounds {
        let (grad, hess) = loss.gradient_arm(&arm, &eta);
        for (k, &i) in arm.rows.iter().enumerate() {
            target[i] = grad[k];
        }
        let (mut tree, leaves) = RegressionTree::grow(&columns, &target, arm.rows.clone(), params, &mut rng);
        let position: std::collections::HashMap<usize, usize> =
            arm.rows.iter().enumerate().map(|(k, &i)| (i, k)).collect();
        for (node, members) in &leaves.0 {
            let (g, h) = members.iter().fold((0.0, 0.0), |(g, h), i| {
                let k = position[i];
                (g + grad[k], h + hess[k])
            });
            let value = if h > 1e-12 { (g / h).clamp(-10.0, 10.0) } else { 0.0 };
            tree.set_leaf_value(*node, value);
        }
        let step: Vec<f64> = rows.iter().map(|&i| tree.predict(&samples[i].covariates)).collect();
        if step.iter().all(|&s| s == 0.0) {
            break;
        }
        let mut rate = cfg.learning_rate;
        let mut accepted = None;
        for _ in 0..30 {
            let trial: Vec<f64> = eta.iter().zip(&step).map(|(e, s)| e + rate * s).collect();
            let value = loss.value(&arm, &trial);
            if value <= current {
                accepted = Some((trial, value));
                break;
            }
            rate *= 0.5;
        }
        let Some((trial, value)) = accepted else {
            break;
        };
        eta = trial;
        current = value;
        model.trees.push((tree, rate));
        model.loss_path.push(current);
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Sample;

    #[test]
    fn cox_gradient_matches_finite_differences() {
        let outcome: Vec<OutcomeValue> = [
            (1.0, true),
            (2.0, false),
            (2.0, true),
            (3.5, true),
            (0.7, true),
            (4.0, false),
        ]
        .iter()
        .map(|&(time, event)| OutcomeValue::Survival { time, event })
        .collect();
        let eta = vec![0.3, -0.2, 0.9, 0.0, -1.1, 0.4];
        let arm = ArmData {
            rows: (0..6).collect(),
            outcome: outcome.clone(),
        };
        let (neg_grad, _) = BoostLoss::Cox.gradient(&outcome, &eta);
        let h = 1e-6;
        for i in 0..6 {
            let mut up = eta.clone();
            let mut down = eta.clone();
            up[i] += h;
            down[i] -= h;
            let fd = (BoostLoss::Cox.value(&arm, &up) - BoostLoss::Cox.value(&arm, &down)) / (2.0 * h);
            assert!((fd + neg_grad[i]).abs() < 1e-6, "row {i}: {fd} vs {}", -neg_grad[i]);
        }
    }

    #[test]
    fn squared_loss_never_increases() {
        let samples: Vec<Sample> = (0..60)
            .map(|i| {
                let x = i as f64 / 60.0;
                Sample {
                    covariates: vec![x, (i % 5) as f64],
                    treatment: (i % 2) as u8,
                    outcome: OutcomeValue::Continuous {
                        value: (6.0 * x).sin() + 0.1 * (i % 3) as f64,
                    },
                }
            })
            .collect();
        let d = Dataset::new(samples).unwrap();
        let rows: Vec<usize> = (0..60).collect();
        let m = fit_boosting(&d, &rows, &BoostLoss::Squared, &BoostConfig::default(), 3).unwrap();
        assert!(m.loss_path.windows(2).all(|w| w[1] <= w[0]));
        assert!(m.loss_path.last().unwrap() < &(0.5 * m.loss_path[0]));
    }

    #[test]
    fn constant_arm_stays_at_its_summary() {
        let samples: Vec<Sample> = (0..30)
            .map(|i| Sample {
                covariates: vec![i as f64],
                treatment: (i % 2) as u8,
                outcome: OutcomeValue::Continuous { value: 2.5 },
            })
            .collect();
        let d = Dataset::new(samples).unwrap();
        let rows: Vec<usize> = (0..30).collect();
        let m = fit_boosting(&d, &rows, &BoostLoss::Squared, &BoostConfig::default(), 0).unwrap();
        assert_eq!(m.predict(&[3.0]), 2.5);
        assert_eq!(m.predict(&[100.0]), 2.5);
    }
}
