use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cart::{CartParams, RegressionTree};
use crate::data::Dataset;
use crate::error::{HteError, Result};
use crate::math::derive_seed;

/// Regression forest on the treatment indicator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PropensityConfig {
    pub n_trees: usize,
    pub min_leaf: usize,
    /// `None` uses all covariates at every split.
    pub mtry: Option<usize>,
    pub subsample_fraction: f64,
    pub clip: f64,
}

impl Default for PropensityConfig {
    fn default() -> Self {
        PropensityConfig {
            n_trees: 125,
            min_leaf: 5,
            mtry: None,
            subsample_fraction: 0.5,
            clip: 0.01,
        }
    }
}

/// Out-of-bag propensity predictions for every row, clipped to
/// `[clip, 1 - clip]`. Rows that every tree saw fall back to the full
/// ensemble average.
pub fn estimate_propensity(data: &Dataset, cfg: &PropensityConfig, seed: u64) -> Result<Vec<f64>> {
    data.require_both_arms()?;
    if cfg.n_trees == 0 || !(cfg.subsample_fraction > 0.0 && cfg.subsample_fraction <= 1.0) {
        return Err(HteError::Argument("invalid propensity forest configuration".into()));
    }
    if !(cfg.clip >= 0.0 && cfg.clip < 0.5) {
        return Err(HteError::Argument("propensity clip must lie in [0, 0.5)".into()));
    }
    let n = data.n();
    let p = data.p();
    let columns = data.covariate_columns();
    let target = data.treatment();
    let size = ((cfg.subsample_fraction * n as f64).ceil() as usize).clamp(1, n);
    let params = CartParams {
        max_depth: None,
        min_leaf: cfg.min_leaf.max(1),
        mtry: cfg.mtry.unwrap_or(p).clamp(1, p),
    };
    let per_tree: Vec<(Vec<bool>, Vec<f64>)> = (0..cfg.n_trees)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[seed, b as u64]));
            let rows = index::sample(&mut rng, n, size).into_vec();
            let mut in_bag = vec![false; n];
            for &i in &rows {
                in_bag[i] = true;
            }
            let (tree, _) = RegressionTree::grow(&columns, &target, rows, params, &mut rng);
            let preds = data.samples().iter().map(|s| tree.predict(&s.covariates)).collect();
            (in_bag, preds)
        })
        .collect();
    let out = (0..n)
        .map(|i| {
            let (mut sum, mut count, mut all) = (0.0, 0usize, 0.0);
            for (in_bag, preds) in &per_tree {
                all += preds[i];
                if !in_bag[i] {
                    sum += preds[i];
                    count += 1;
                }
            }
            let pi = if count > 0 {
                sum / count as f64
            } else {
                all / per_tree.len() as f64
            };
            pi.clamp(cfg.clip, 1.0 - cfg.clip)
        })
        .collect();
    Ok(out)
}
