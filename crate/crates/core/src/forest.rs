//! Forests of model-based trees and local maximum-likelihood prediction.

use std::path::Path;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{CenteredDesign, Dataset};
use crate::error::{HteError, Result};
use crate::math::{derive_seed, mix64};
use crate::models::{self, ModelFamily, ModelParams, NodeFit, Obs};
use crate::tree::{grow_with_context, GrowContext, Tree, TreeConfig};

const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestConfig {
    pub n_trees: usize,
    /// Fraction of rows drawn without replacement for each tree.
    pub subsample_fraction: f64,
    pub tree: TreeConfig,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_trees: 500,
            subsample_fraction: 0.5,
            tree: TreeConfig::default(),
            seed: 0,
        }
    }
}

impl ForestConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 {
            return Err(HteError::Argument("n_trees must be at least 1".into()));
        }
        if !(self.subsample_fraction > 0.0 && self.subsample_fraction <= 1.0) {
            return Err(HteError::Argument("subsample_fraction must lie in (0, 1]".into()));
        }
        Ok(())
    }

    /// Rows for tree `b`; depends only on `(seed, b, n)`.
    pub fn subsample(&self, b: usize, n: usize) -> Vec<usize> {
        let size = ((self.subsample_fraction * n as f64).ceil() as usize).clamp(1, n);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[self.seed, b as u64, 0x5u64]));
        let mut rows = index::sample(&mut rng, n, size).into_vec();
        rows.sort_unstable();
        rows
    }

    fn tree_config(&self, b: usize) -> TreeConfig {
        TreeConfig {
            seed: mix64(derive_seed(&[self.seed, b as u64, 0x7u64])),
            ..self.tree.clone()
        }
    }
}

/// Kernel weights of the training rows for one query point.
#[derive(Debug, Clone, PartialEq)]
pub struct ForestWeights {
    pub weights: Vec<f64>,
}

impl ForestWeights {
    pub fn total(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn nonzero(&self) -> usize {
        self.weights.iter().filter(|&&w| w > 0.0).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub mu: f64,
    pub tau: f64,
    pub params: ModelParams,
    /// The weighted fit failed and the unsplit root fit was used.
    pub fallback: bool,
    pub capped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    version: u32,
    family: ModelFamily,
    config: ForestConfig,
    data: Dataset,
    design: CenteredDesign,
    root_fit: NodeFit,
    trees: Vec<Tree>,
}

impl Forest {
    /// Grows `cfg.n_trees` trees on independent subsamples. The result does
    /// not depend on how rayon schedules the trees.
    pub fn fit(data: &Dataset, family: ModelFamily, design: &CenteredDesign, cfg: &ForestConfig) -> Result<Forest> {
        cfg.validate()?;
        let subsamples = (0..cfg.n_trees).map(|b| cfg.subsample(b, data.n())).collect();
        Self::fit_with_subsamples(data, family, design, cfg, subsamples)
    }

    /// Like [`Forest::fit`], with caller-chosen subsamples (one per tree).
    pub fn fit_with_subsamples(
        data: &Dataset,
        family: ModelFamily,
        design: &CenteredDesign,
        cfg: &ForestConfig,
        subsamples: Vec<Vec<usize>>,
    ) -> Result<Forest> {
        cfg.validate()?;
        cfg.tree.validate(family)?;
        data.require_both_arms()?;
        let ctx = GrowContext::new(data, family, design)?;
        let root_fit = models::fit_obs(family, &ctx.obs)?;
        let trees = subsamples
            .into_par_iter()
            .enumerate()
            .map(|(b, rows)| {
                grow_with_context(&ctx, &cfg.tree_config(b), rows).map_err(|e| HteError::Tree {
                    index: b,
                    source: Box::new(e),
                })
            })
            .collect::<Result<Vec<Tree>>>()?;
        Ok(Forest {
            version: FORMAT_VERSION,
            family,
            config: ForestConfig {
                n_trees: trees.len(),
                ..cfg.clone()
            },
            data: data.clone(),
            design: design.clone(),
            root_fit,
            trees,
        })
    }

    pub fn family(&self) -> ModelFamily {
        self.family
    }

    pub fn config(&self) -> &ForestConfig {
        &self.config
    }

    pub fn data(&self) -> &Dataset {
        &self.data
    }

    pub fn design(&self) -> &CenteredDesign {
        &self.design
    }

    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }

    pub fn root_fit(&self) -> &NodeFit {
        &self.root_fit
    }

    fn weights_impl(&self, x: &[f64], skip_row: Option<usize>) -> Result<ForestWeights> {
        if x.len() != self.data.p() {
            return Err(HteError::Argument(format!(
                "query has {} covariates, forest expects {}",
                x.len(),
                self.data.p()
            )));
        }
        let mut weights = vec![0.0; self.data.n()];
        for tree in &self.trees {
            if skip_row.is_some_and(|r| tree.contains(r)) {
                continue;
            }
            let members = tree.leaf_for(x).members();
            if members.is_empty() {
                continue;
            }
            let share = 1.0 / members.len() as f64;
            for &i in members {
                weights[i] += share;
            }
        }
        let total: f64 = weights.iter().sum();
        if total > 0.0 {
            weights.iter_mut().for_each(|w| *w /= total);
        }
        Ok(ForestWeights { weights })
    }

    /// Normalized co-leaf weights: each tree spreads mass 1/B evenly over
    /// the training rows in the query's leaf.
    pub fn query_weights(&self, x: &[f64]) -> Result<ForestWeights> {
        self.weights_impl(x, None)
    }

    /// Weights for training row `row` using only trees that did not see it.
    pub fn query_weights_oob(&self, row: usize) -> Result<ForestWeights> {
        let x = self
            .data
            .samples()
            .get(row)
            .ok_or_else(|| HteError::Argument(format!("row {row} out of range")))?
            .covariates
            .clone();
        self.weights_impl(&x, Some(row))
    }

    fn fit_weighted(&self, weights: &ForestWeights) -> Prediction {
        let fitted = models::prepare_obs(self.family, &self.data, &self.design)
            .ok()
            .and_then(|obs| {
                let local: Vec<Obs> = obs
                    .into_iter()
                    .zip(&weights.weights)
                    .filter(|(_, &w)| w > 0.0)
                    .map(|(o, &w)| Obs { weight: w, ..o })
                    .collect();
                if local.is_empty() {
                    return None;
                }
                models::fit_obs(self.family, &local).ok()
            });
        match fitted {
            Some(fit) => Prediction {
                mu: fit.params.mu,
                tau: fit.params.tau,
                capped: fit.capped,
                params: fit.params,
                fallback: false,
            },
            None => Prediction {
                mu: self.root_fit.params.mu,
                tau: self.root_fit.params.tau,
                params: self.root_fit.params.clone(),
                capped: self.root_fit.capped,
                fallback: true,
            },
        }
    }

    /// Local maximum-likelihood estimate at `x`: the node model refitted with
    /// the forest weights, all nuisance parameters included.
    pub fn predict_effect(&self, x: &[f64]) -> Result<Prediction> {
        let w = self.query_weights(x)?;
        Ok(self.fit_weighted(&w))
    }

    pub fn predict_effect_oob(&self, row: usize) -> Result<Prediction> {
        let w = self.query_weights_oob(row)?;
        Ok(self.fit_weighted(&w))
    }

    /// Predictions for many query points, computed in parallel.
    pub fn predict_many(&self, xs: &[Vec<f64>]) -> Result<Vec<Prediction>> {
        xs.par_iter().map(|x| self.predict_effect(x)).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Forest> {
        let forest: Forest = serde_json::from_str(text)?;
        if forest.version != FORMAT_VERSION {
            return Err(HteError::Validation(format!(
                "unsupported forest format version {}",
                forest.version
            )));
        }
        Ok(forest)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Forest> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

pub fn fit_forest(data: &Dataset, family: ModelFamily, design: &CenteredDesign, cfg: &ForestConfig) -> Result<Forest> {
    Forest::fit(data, family, design, cfg)
}
