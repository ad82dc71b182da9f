//! Simulation benchmark: generate data, estimate nuisances, fit every forest
//! variant and score the effect estimates against the truth.

mod external;
mod report;

pub use external::{fit_external, ExternalFit, ExternalRow, TauHistogram};
pub use report::{
    geometric_mean, render_summary, summarize, write_outputs, write_ratios_csv, write_results_csv, write_timings_csv,
    CellKey, MseQuantiles, RatioRow, RatioTable, Side,
};

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Variant};
use crate::dgp::{self, Censoring, DgpSpec, GroundTruth, OutcomeModel, Setup};
use crate::error::{HteError, Result};
use crate::forest::{Forest, ForestConfig};
use crate::math::{derive_seed, fnv1a};
use crate::models::ModelFamily;
use crate::nuisance::{build_design, estimate_profile, NuisanceConfig, NuisanceProfile};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub setups: Vec<Setup>,
    pub outcomes: Vec<OutcomeModel>,
    /// Also fit Cox forests to Weibull outcomes.
    pub cox_on_weibull: bool,
    pub n: Vec<usize>,
    pub p: Vec<usize>,
    pub variants: Vec<Variant>,
    pub replications: usize,
    pub test_size: usize,
    pub censoring: Censoring,
    pub forest: ForestConfig,
    pub nuisance: NuisanceConfig,
    pub master_seed: u64,
    /// Size of the worker pool; `None` uses rayon's default.
    pub workers: Option<usize>,
    pub output_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    /// Desk-scale profile: 100 trees and 10 replications.
    fn default() -> Self {
        ExperimentConfig {
            setups: vec![Setup::A, Setup::B, Setup::C, Setup::D],
            outcomes: vec![OutcomeModel::Normal],
            cox_on_weibull: true,
            n: vec![800],
            p: vec![10],
            variants: Variant::ALL.to_vec(),
            replications: 10,
            test_size: 1000,
            censoring: Censoring::default(),
            forest: ForestConfig {
                n_trees: 100,
                ..ForestConfig::default()
            },
            nuisance: NuisanceConfig::default(),
            master_seed: 2024,
            workers: None,
            output_dir: None,
        }
    }
}

impl ExperimentConfig {
    /// The full simulation matrix with 500-tree forests.
    pub fn paper_scale() -> Self {
        ExperimentConfig {
            outcomes: vec![
                OutcomeModel::Normal,
                OutcomeModel::Binomial,
                OutcomeModel::Multinomial4,
                OutcomeModel::Weibull,
            ],
            n: vec![800, 1600],
            p: vec![10, 20],
            replications: 100,
            forest: ForestConfig::default(),
            ..ExperimentConfig::default()
        }
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn validate(&self) -> Result<()> {
        let empty = |what: &str| HteError::Argument(format!("experiment needs at least one {what}"));
        if self.setups.is_empty() {
            return Err(empty("setup"));
        }
        if self.outcomes.is_empty() {
            return Err(empty("outcome model"));
        }
        if self.n.is_empty() || self.p.is_empty() {
            return Err(empty("sample size and dimension"));
        }
        if self.variants.is_empty() {
            return Err(empty("variant"));
        }
        if self.replications == 0 {
            return Err(HteError::Argument("replications must be at least 1".into()));
        }
        if self.test_size == 0 {
            return Err(HteError::Argument("test_size must be at least 1".into()));
        }
        if self.workers == Some(0) {
            return Err(HteError::Argument("workers must be at least 1".into()));
        }
        if self.variants.iter().any(|v| v.uses_gao()) && !self.cells().iter().any(|c| gao_supported(c.fit_family)) {
            return Err(HteError::Argument(
                "centering-weight variants need a normal, binomial or cox fit in the matrix".into(),
            ));
        }
        self.forest.validate()?;
        for cell in self.cells() {
            cell.spec(self.censoring, 0, 0).validate()?;
            self.forest.tree.validate(cell.fit_family)?;
        }
        Ok(())
    }

    /// Every (setup, outcome, fit family, n, p) combination in canonical order.
    pub fn cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for &setup in &self.setups {
            for &outcome in &self.outcomes {
                let mut families = vec![outcome.natural_family()];
                if outcome == OutcomeModel::Weibull && self.cox_on_weibull {
                    families.push(ModelFamily::CoxPartial);
                }
                for &n in &self.n {
                    for &p in &self.p {
                        for &fit_family in &families {
                            out.push(Cell {
                                setup,
                                outcome,
                                fit_family,
                                n,
                                p,
                            });
                        }
                    }
                }
            }
        }
        out
    }

    /// Variants actually fitted for a family; centering-weight variants are
    /// skipped where no weight formula exists.
    pub fn variants_for(&self, family: ModelFamily) -> Vec<Variant> {
        self.variants
            .iter()
            .copied()
            .filter(|v| !v.uses_gao() || gao_supported(family))
            .collect()
    }
}

pub fn gao_supported(family: ModelFamily) -> bool {
    matches!(
        family,
        ModelFamily::LinearGaussian | ModelFamily::BinomialLogit | ModelFamily::CoxPartial
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Cell {
    pub setup: Setup,
    pub outcome: OutcomeModel,
    pub fit_family: ModelFamily,
    pub n: usize,
    pub p: usize,
}

impl Cell {
    /// Seed of one replication. The fit family is deliberately left out so
    /// that Cox and Weibull fits see the same data.
    pub fn replication_seed(&self, master: u64, replication: usize) -> u64 {
        derive_seed(&[
            master,
            fnv1a(&self.setup.to_string()),
            fnv1a(self.outcome.name()),
            self.n as u64,
            self.p as u64,
            replication as u64,
        ])
    }

    fn spec(&self, censoring: Censoring, test_size: usize, seed: u64) -> DgpSpec {
        DgpSpec {
            setup: self.setup,
            outcome: self.outcome,
            fit_family: Some(self.fit_family),
            n: self.n + test_size,
            p: self.p,
            seed,
            censoring,
        }
    }
}

/// Outcome of one (cell, replication, variant) fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub setup: Setup,
    pub outcome: OutcomeModel,
    pub fit_family: String,
    pub n: usize,
    pub p: usize,
    pub variant: Variant,
    pub replication: usize,
    pub seed: u64,
    /// Hash of the training data; equal across variants of one replication.
    pub data_hash: u64,
    /// Mean squared error of the effect estimates on the test sample; `None` on failure.
    pub mse: Option<f64>,
    /// Test predictions whose local fit hit the parameter cap.
    pub capped: usize,
    /// Test predictions that fell back to the root fit.
    pub fallback: usize,
    pub error: Option<String>,
    /// Excluded from `results.csv` so that reruns compare byte for byte.
    #[serde(skip)]
    pub wall_time_ms: f64,
}

impl ResultRecord {
    pub fn cell_key(&self) -> (Setup, OutcomeModel, usize, usize) {
        (self.setup, self.outcome, self.n, self.p)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub records: Vec<ResultRecord>,
    /// Cells in which no replication produced a single estimate.
    pub failed_cells: Vec<Cell>,
}

/// Mean squared error of `estimates` against `truth`.
pub fn mse(estimates: &[f64], truth: &[f64]) -> f64 {
    let n = estimates.len().max(1) as f64;
    estimates.iter().zip(truth).map(|(e, t)| (e - t).powi(2)).sum::<f64>() / n
}

struct Job {
    setup: Setup,
    outcome: OutcomeModel,
    n: usize,
    p: usize,
    replication: usize,
    families: Vec<ModelFamily>,
}

fn split_sample(data: &Dataset, truth: &GroundTruth, n_train: usize) -> (Dataset, Dataset, GroundTruth) {
    let train: Vec<usize> = (0..n_train).collect();
    let test: Vec<usize> = (n_train..data.n()).collect();
    (data.subset(&train), data.subset(&test), truth.subset(&test))
}

fn run_job(cfg: &ExperimentConfig, job: &Job) -> Vec<ResultRecord> {
    let cell0 = Cell {
        setup: job.setup,
        outcome: job.outcome,
        fit_family: job.families[0],
        n: job.n,
        p: job.p,
    };
    let seed = cell0.replication_seed(cfg.master_seed, job.replication);
    let generated = dgp::sample(&cell0.spec(cfg.censoring, cfg.test_size, seed));
    let mut records = Vec::new();
    for &family in &job.families {
        let variants = cfg.variants_for(family);
        let base = |variant: Variant, data_hash: u64| ResultRecord {
            setup: job.setup,
            outcome: job.outcome,
            fit_family: family.name(),
            n: job.n,
            p: job.p,
            variant,
            replication: job.replication,
            seed,
            data_hash,
            mse: None,
            capped: 0,
            fallback: 0,
            error: None,
            wall_time_ms: 0.0,
        };
        let (data, truth) = match &generated {
            Ok(g) => g,
            Err(e) => {
                records.extend(variants.iter().map(|&v| ResultRecord {
                    error: Some(e.to_string()),
                    ..base(v, 0)
                }));
                continue;
            }
        };
        let (train, test, test_truth) = split_sample(data, truth, job.n);
        let hash = train.content_hash();
        let start = Instant::now();
        let profile: Option<Result<NuisanceProfile>> = variants
            .iter()
            .any(|&v| v != Variant::Naive)
            .then(|| estimate_profile(&train, family, &cfg.nuisance, derive_seed(&[seed, 0xA1])));
        let nuisance_ms = start.elapsed().as_secs_f64() * 1e3;
        let xs: Vec<Vec<f64>> = test.samples().iter().map(|s| s.covariates.clone()).collect();
        for &variant in &variants {
            let start = Instant::now();
            let result = (|| -> Result<(f64, usize, usize)> {
                let prof = match (&profile, variant) {
                    (_, Variant::Naive) => None,
                    (Some(Ok(p)), _) => Some(p),
                    (Some(Err(e)), _) => return Err(HteError::Evaluation(format!("nuisance estimation failed: {e}"))),
                    (None, _) => unreachable!("profile computed for non-naive variants"),
                };
                let design = build_design(variant, &train, prof)?;
                let forest_cfg = ForestConfig {
                    seed: derive_seed(&[seed, 0xF0]),
                    ..cfg.forest.clone()
                };
                let forest = Forest::fit(&train, family, &design, &forest_cfg)?;
                let preds = forest.predict_many(&xs)?;
                let tau: Vec<f64> = preds.iter().map(|p| p.tau).collect();
                let err = mse(&tau, &test_truth.tau_true);
                if !err.is_finite() {
                    return Err(HteError::Evaluation("non-finite mean squared error".into()));
                }
                Ok((
                    err,
                    preds.iter().filter(|p| p.capped).count(),
                    preds.iter().filter(|p| p.fallback).count(),
                ))
            })();
            let mut wall = start.elapsed().as_secs_f64() * 1e3;
            if variant != Variant::Naive {
                wall += nuisance_ms;
            }
            let mut rec = base(variant, hash);
            rec.wall_time_ms = wall;
            match result {
                Ok((m, capped, fallback)) => {
                    rec.mse = Some(m);
                    rec.capped = capped;
                    rec.fallback = fallback;
                }
                Err(e) => {
                    log::warn!(
                        "setup {} {} fit {} n={} p={} rep {} {}: {e}",
                        job.setup,
                        job.outcome,
                        family,
                        job.n,
                        job.p,
                        job.replication,
                        variant
                    );
                    rec.error = Some(e.to_string());
                }
            }
            records.push(rec);
        }
    }
    records
}

/// Runs every cell and replication. Output order and content do not depend
/// on the number of workers.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let cells = cfg.cells();
    let mut jobs = Vec::new();
    for &setup in &cfg.setups {
        for &outcome in &cfg.outcomes {
            for &n in &cfg.n {
                for &p in &cfg.p {
                    let families: Vec<ModelFamily> = cells
                        .iter()
                        .filter(|c| c.setup == setup && c.outcome == outcome && c.n == n && c.p == p)
                        .map(|c| c.fit_family)
                        .collect();
                    for replication in 0..cfg.replications {
                        jobs.push(Job {
                            setup,
                            outcome,
                            n,
                            p,
                            replication,
                            families: families.clone(),
                        });
                    }
                }
            }
        }
    }
    let run = || -> Vec<Vec<ResultRecord>> { jobs.par_iter().map(|j| run_job(cfg, j)).collect() };
    let nested = match cfg.workers {
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build()
            .map_err(|e| HteError::Argument(format!("cannot build worker pool: {e}")))?
            .install(run),
        None => run(),
    };
    let mut records: Vec<ResultRecord> = nested.into_iter().flatten().collect();
    let cell_rank = |r: &ResultRecord| {
        cells
            .iter()
            .position(|c| {
                c.setup == r.setup
                    && c.outcome == r.outcome
                    && c.n == r.n
                    && c.p == r.p
                    && c.fit_family.name() == r.fit_family
            })
            .unwrap_or(usize::MAX)
    };
    records.sort_by_key(|r| (cell_rank(r), r.replication, r.variant));
    let failed_cells = cells
        .iter()
        .copied()
        .filter(|c| {
            !records.iter().any(|r| {
                r.setup == c.setup
                    && r.outcome == c.outcome
                    && r.n == c.n
                    && r.p == c.p
                    && r.fit_family == c.fit_family.name()
                    && r.mse.is_some()
            })
        })
        .collect();
    Ok(ExperimentOutput { records, failed_cells })
}
