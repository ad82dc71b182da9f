//! Model-based forests for heterogeneous treatment effects.
//!
//! Trees split on the instability of per-observation likelihood scores;
//! forests turn leaf co-membership into kernel weights and re-solve the
//! likelihood locally at each query point. First-stage nuisance estimates
//! center the treatment indicator and supply offsets.

// `!(x > 0.0)` is used on purpose so that NaN takes the failure branch.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod dgp;
pub mod error;
pub mod experiment;
pub mod forest;
pub mod math;
pub mod models;
pub mod nuisance;
pub mod tree;

mod cart;

pub use data::{CenteredDesign, Dataset, OutcomeKind, OutcomeValue, Sample, Schema, Variant};
pub use dgp::{DgpSpec, GroundTruth, OutcomeModel, Setup};
pub use error::{HteError, Result};
pub use experiment::{run_experiment, ExperimentConfig, ResultRecord};
pub use forest::{fit_forest, Forest, ForestConfig, ForestWeights, Prediction};
pub use models::{fit_node, neg_log_lik, score, ModelFamily, ModelParams, NodeFit, ScoreMatrix};
pub use nuisance::{build_design, estimate_profile, NuisanceConfig, NuisanceProfile};
pub use tree::{grow_tree, Tree, TreeConfig};
