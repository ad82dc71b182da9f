//! Fixtures shared by the benchmarks.

use hteforest::data::{CenteredDesign, Dataset};
use hteforest::dgp::{self, DgpSpec, OutcomeModel, Setup};
use hteforest::forest::ForestConfig;
use hteforest::models::ModelFamily;

/// A simulated dataset together with the family that models it.
pub struct Fixture {
    pub data: Dataset,
    pub family: ModelFamily,
    pub design: CenteredDesign,
}

pub fn fixture(outcome: OutcomeModel, family: ModelFamily, n: usize) -> Fixture {
    let (data, _) = dgp::sample(&DgpSpec::new(Setup::C, outcome, n, 10, 7)).expect("valid spec");
    let design = CenteredDesign::naive(&data);
    Fixture { data, family, design }
}

/// One fixture per node model.
pub fn all_families(n: usize) -> Vec<Fixture> {
    vec![
        fixture(OutcomeModel::Normal, ModelFamily::LinearGaussian, n),
        fixture(OutcomeModel::Binomial, ModelFamily::BinomialLogit, n),
        fixture(
            OutcomeModel::Multinomial4,
            ModelFamily::ProportionalOdds { levels: 4 },
            n,
        ),
        fixture(OutcomeModel::Weibull, ModelFamily::WeibullPH, n),
        fixture(OutcomeModel::Weibull, ModelFamily::CoxPartial, n),
    ]
}

pub fn forest_config(n_trees: usize) -> ForestConfig {
    ForestConfig {
        n_trees,
        seed: 11,
        ..ForestConfig::default()
    }
}
