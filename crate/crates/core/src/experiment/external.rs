use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::data::{Dataset, Variant};
use crate::error::{HteError, Result};
use crate::forest::{Forest, ForestConfig};
use crate::math::derive_seed;
use crate::models::ModelFamily;
use crate::nuisance::{build_design, estimate_profile, estimate_propensity, NuisanceConfig};

use super::gao_supported;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExternalRow {
    pub tau_hat: f64,
    pub pi_hat: f64,
    pub a_hat: Option<f64>,
    pub fallback: bool,
}

/// Histogram of the effect estimates, normalized to integrate to one.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TauHistogram {
    pub edges: Vec<f64>,
    pub density: Vec<f64>,
}

impl TauHistogram {
    pub fn new(values: &[f64], bins: usize) -> TauHistogram {
        let bins = bins.max(1);
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if values.is_empty() {
            return TauHistogram {
                edges: Vec::new(),
                density: Vec::new(),
            };
        }
        let (lo, hi) = if hi > lo { (lo, hi) } else { (lo - 0.5, hi + 0.5) };
        let width = (hi - lo) / bins as f64;
        let edges: Vec<f64> = (0..=bins).map(|k| lo + k as f64 * width).collect();
        let mut counts = vec![0usize; bins];
        for &v in values {
            let k = (((v - lo) / width) as usize).min(bins - 1);
            counts[k] += 1;
        }
        let total = values.len() as f64 * width;
        TauHistogram {
            edges,
            density: counts.iter().map(|&c| c as f64 / total).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExternalFit {
    pub family: ModelFamily,
    pub variant: Variant,
    pub rows: Vec<ExternalRow>,
    pub histogram: TauHistogram,
    pub mean_tau: f64,
    #[serde(skip)]
    pub forest: Forest,
}

impl ExternalFit {
    pub fn write_rows_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut wtr = csv::Writer::from_path(path)?;
        wtr.write_record(["row", "tau_hat", "pi_hat", "a_hat", "fallback"])?;
        for (i, r) in self.rows.iter().enumerate() {
            wtr.write_record([
                i.to_string(),
                format!("{:?}", r.tau_hat),
                format!("{:?}", r.pi_hat),
                r.a_hat.map_or(String::new(), |a| format!("{a:?}")),
                (r.fallback as u8).to_string(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn write_density_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut wtr = csv::Writer::from_path(path)?;
        wtr.write_record(["lower", "upper", "density"])?;
        for (k, d) in self.histogram.density.iter().enumerate() {
            wtr.write_record([
                format!("{:?}", self.histogram.edges[k]),
                format!("{:?}", self.histogram.edges[k + 1]),
                format!("{d:?}"),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Fits one forest variant to an external dataset and returns out-of-bag
/// effect estimates for every row.
pub fn fit_external(
    data: &Dataset,
    family: ModelFamily,
    variant: Variant,
    forest: &ForestConfig,
    nuisance: &NuisanceConfig,
    bins: usize,
) -> Result<ExternalFit> {
    if !family.accepts(data.outcome_kind()) {
        return Err(HteError::Validation(format!(
            "family {family} cannot model {} outcomes",
            data.outcome_kind()
        )));
    }
    if variant.uses_gao() && !gao_supported(family) {
        return Err(HteError::UnsupportedVariant {
            variant: variant.name().into(),
            family: family.name(),
        });
    }
    let seed = forest.seed;
    let (design, pi, a) = if variant == Variant::Naive {
        let pi = estimate_propensity(data, &nuisance.propensity, derive_seed(&[seed, 0xA1, 1]))?;
        (build_design(variant, data, None)?, pi, None)
    } else {
        let profile = estimate_profile(data, family, nuisance, derive_seed(&[seed, 0xA1]))?;
        (
            build_design(variant, data, Some(&profile))?,
            profile.pi.clone(),
            profile.a.clone(),
        )
    };
    let fitted = Forest::fit(data, family, &design, forest)?;
    let preds = (0..data.n())
        .into_par_iter()
        .map(|i| fitted.predict_effect_oob(i))
        .collect::<Result<Vec<_>>>()?;
    let rows: Vec<ExternalRow> = preds
        .iter()
        .enumerate()
        .map(|(i, p)| ExternalRow {
            tau_hat: p.tau,
            pi_hat: pi[i],
            a_hat: a.as_ref().map(|a| a[i]),
            fallback: p.fallback,
        })
        .collect();
    let taus: Vec<f64> = rows.iter().map(|r| r.tau_hat).collect();
    let mean_tau = taus.iter().sum::<f64>() / taus.len() as f64;
    log::info!("mean estimated effect {mean_tau:.4} over {} rows", taus.len());
    Ok(ExternalFit {
        family,
        variant,
        histogram: TauHistogram::new(&taus, bins),
        rows,
        mean_tau,
        forest: fitted,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn histogram_integrates_to_one() {
        let v: Vec<f64> = (0..100).map(|i| (i as f64 * 0.37).sin()).collect();
        let h = TauHistogram::new(&v, 12);
        let width = h.edges[1] - h.edges[0];
        let area: f64 = h.density.iter().map(|d| d * width).sum();
        assert!((area - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_values_get_one_unit_interval() {
        let h = TauHistogram::new(&[2.0; 5], 4);
        assert_eq!(h.edges[0], 1.5);
        assert_eq!(h.edges[4], 2.5);
    }
}
