use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use crate::data::Variant;
use crate::dgp::{OutcomeModel, Setup};
use crate::error::Result;

use super::ResultRecord;

/// One member of a compared pair: a fit family and a variant.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Side {
    pub fit_family: String,
    pub variant: Variant,
}

impl std::fmt::Display for Side {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{}", self.fit_family, self.variant)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RatioRow {
    pub setup: Setup,
    pub outcome: OutcomeModel,
    pub n: usize,
    pub p: usize,
    pub numerator: Side,
    pub denominator: Side,
    /// Replications in which both members produced an estimate.
    pub pairs: usize,
    /// Geometric mean of the paired MSE ratios; `None` when no pair exists.
    pub ratio: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MseQuantiles {
    pub count: usize,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
}

/// Setup, outcome, n and p of one simulation cell.
pub type CellKey = (Setup, OutcomeModel, usize, usize);

#[derive(Debug, Clone, PartialEq)]
pub struct RatioTable {
    pub rows: Vec<RatioRow>,
    /// Raw MSE quantiles per (cell, side).
    pub quantiles: Vec<(CellKey, Side, Option<MseQuantiles>)>,
}

impl RatioTable {
    pub fn find(
        &self,
        setup: Setup,
        outcome: OutcomeModel,
        numerator: (&str, Variant),
        denominator: (&str, Variant),
    ) -> Option<&RatioRow> {
        self.rows.iter().find(|r| {
            r.setup == setup
                && r.outcome == outcome
                && r.numerator.fit_family == numerator.0
                && r.numerator.variant == numerator.1
                && r.denominator.fit_family == denominator.0
                && r.denominator.variant == denominator.1
        })
    }
}

/// Geometric mean of `ratios`; `None` when empty.
pub fn geometric_mean(ratios: &[f64]) -> Option<f64> {
    if ratios.is_empty() {
        return None;
    }
    Some((ratios.iter().map(|r| r.ln()).sum::<f64>() / ratios.len() as f64).exp())
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Standard comparisons: every variant against the uncentered forest, each
/// offset variant against its regressor-only sibling, and Cox against Weibull.
fn default_pairs(sides: &[Side]) -> Vec<(Side, Side)> {
    let has = |s: &Side| sides.contains(s);
    let mut out = Vec::new();
    let families: BTreeSet<&str> = sides.iter().map(|s| s.fit_family.as_str()).collect();
    for fam in &families {
        let side = |v| Side {
            fit_family: fam.to_string(),
            variant: v,
        };
        for v in [Variant::RobinsonW, Variant::Robinson, Variant::GaoW, Variant::Gao] {
            out.push((side(v), side(Variant::Naive)));
        }
        out.push((side(Variant::Robinson), side(Variant::RobinsonW)));
        out.push((side(Variant::Gao), side(Variant::GaoW)));
        out.push((side(Variant::Gao), side(Variant::Robinson)));
    }
    if families.contains("cox") && families.contains("weibull") {
        for v in Variant::ALL {
            out.push((
                Side {
                    fit_family: "cox".into(),
                    variant: v,
                },
                Side {
                    fit_family: "weibull".into(),
                    variant: v,
                },
            ));
        }
    }
    out.retain(|(a, b)| has(a) && has(b));
    out
}

/// Paired MSE ratios per cell, aggregated by geometric mean over replications.
pub fn summarize(records: &[ResultRecord]) -> RatioTable {
    let mut cells: Vec<(Setup, OutcomeModel, usize, usize)> = Vec::new();
    for r in records {
        if !cells.contains(&r.cell_key()) {
            cells.push(r.cell_key());
        }
    }
    let mut rows = Vec::new();
    let mut quantiles = Vec::new();
    for key in cells {
        let in_cell: Vec<&ResultRecord> = records.iter().filter(|r| r.cell_key() == key).collect();
        let mut sides: Vec<Side> = Vec::new();
        for r in &in_cell {
            let s = Side {
                fit_family: r.fit_family.clone(),
                variant: r.variant,
            };
            if !sides.contains(&s) {
                sides.push(s);
            }
        }
        let mse_of = |side: &Side, rep: usize| {
            in_cell
                .iter()
                .find(|r| r.replication == rep && r.fit_family == side.fit_family && r.variant == side.variant)
                .and_then(|r| r.mse)
        };
        let reps: BTreeSet<usize> = in_cell.iter().map(|r| r.replication).collect();
        for (num, den) in default_pairs(&sides) {
            let ratios: Vec<f64> = reps
                .iter()
                .filter_map(|&rep| match (mse_of(&num, rep), mse_of(&den, rep)) {
                    (Some(a), Some(b)) if b > 0.0 && a > 0.0 => Some(a / b),
                    _ => None,
                })
                .collect();
            rows.push(RatioRow {
                setup: key.0,
                outcome: key.1,
                n: key.2,
                p: key.3,
                numerator: num,
                denominator: den,
                pairs: ratios.len(),
                ratio: geometric_mean(&ratios),
            });
        }
        for side in sides {
            let mut values: Vec<f64> = reps.iter().filter_map(|&rep| mse_of(&side, rep)).collect();
            values.sort_by(f64::total_cmp);
            let q = (!values.is_empty()).then(|| MseQuantiles {
                count: values.len(),
                q25: quantile(&values, 0.25),
                median: quantile(&values, 0.5),
                q75: quantile(&values, 0.75),
            });
            quantiles.push((key, side, q));
        }
    }
    RatioTable { rows, quantiles }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{x:?}"))
}

pub fn write_results_csv<W: std::io::Write>(writer: W, records: &[ResultRecord]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record([
        "setup",
        "outcome",
        "fit_family",
        "n",
        "p",
        "variant",
        "replication",
        "seed",
        "data_hash",
        "mse",
        "capped",
        "fallback",
        "error",
    ])?;
    for r in records {
        wtr.write_record([
            r.setup.to_string(),
            r.outcome.to_string(),
            r.fit_family.clone(),
            r.n.to_string(),
            r.p.to_string(),
            r.variant.to_string(),
            r.replication.to_string(),
            r.seed.to_string(),
            format!("{:016x}", r.data_hash),
            opt(r.mse),
            r.capped.to_string(),
            r.fallback.to_string(),
            r.error.clone().unwrap_or_default(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_timings_csv<W: std::io::Write>(writer: W, records: &[ResultRecord]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record([
        "setup",
        "outcome",
        "fit_family",
        "n",
        "p",
        "variant",
        "replication",
        "wall_time_ms",
    ])?;
    for r in records {
        wtr.write_record([
            r.setup.to_string(),
            r.outcome.to_string(),
            r.fit_family.clone(),
            r.n.to_string(),
            r.p.to_string(),
            r.variant.to_string(),
            r.replication.to_string(),
            format!("{:.3}", r.wall_time_ms),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_ratios_csv<W: std::io::Write>(writer: W, table: &RatioTable) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record([
        "setup",
        "outcome",
        "n",
        "p",
        "numerator",
        "denominator",
        "pairs",
        "geo_mean_ratio",
    ])?;
    for r in &table.rows {
        wtr.write_record([
            r.setup.to_string(),
            r.outcome.to_string(),
            r.n.to_string(),
            r.p.to_string(),
            r.numerator.to_string(),
            r.denominator.to_string(),
            r.pairs.to_string(),
            r.ratio.map_or_else(|| "NA".into(), |x| format!("{x:.6}")),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Plain-text summary of ratios and raw MSE quantiles.
pub fn render_summary(table: &RatioTable) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "Paired MSE ratios (geometric mean over replications)");
    let _ = writeln!(
        out,
        "{:<6} {:<13} {:>5} {:>3}  {:<22} {:<22} {:>5} {:>9}",
        "setup", "outcome", "n", "p", "numerator", "denominator", "pairs", "ratio"
    );
    for r in &table.rows {
        let _ = writeln!(
            out,
            "{:<6} {:<13} {:>5} {:>3}  {:<22} {:<22} {:>5} {:>9}",
            r.setup.to_string(),
            r.outcome.to_string(),
            r.n,
            r.p,
            r.numerator.to_string(),
            r.denominator.to_string(),
            r.pairs,
            r.ratio.map_or_else(|| "NA".into(), |x| format!("{x:.3}"))
        );
    }
    let _ = writeln!(out);
    let _ = writeln!(out, "MSE quantiles");
    let _ = writeln!(
        out,
        "{:<6} {:<13} {:>5} {:>3}  {:<22} {:>5} {:>9} {:>9} {:>9}",
        "setup", "outcome", "n", "p", "forest", "count", "q25", "median", "q75"
    );
    for (key, side, q) in &table.quantiles {
        let (count, a, b, c) = match q {
            Some(q) => (
                q.count.to_string(),
                format!("{:.4}", q.q25),
                format!("{:.4}", q.median),
                format!("{:.4}", q.q75),
            ),
            None => ("0".into(), "NA".into(), "NA".into(), "NA".into()),
        };
        let _ = writeln!(
            out,
            "{:<6} {:<13} {:>5} {:>3}  {:<22} {:>5} {:>9} {:>9} {:>9}",
            key.0.to_string(),
            key.1.to_string(),
            key.2,
            key.3,
            side.to_string(),
            count,
            a,
            b,
            c
        );
    }
    out
}

/// Writes `results.csv`, `timings.csv`, `ratios.csv` and `summary.txt` into `dir`.
pub fn write_outputs(dir: impl AsRef<Path>, records: &[ResultRecord]) -> Result<RatioTable> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    write_results_csv(std::fs::File::create(dir.join("results.csv"))?, records)?;
    write_timings_csv(std::fs::File::create(dir.join("timings.csv"))?, records)?;
    let table = summarize(records);
    write_ratios_csv(std::fs::File::create(dir.join("ratios.csv"))?, &table)?;
    std::fs::write(dir.join("summary.txt"), render_summary(&table))?;
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(variant: Variant, replication: usize, mse: f64) -> ResultRecord {
        ResultRecord {
            setup: Setup::C,
            outcome: OutcomeModel::Normal,
            fit_family: "normal".into(),
            n: 800,
            p: 10,
            variant,
            replication,
            seed: 0,
            data_hash: 0,
            mse: Some(mse),
            capped: 0,
            fallback: 0,
            error: None,
            wall_time_ms: 0.0,
        }
    }

    #[test]
    fn ratio_by_hand() {
        let t = summarize(&[rec(Variant::Naive, 0, 4.0), rec(Variant::Robinson, 0, 1.0)]);
        let r = t
            .find(
                Setup::C,
                OutcomeModel::Normal,
                ("normal", Variant::Robinson),
                ("normal", Variant::Naive),
            )
            .unwrap();
        assert_eq!(r.ratio, Some(0.25));
        assert_eq!(r.pairs, 1);
    }

    #[test]
    fn symmetric_ratios_average_to_one() {
        assert_eq!(geometric_mean(&[0.5, 2.0]), Some(1.0));
        assert_eq!(geometric_mean(&[1.0; 7]), Some(1.0));
        assert_eq!(geometric_mean(&[]), None);
    }

    #[test]
    fn missing_partner_is_na() {
        let mut failed = rec(Variant::Naive, 0, 1.0);
        failed.mse = None;
        let t = summarize(&[failed, rec(Variant::Robinson, 0, 1.0)]);
        let r = t
            .find(
                Setup::C,
                OutcomeModel::Normal,
                ("normal", Variant::Robinson),
                ("normal", Variant::Naive),
            )
            .unwrap();
        assert_eq!(r.ratio, None);
        let mut buf = Vec::new();
        write_ratios_csv(&mut buf, &t).unwrap();
        assert!(String::from_utf8(buf).unwrap().contains(",0,NA"));
    }
}
