//! Observations, datasets, treatment designs and CSV ingestion.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{HteError, Result};

/// One observed outcome.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OutcomeValue {
    Continuous {
        value: f64,
    },
    Binary {
        value: bool,
    },
    /// Level in `1..=levels`.
    Ordinal {
        level: usize,
        levels: usize,
    },
    /// Observed time `min(Y, C)` with `event = Y <= C`.
    Survival {
        time: f64,
        event: bool,
    },
    /// Interval-censored observation in `(lower, upper]`.
    Interval {
        #[serde(with = "extended_float")]
        lower: f64,
        #[serde(with = "extended_float")]
        upper: f64,
    },
}

/// JSON has no infinities; open interval ends are written as strings.
mod extended_float {
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if *v == f64::INFINITY {
            s.serialize_str("inf")
        } else if *v == f64::NEG_INFINITY {
            s.serialize_str("-inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => match t.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                other => Err(de::Error::custom(format!("invalid bound '{other}'"))),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OutcomeKind {
    Continuous,
    Binary,
    Ordinal { levels: usize },
    Survival,
    Interval,
}

impl fmt::Display for OutcomeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OutcomeKind::Continuous => write!(f, "continuous"),
            OutcomeKind::Binary => write!(f, "binary"),
            OutcomeKind::Ordinal { levels } => write!(f, "ordinal({levels})"),
            OutcomeKind::Survival => write!(f, "survival"),
            OutcomeKind::Interval => write!(f, "interval"),
        }
    }
}

impl OutcomeValue {
    pub fn kind(&self) -> OutcomeKind {
        match *self {
            OutcomeValue::Continuous { .. } => OutcomeKind::Continuous,
            OutcomeValue::Binary { .. } => OutcomeKind::Binary,
            OutcomeValue::Ordinal { levels, .. } => OutcomeKind::Ordinal { levels },
            OutcomeValue::Survival { .. } => OutcomeKind::Survival,
            OutcomeValue::Interval { .. } => OutcomeKind::Interval,
        }
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        match *self {
            OutcomeValue::Continuous { value } if !value.is_finite() => {
                Err(format!("continuous outcome {value} is not finite"))
            }
            OutcomeValue::Ordinal { level, levels } if levels < 2 || level < 1 || level > levels => {
                Err(format!("ordinal level {level} outside 1..={levels}"))
            }
            OutcomeValue::Survival { time, .. } if !(time.is_finite() && time > 0.0) => {
                Err(format!("survival time {time} must be finite and positive"))
            }
            OutcomeValue::Interval { lower, upper } if !(lower < upper) || lower.is_nan() => {
                Err(format!("interval ({lower}, {upper}] is empty"))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub covariates: Vec<f64>,
    /// 0 = control, 1 = treated.
    pub treatment: u8,
    pub outcome: OutcomeValue,
}

/// An immutable, validated collection of samples sharing one outcome kind
/// and covariate dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    samples: Vec<Sample>,
    p: usize,
    outcome_kind: OutcomeKind,
    covariate_names: Vec<String>,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>) -> Result<Self> {
        let p = samples
            .first()
            .map(|s| s.covariates.len())
            .ok_or_else(|| HteError::Validation("dataset has no samples".into()))?;
        let names = (1..=p).map(|j| format!("x{j}")).collect();
        Self::with_names(samples, names)
    }

    pub fn with_names(samples: Vec<Sample>, covariate_names: Vec<String>) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| HteError::Validation("dataset has no samples".into()))?;
        let p = covariate_names.len();
        if p == 0 {
            return Err(HteError::Validation("dataset needs at least one covariate".into()));
        }
        let kind = first.outcome.kind();
        for (i, s) in samples.iter().enumerate() {
            if s.covariates.len() != p {
                return Err(HteError::Validation(format!(
                    "sample {i} has {} covariates, expected {p}",
                    s.covariates.len()
                )));
            }
            if let Some(j) = s.covariates.iter().position(|v| !v.is_finite()) {
                return Err(HteError::Validation(format!(
                    "sample {i}: covariate '{}' is missing or not finite",
                    covariate_names[j]
                )));
            }
            if s.treatment > 1 {
                return Err(HteError::Validation(format!("sample {i}: treatment must be 0 or 1")));
            }
            if s.outcome.kind() != kind {
                return Err(HteError::Validation(format!(
                    "sample {i}: outcome kind {} differs from {kind}",
                    s.outcome.kind()
                )));
            }
            s.outcome
                .validate()
                .map_err(|m| HteError::Validation(format!("sample {i}: {m}")))?;
        }
        Ok(Dataset {
            samples,
            p,
            outcome_kind: kind,
            covariate_names,
        })
    }

    fn empty_like(&self) -> Dataset {
        Dataset {
            samples: Vec::new(),
            p: self.p,
            outcome_kind: self.outcome_kind,
            covariate_names: self.covariate_names.clone(),
        }
    }

    pub fn n(&self) -> usize {
        self.samples.len()
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn outcome_kind(&self) -> OutcomeKind {
        self.outcome_kind
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn treatment(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.treatment as f64).collect()
    }

    /// Number of (control, treated) samples.
    pub fn arm_sizes(&self) -> (usize, usize) {
        let treated = self.samples.iter().filter(|s| s.treatment == 1).count();
        (self.n() - treated, treated)
    }

    pub fn require_both_arms(&self) -> Result<()> {
        let (c, t) = self.arm_sizes();
        if c == 0 || t == 0 {
            return Err(HteError::Validation("single treatment arm".into()));
        }
        Ok(())
    }

    /// Column-major copy of the covariates.
    pub fn covariate_columns(&self) -> Vec<Vec<f64>> {
        (0..self.p)
            .map(|j| self.samples.iter().map(|s| s.covariates[j]).collect())
            .collect()
    }

    /// Samples at the given indices, in that order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut out = self.empty_like();
        out.samples = indices.iter().map(|&i| self.samples[i].clone()).collect();
        out
    }

    /// Drops covariate columns by index (used to hide confounders from a learner).
    pub fn drop_covariates(&self, drop: &[usize]) -> Result<Dataset> {
        let keep: Vec<usize> = (0..self.p).filter(|j| !drop.contains(j)).collect();
        let samples = self
            .samples
            .iter()
            .map(|s| Sample {
                covariates: keep.iter().map(|&j| s.covariates[j]).collect(),
                ..s.clone()
            })
            .collect();
        let names = keep.iter().map(|&j| self.covariate_names[j].clone()).collect();
        Dataset::with_names(samples, names)
    }

    /// Stable content hash, used to prove that paired comparisons saw the same data.
    pub fn content_hash(&self) -> u64 {
        let mut h = 0xcbf2_9ce4_8422_2325u64;
        let mut eat = |bits: u64| {
            for b in bits.to_le_bytes() {
                h = (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01B3);
            }
        };
        for s in &self.samples {
            for v in &s.covariates {
                eat(v.to_bits());
            }
            eat(s.treatment as u64);
            match s.outcome {
                OutcomeValue::Continuous { value } => eat(value.to_bits()),
                OutcomeValue::Binary { value } => eat(value as u64),
                OutcomeValue::Ordinal { level, .. } => eat(level as u64),
                OutcomeValue::Survival { time, event } => {
                    eat(time.to_bits());
                    eat(event as u64)
                }
                OutcomeValue::Interval { lower, upper } => {
                    eat(lower.to_bits());
                    eat(upper.to_bits())
                }
            }
        }
        h
    }

    /// Schema matching the column layout produced by [`write_csv`].
    pub fn default_schema(&self) -> Schema {
        let outcome = match self.outcome_kind {
            OutcomeKind::Continuous => OutcomeColumns::Continuous { column: "y".into() },
            OutcomeKind::Binary => OutcomeColumns::Binary { column: "y".into() },
            OutcomeKind::Ordinal { levels } => OutcomeColumns::Ordinal {
                column: "y".into(),
                levels,
                labels: None,
            },
            OutcomeKind::Survival => OutcomeColumns::Survival {
                time: "time".into(),
                event: "event".into(),
            },
            OutcomeKind::Interval => OutcomeColumns::Interval {
                lower: "lower".into(),
                upper: "upper".into(),
            },
        };
        Schema {
            treatment: "w".into(),
            outcome,
            covariates: Some(self.covariate_names.clone()),
        }
    }
}

/// Forest variants, distinguished by how the treatment indicator is centered
/// and which offset enters the linear predictor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// `mu(x) + tau(x) w`
    Naive,
    /// `mu(x) + tau(x) (w - pi(x))`
    #[serde(rename = "robinson_w")]
    RobinsonW,
    /// `m(x) + mu(x) + tau(x) (w - pi(x))`
    Robinson,
    /// `mu(x) + tau(x) (w - a(x))`
    #[serde(rename = "gao_w")]
    GaoW,
    /// `nu(x) + mu(x) + tau(x) (w - a(x))`
    Gao,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Naive,
        Variant::RobinsonW,
        Variant::Robinson,
        Variant::GaoW,
        Variant::Gao,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Naive => "naive",
            Variant::RobinsonW => "robinson_w",
            Variant::Robinson => "robinson",
            Variant::GaoW => "gao_w",
            Variant::Gao => "gao",
        }
    }

    pub fn has_offset(self) -> bool {
        matches!(self, Variant::Robinson | Variant::Gao)
    }

    pub fn uses_gao(self) -> bool {
        matches!(self, Variant::GaoW | Variant::Gao)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = HteError;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        match key.as_str() {
            "naive" => Ok(Variant::Naive),
            "robinsonw" => Ok(Variant::RobinsonW),
            "robinson" => Ok(Variant::Robinson),
            "gaow" => Ok(Variant::GaoW),
            "gao" => Ok(Variant::Gao),
            _ => Err(HteError::Argument(format!("unknown variant '{s}'"))),
        }
    }
}

/// Per-sample treatment regressor and additive offset for one variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CenteredDesign {
    regressor: Vec<f64>,
    offset: Vec<f64>,
    variant: Variant,
}

impl CenteredDesign {
    pub fn new(regressor: Vec<f64>, offset: Vec<f64>, variant: Variant) -> Result<Self> {
        if regressor.len() != offset.len() {
            return Err(HteError::Argument("regressor and offset lengths differ".into()));
        }
        if regressor.iter().chain(&offset).any(|v| !v.is_finite()) {
            return Err(HteError::Validation("design contains non-finite values".into()));
        }
        if !variant.has_offset() && offset.iter().any(|&o| o != 0.0) {
            return Err(HteError::Validation(format!(
                "variant {variant} must have a zero offset"
            )));
        }
        if variant == Variant::Naive && regressor.iter().any(|&z| z != 0.0 && z != 1.0) {
            return Err(HteError::Validation(
                "naive design requires a 0/1 treatment regressor".into(),
            ));
        }
        Ok(CenteredDesign {
            regressor,
            offset,
            variant,
        })
    }

    /// Raw treatment indicator, no offset.
    pub fn naive(data: &Dataset) -> CenteredDesign {
        let n = data.n();
        CenteredDesign {
            regressor: data.treatment(),
            offset: vec![0.0; n],
            variant: Variant::Naive,
        }
    }

    pub fn regressor(&self) -> &[f64] {
        &self.regressor
    }

    pub fn offset(&self) -> &[f64] {
        &self.offset
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn len(&self) -> usize {
        self.regressor.len()
    }

    pub fn is_empty(&self) -> bool {
        self.regressor.is_empty()
    }

    pub fn subset(&self, indices: &[usize]) -> CenteredDesign {
        CenteredDesign {
            regressor: indices.iter().map(|&i| self.regressor[i]).collect(),
            offset: indices.iter().map(|&i| self.offset[i]).collect(),
            variant: self.variant,
        }
    }
}

/// Column roles for CSV ingestion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub treatment: String,
    pub outcome: OutcomeColumns,
    /// Covariate columns; all remaining columns when absent.
    #[serde(default)]
    pub covariates: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OutcomeColumns {
    Continuous {
        column: String,
    },
    Binary {
        column: String,
    },
    /// Integer levels `1..=levels`, or `labels` listed in increasing order.
    Ordinal {
        column: String,
        levels: usize,
        #[serde(default)]
        labels: Option<Vec<String>>,
    },
    Survival {
        time: String,
        event: String,
    },
    Interval {
        lower: String,
        upper: String,
    },
}

impl OutcomeColumns {
    fn columns(&self) -> Vec<&str> {
        match self {
            OutcomeColumns::Continuous { column }
            | OutcomeColumns::Binary { column }
            | OutcomeColumns::Ordinal { column, .. } => vec![column],
            OutcomeColumns::Survival { time, event } => vec![time, event],
            OutcomeColumns::Interval { lower, upper } => vec![lower, upper],
        }
    }
}

impl Schema {
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Schema> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Summary of rows skipped during ingestion.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LoadReport {
    pub rows_read: usize,
    pub dropped_missing_outcome: usize,
}

fn is_missing(cell: &str) -> bool {
    let t = cell.trim();
    t.is_empty() || t.eq_ignore_ascii_case("na") || t.eq_ignore_ascii_case("nan")
}

fn parse_f64(cell: &str, row: usize, column: &str) -> Result<f64> {
    cell.trim().parse::<f64>().map_err(|_| HteError::Parse {
        row,
        column: column.to_string(),
        message: format!("'{cell}' is not a number"),
    })
}

fn parse_flag(cell: &str, row: usize, column: &str) -> Result<bool> {
    let v = parse_f64(cell, row, column)?;
    if v == 0.0 {
        Ok(false)
    } else if v == 1.0 {
        Ok(true)
    } else {
        Err(HteError::Parse {
            row,
            column: column.to_string(),
            message: format!("'{cell}' must be 0 or 1"),
        })
    }
}

/// Reads a CSV file. Rows are numbered from 1 (the first data row) in errors.
pub fn load_csv(path: impl AsRef<Path>, schema: &Schema) -> Result<(Dataset, LoadReport)> {
    let file = std::fs::File::open(path)?;
    read_csv(file, schema)
}

pub fn read_csv<R: std::io::Read>(reader: R, schema: &Schema) -> Result<(Dataset, LoadReport)> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let index: HashMap<&str, usize> = headers.iter().enumerate().map(|(i, h)| (h.as_str(), i)).collect();
    let col = |name: &str| {
        index
            .get(name)
            .copied()
            .ok_or_else(|| HteError::MissingColumn(name.to_string()))
    };

    let w_col = col(&schema.treatment)?;
    let outcome_names = schema.outcome.columns();
    let outcome_cols = outcome_names.iter().map(|n| col(n)).collect::<Result<Vec<_>>>()?;
    let covariate_names: Vec<String> = match &schema.covariates {
        Some(names) => names.clone(),
        None => headers
            .iter()
            .filter(|h| **h != schema.treatment && !outcome_names.contains(&h.as_str()))
            .cloned()
            .collect(),
    };
    let x_cols = covariate_names.iter().map(|n| col(n)).collect::<Result<Vec<_>>>()?;

    let label_map: Option<HashMap<String, usize>> = match &schema.outcome {
        OutcomeColumns::Ordinal {
            labels: Some(labels),
            levels,
            ..
        } => {
            if labels.len() != *levels {
                return Err(HteError::Validation(format!(
                    "{} ordinal labels given for {levels} levels",
                    labels.len()
                )));
            }
            Some(labels.iter().enumerate().map(|(i, l)| (l.clone(), i + 1)).collect())
        }
        _ => None,
    };

    let mut samples = Vec::new();
    let mut report = LoadReport::default();
    let mut bad_rows = Vec::new();
    for (r, record) in rdr.records().enumerate() {
        let record = record?;
        let row = r + 1;
        report.rows_read += 1;
        let cell = |c: usize| record.get(c).unwrap_or("");
        if outcome_cols.iter().any(|&c| is_missing(cell(c))) {
            report.dropped_missing_outcome += 1;
            continue;
        }
        let mut covariates = Vec::with_capacity(x_cols.len());
        for (name, &c) in covariate_names.iter().zip(&x_cols) {
            if is_missing(cell(c)) {
                return Err(HteError::Parse {
                    row,
                    column: name.clone(),
                    message: "missing covariate value".into(),
                });
            }
            covariates.push(parse_f64(cell(c), row, name)?);
        }
        let treatment = parse_flag(cell(w_col), row, &schema.treatment)? as u8;
        let outcome = match &schema.outcome {
            OutcomeColumns::Continuous { column } => OutcomeValue::Continuous {
                value: parse_f64(cell(outcome_cols[0]), row, column)?,
            },
            OutcomeColumns::Binary { column } => OutcomeValue::Binary {
                value: parse_flag(cell(outcome_cols[0]), row, column)?,
            },
            OutcomeColumns::Ordinal { column, levels, .. } => {
                let raw = cell(outcome_cols[0]).trim();
                let level = match &label_map {
                    Some(map) => *map.get(raw).ok_or_else(|| HteError::Parse {
                        row,
                        column: column.clone(),
                        message: format!("unknown ordinal label '{raw}'"),
                    })?,
                    None => raw.parse::<usize>().map_err(|_| HteError::Parse {
                        row,
                        column: column.clone(),
                        message: format!("'{raw}' is not an integer level"),
                    })?,
                };
                OutcomeValue::Ordinal { level, levels: *levels }
            }
            OutcomeColumns::Survival { time, event } => OutcomeValue::Survival {
                time: parse_f64(cell(outcome_cols[0]), row, time)?,
                event: parse_flag(cell(outcome_cols[1]), row, event)?,
            },
            OutcomeColumns::Interval { lower, upper } => OutcomeValue::Interval {
                lower: parse_f64(cell(outcome_cols[0]), row, lower)?,
                upper: parse_f64(cell(outcome_cols[1]), row, upper)?,
            },
        };
        if let Err(msg) = outcome.validate() {
            bad_rows.push((row, msg));
            continue;
        }
        samples.push(Sample {
            covariates,
            treatment,
            outcome,
        });
    }
    if !bad_rows.is_empty() {
        let rows: Vec<String> = bad_rows.iter().map(|(r, _)| r.to_string()).collect();
        return Err(HteError::Validation(format!(
            "invalid outcome in rows [{}]: {}",
            rows.join(", "),
            bad_rows[0].1
        )));
    }
    if samples.is_empty() {
        return Err(HteError::Validation("no rows with observed outcomes".into()));
    }
    let data = Dataset::with_names(samples, covariate_names)?;
    data.require_both_arms()?;
    Ok((data, report))
}

/// Writes the dataset using the layout of [`Dataset::default_schema`].
pub fn write_csv(path: impl AsRef<Path>, data: &Dataset) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_csv_to(file, data)
}

pub fn write_csv_to<W: std::io::Write>(writer: W, data: &Dataset) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = data.covariate_names.clone();
    header.push("w".into());
    match data.outcome_kind {
        OutcomeKind::Survival => header.extend(["time".into(), "event".into()]),
        OutcomeKind::Interval => header.extend(["lower".into(), "upper".into()]),
        _ => header.push("y".into()),
    }
    wtr.write_record(&header)?;
    for s in &data.samples {
        let mut rec: Vec<String> = s.covariates.iter().map(|v| format!("{v:?}")).collect();
        rec.push(s.treatment.to_string());
        match s.outcome {
            OutcomeValue::Continuous { value } => rec.push(format!("{value:?}")),
            OutcomeValue::Binary { value } => rec.push((value as u8).to_string()),
            OutcomeValue::Ordinal { level, .. } => rec.push(level.to_string()),
            OutcomeValue::Survival { time, event } => {
                rec.push(format!("{time:?}"));
                rec.push((event as u8).to_string());
            }
            OutcomeValue::Interval { lower, upper } => {
                rec.push(format!("{lower:?}"));
                rec.push(format!("{upper:?}"));
            }
        }
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Random disjoint partition into `(train, test)`; both keep the original row order.
///
/// `n_test = 0` yields an empty test set (used internally by the benchmark runner).
pub fn split_train_test<R: Rng + ?Sized>(data: &Dataset, n_test: usize, rng: &mut R) -> Result<(Dataset, Dataset)> {
    if n_test >= data.n() {
        return Err(HteError::Argument(format!(
            "test size {n_test} must be smaller than the dataset size {}",
            data.n()
        )));
    }
    let mut order: Vec<usize> = (0..data.n()).collect();
    order.shuffle(rng);
    let mut is_test = vec![false; data.n()];
    for &i in &order[..n_test] {
        is_test[i] = true;
    }
    let train: Vec<usize> = (0..data.n()).filter(|&i| !is_test[i]).collect();
    let test: Vec<usize> = (0..data.n()).filter(|&i| is_test[i]).collect();
    Ok((data.subset(&train), data.subset(&test)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn continuous_schema() -> Schema {
        Schema {
            treatment: "w".into(),
            outcome: OutcomeColumns::Continuous { column: "y".into() },
            covariates: None,
        }
    }

    fn toy(n: usize) -> Dataset {
        let samples = (0..n)
            .map(|i| Sample {
                covariates: vec![i as f64],
                treatment: (i % 2) as u8,
                outcome: OutcomeValue::Continuous { value: i as f64 * 0.5 },
            })
            .collect();
        Dataset::new(samples).unwrap()
    }

    #[test]
    fn three_row_csv() {
        let csv = "y,w,x1\n1.5,0,0.1\n2.0,1,0.2\n-1,1,0.3\n";
        let (d, report) = read_csv(csv.as_bytes(), &continuous_schema()).unwrap();
        assert_eq!(d.n(), 3);
        assert_eq!(d.p(), 1);
        assert_eq!(report.dropped_missing_outcome, 0);
        assert_eq!(d.covariate_names(), &["x1".to_string()]);
    }

    #[test]
    fn single_arm_is_rejected() {
        let csv = "y,w,x1\n1.5,1,0.1\n2.0,1,0.2\n";
        let err = read_csv(csv.as_bytes(), &continuous_schema()).unwrap_err();
        assert!(err.to_string().contains("single treatment arm"), "{err}");
    }

    #[test]
    fn zero_survival_time_lists_row() {
        let schema = Schema {
            treatment: "w".into(),
            outcome: OutcomeColumns::Survival {
                time: "time".into(),
                event: "event".into(),
            },
            covariates: None,
        };
        let csv = "time,event,w,x1\n1.0,1,0,0.5\n0,1,1,0.1\n2.0,0,1,0.3\n";
        let err = read_csv(csv.as_bytes(), &schema).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("rows [2]"), "{msg}");
    }

    #[test]
    fn malformed_cell_reports_position() {
        let csv = "y,w,x1\n1.5,0,0.1\n2.0,1,abc\n";
        match read_csv(csv.as_bytes(), &continuous_schema()).unwrap_err() {
            HteError::Parse { row, column, .. } => {
                assert_eq!(row, 2);
                assert_eq!(column, "x1");
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn missing_outcome_rows_are_dropped() {
        let csv = "y,w,x1\n1.5,0,0.1\nNA,1,0.2\n,0,0.4\n3,1,0.3\n";
        let (d, report) = read_csv(csv.as_bytes(), &continuous_schema()).unwrap();
        assert_eq!(d.n(), 2);
        assert_eq!(report.dropped_missing_outcome, 2);
    }

    #[test]
    fn missing_covariate_is_an_error() {
        let csv = "y,w,x1\n1.5,0,\n2,1,0.3\n";
        assert!(read_csv(csv.as_bytes(), &continuous_schema()).is_err());
    }

    #[test]
    fn missing_schema_column_is_named() {
        let schema = Schema {
            treatment: "trt".into(),
            ..continuous_schema()
        };
        let err = read_csv("y,w,x1\n1,0,1\n".as_bytes(), &schema).unwrap_err();
        assert!(matches!(err, HteError::MissingColumn(ref c) if c == "trt"));
    }

    #[test]
    fn ordinal_labels_map_to_levels() {
        let schema = Schema {
            treatment: "w".into(),
            outcome: OutcomeColumns::Ordinal {
                column: "y".into(),
                levels: 3,
                labels: Some(vec!["low".into(), "mid".into(), "high".into()]),
            },
            covariates: Some(vec!["x".into()]),
        };
        let csv = "y,w,x\nmid,0,1\nhigh,1,2\nlow,1,3\n";
        let (d, _) = read_csv(csv.as_bytes(), &schema).unwrap();
        let levels: Vec<usize> = d
            .samples()
            .iter()
            .map(|s| match s.outcome {
                OutcomeValue::Ordinal { level, .. } => level,
                _ => unreachable!(),
            })
            .collect();
        assert_eq!(levels, vec![2, 3, 1]);
    }

    #[test]
    fn split_sizes_and_determinism() {
        let d = toy(10);
        let (a, b) = split_train_test(&d, 4, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!((a.n(), b.n()), (6, 4));
        let (a2, b2) = split_train_test(&d, 4, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(a, a2);
        assert_eq!(b, b2);
        let (all, none) = split_train_test(&d, 0, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!((all.n(), none.n()), (10, 0));
        assert!(split_train_test(&d, 10, &mut ChaCha8Rng::seed_from_u64(1)).is_err());
    }

    #[test]
    fn design_invariants() {
        assert!(CenteredDesign::new(vec![0.5], vec![0.0], Variant::Naive).is_err());
        assert!(CenteredDesign::new(vec![0.5], vec![1.0], Variant::RobinsonW).is_err());
        assert!(CenteredDesign::new(vec![0.5], vec![1.0], Variant::Robinson).is_ok());
        assert!(CenteredDesign::new(vec![-0.2], vec![0.0], Variant::GaoW).is_ok());
    }

    #[test]
    fn variant_names_parse() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        }
        assert_eq!("Robinson_W".parse::<Variant>().unwrap(), Variant::RobinsonW);
    }
}
