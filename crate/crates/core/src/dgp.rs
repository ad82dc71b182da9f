//! Simulation designs with known treatment effects.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::{Mutex, OnceLock};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, OutcomeValue, Sample};
use crate::error::{HteError, Result};
use crate::math::{derive_seed, expit, fnv1a, log1pexp, logit};
use crate::models::ModelFamily;

/// Which half of the uniform-covariate scenario table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TablePart {
    /// Treatment enters as `w`.
    A,
    /// Treatment enters as `w - 0.5`.
    B,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Setup {
    A,
    B,
    C,
    D,
    /// Row `1..=8` of the uniform-covariate scenario table.
    Uniform {
        part: TablePart,
        row: u8,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TreatmentCoding {
    Raw,
    Centered,
}

impl TreatmentCoding {
    pub fn apply(self, w: u8) -> f64 {
        match self {
            TreatmentCoding::Raw => w as f64,
            TreatmentCoding::Centered => w as f64 - 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Propensity {
    Half,
    Beta(usize),
}

/// Prognostic, predictive and propensity pieces of a table row.
#[derive(Debug, Clone, Copy)]
struct TableRow {
    mu_var: Option<usize>,
    has_tau: bool,
    propensity: Propensity,
}

fn table_row(row: u8) -> TableRow {
    use Propensity::*;
    let (mu_var, has_tau, propensity) = match row {
        1 => (Some(2), false, Beta(2)),
        2 => (None, true, Half),
        3 => (Some(0), true, Beta(0)),
        4 => (Some(0), true, Half),
        5 => (Some(2), true, Half),
        6 => (Some(2), true, Beta(2)),
        7 => (None, true, Beta(2)),
        _ => (Some(2), true, Beta(3)),
    };
    TableRow {
        mu_var,
        has_tau,
        propensity,
    }
}

/// Quarter of one plus the Beta(2, 4) density.
fn beta_propensity(x: f64) -> f64 {
    0.25 * (1.0 + 20.0 * x * (1.0 - x).powi(3))
}

fn smooth_step(x: f64) -> f64 {
    1.0 + 1.0 / (1.0 + (-20.0 * (x - 1.0 / 3.0)).exp())
}

impl Setup {
    pub fn all_uniform() -> Vec<Setup> {
        [TablePart::A, TablePart::B]
            .into_iter()
            .flat_map(|part| (1..=8).map(move |row| Setup::Uniform { part, row }))
            .collect()
    }

    pub fn uniform_covariates(self) -> bool {
        matches!(self, Setup::A | Setup::Uniform { .. })
    }

    /// Smallest covariate dimension the formulas need.
    pub fn min_p(self) -> usize {
        match self {
            Setup::Uniform { .. } => 4,
            _ => 5,
        }
    }

    pub fn coding(self) -> TreatmentCoding {
        match self {
            Setup::Uniform { part: TablePart::A, .. } => TreatmentCoding::Raw,
            _ => TreatmentCoding::Centered,
        }
    }

    pub fn propensity(self, x: &[f64]) -> f64 {
        match self {
            Setup::A => (PI * x[0] * x[1]).sin().clamp(0.1, 0.9),
            Setup::B => 0.5,
            Setup::C => 1.0 / (1.0 + (x[1] + x[2]).exp()),
            Setup::D => 1.0 / (1.0 + (-x[0]).exp() + (-x[1]).exp()),
            Setup::Uniform { row, .. } => match table_row(row).propensity {
                Propensity::Half => 0.5,
                Propensity::Beta(j) => beta_propensity(x[j]),
            },
        }
    }

    pub fn tau(self, x: &[f64]) -> f64 {
        match self {
            Setup::A => (x[0] + x[1]) / 2.0,
            Setup::B => x[0] + log1pexp(x[1]),
            Setup::C => 1.0,
            Setup::D => (x[0] + x[1] + x[2]).max(0.0) - (x[3] + x[4]).max(0.0),
            Setup::Uniform { row, .. } => {
                if table_row(row).has_tau {
                    smooth_step(x[0]) * smooth_step(x[1])
                } else {
                    0.0
                }
            }
        }
    }

    pub fn mu(self, x: &[f64]) -> f64 {
        match self {
            Setup::A => (PI * x[0] * x[1]).sin() + 2.0 * (x[2] - 0.5).powi(2) + x[3] + 0.5 * x[4],
            Setup::B => (x[0] + x[1]).max(x[2]).max(0.0) + (x[3] + x[4]).max(0.0),
            Setup::C => 2.0 * log1pexp(x[0] + x[1] + x[2]),
            Setup::D => ((x[0] + x[1] + x[2]).max(0.0) + (x[3] + x[4]).max(0.0)) / 2.0,
            Setup::Uniform { row, .. } => table_row(row).mu_var.map_or(0.0, |j| 2.0 * x[j] - 1.0),
        }
    }

    fn draw_covariates<R: Rng>(self, p: usize, rng: &mut R) -> Vec<f64> {
        if self.uniform_covariates() {
            (0..p).map(|_| rng.random::<f64>()).collect()
        } else {
            (0..p).map(|_| rng.sample(StandardNormal)).collect()
        }
    }
}

impl fmt::Display for Setup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Setup::A => f.write_str("A"),
            Setup::B => f.write_str("B"),
            Setup::C => f.write_str("C"),
            Setup::D => f.write_str("D"),
            Setup::Uniform { part, row } => {
                let part = if *part == TablePart::A { "A" } else { "B" };
                write!(f, "U{part}{row}")
            }
        }
    }
}

impl FromStr for Setup {
    type Err = HteError;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim().to_ascii_uppercase();
        match t.as_str() {
            "A" => return Ok(Setup::A),
            "B" => return Ok(Setup::B),
            "C" => return Ok(Setup::C),
            "D" => return Ok(Setup::D),
            _ => {}
        }
        let bad = || HteError::Argument(format!("unknown setup '{s}' (A-D or UA1..UB8)"));
        let rest = t.strip_prefix('U').ok_or_else(bad)?;
        let part = match rest.chars().next() {
            Some('A') => TablePart::A,
            Some('B') => TablePart::B,
            _ => return Err(bad()),
        };
        let row: u8 = rest[1..].parse().map_err(|_| bad())?;
        if !(1..=8).contains(&row) {
            return Err(bad());
        }
        Ok(Setup::Uniform { part, row })
    }
}

impl TryFrom<String> for Setup {
    type Error = HteError;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Setup> for String {
    fn from(s: Setup) -> String {
        s.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutcomeModel {
    Normal,
    Binomial,
    Multinomial4,
    Weibull,
}

impl OutcomeModel {
    pub fn name(self) -> &'static str {
        match self {
            OutcomeModel::Normal => "normal",
            OutcomeModel::Binomial => "binomial",
            OutcomeModel::Multinomial4 => "multinomial4",
            OutcomeModel::Weibull => "weibull",
        }
    }

    /// The correctly specified model family for this outcome.
    pub fn natural_family(self) -> ModelFamily {
        match self {
            OutcomeModel::Normal => ModelFamily::LinearGaussian,
            OutcomeModel::Binomial => ModelFamily::BinomialLogit,
            OutcomeModel::Multinomial4 => ModelFamily::ProportionalOdds { levels: 4 },
            OutcomeModel::Weibull => ModelFamily::WeibullPH,
        }
    }
}

impl fmt::Display for OutcomeModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OutcomeModel {
    type Err = HteError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "normal" | "gaussian" => Ok(OutcomeModel::Normal),
            "binomial" | "binary" => Ok(OutcomeModel::Binomial),
            "multinomial4" | "multinomial" | "ordinal" => Ok(OutcomeModel::Multinomial4),
            "weibull" => Ok(OutcomeModel::Weibull),
            other => Err(HteError::Argument(format!("unknown outcome model '{other}'"))),
        }
    }
}

/// Right-censoring applied to Weibull outcomes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Censoring {
    None,
    /// Exponential censoring times, rate chosen so that `fraction` of the
    /// observations are censored on average.
    Calibrated {
        fraction: f64,
    },
}

impl Default for Censoring {
    fn default() -> Self {
        Censoring::Calibrated { fraction: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpSpec {
    pub setup: Setup,
    pub outcome: OutcomeModel,
    /// Family used for fitting; defaults to the outcome's natural family.
    #[serde(default)]
    pub fit_family: Option<ModelFamily>,
    pub n: usize,
    pub p: usize,
    pub seed: u64,
    #[serde(default)]
    pub censoring: Censoring,
}

impl DgpSpec {
    pub fn new(setup: Setup, outcome: OutcomeModel, n: usize, p: usize, seed: u64) -> Self {
        DgpSpec {
            setup,
            outcome,
            fit_family: None,
            n,
            p,
            seed,
            censoring: Censoring::default(),
        }
    }

    pub fn fit_family(&self) -> ModelFamily {
        self.fit_family.unwrap_or_else(|| self.outcome.natural_family())
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(HteError::Argument("n must be positive".into()));
        }
        if self.p < self.setup.min_p() {
            return Err(HteError::Argument(format!(
                "setup {} needs at least {} covariates",
                self.setup,
                self.setup.min_p()
            )));
        }
        if let Censoring::Calibrated { fraction } = self.censoring {
            if !(fraction > 0.0 && fraction < 1.0) {
                return Err(HteError::Argument("censoring fraction must lie in (0, 1)".into()));
            }
        }
        Ok(())
    }
}

/// True effect, prognostic term and propensity for each generated sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub tau_true: Vec<f64>,
    pub mu_true: Vec<f64>,
    pub pi_true: Vec<f64>,
}

impl GroundTruth {
    pub fn subset(&self, rows: &[usize]) -> GroundTruth {
        GroundTruth {
            tau_true: rows.iter().map(|&i| self.tau_true[i]).collect(),
            mu_true: rows.iter().map(|&i| self.mu_true[i]).collect(),
            pi_true: rows.iter().map(|&i| self.pi_true[i]).collect(),
        }
    }

    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["tau_true", "mu_true", "pi_true"])?;
        for i in 0..self.tau_true.len() {
            wtr.write_record([
                format!("{:?}", self.tau_true[i]),
                format!("{:?}", self.mu_true[i]),
                format!("{:?}", self.pi_true[i]),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Thresholds of the four-category outcome, `logit(k / 4)`.
pub fn multinomial_thresholds() -> [f64; 3] {
    [logit(0.25), logit(0.5), logit(0.75)]
}

/// Weibull event time with cumulative hazard `y^2 exp(-eta)`.
fn weibull_time<R: Rng>(eta: f64, rng: &mut R) -> f64 {
    let e: f64 = rng.sample(Exp1);
    (e * eta.exp()).sqrt()
}

fn draw_unit<R: Rng>(setup: Setup, p: usize, rng: &mut R) -> (Vec<f64>, u8, f64, f64, f64) {
    let x = setup.draw_covariates(p, rng);
    let pi = setup.propensity(&x);
    let w = rng.random_bool(pi) as u8;
    let mu = setup.mu(&x);
    let tau = setup.tau(&x);
    (x, w, pi, mu, tau)
}

/// One outcome at linear predictor `eta`; `censoring_rate` adds exponential
/// right-censoring to Weibull draws.
pub fn draw_outcome<R: Rng>(model: OutcomeModel, eta: f64, censoring_rate: Option<f64>, rng: &mut R) -> OutcomeValue {
    match model {
        OutcomeModel::Normal => {
            let e: f64 = rng.sample(StandardNormal);
            OutcomeValue::Continuous { value: eta + e }
        }
        OutcomeModel::Binomial => OutcomeValue::Binary {
            value: rng.random_bool(expit(eta)),
        },
        OutcomeModel::Multinomial4 => {
            let u: f64 = rng.random();
            let latent = eta + logit(u.max(f64::MIN_POSITIVE));
            let level = 1 + multinomial_thresholds().iter().filter(|&&t| t < latent).count();
            OutcomeValue::Ordinal { level, levels: 4 }
        }
        OutcomeModel::Weibull => {
            let y = weibull_time(eta, rng);
            match censoring_rate {
                Some(rate) => {
                    let c: f64 = Exp::new(rate).expect("positive rate").sample(rng);
                    OutcomeValue::Survival {
                        time: y.min(c),
                        event: y <= c,
                    }
                }
                None => OutcomeValue::Survival { time: y, event: true },
            }
        }
    }
}

const CALIBRATION_SIZE: usize = 50_000;

type RateKey = (Setup, usize, u64);

fn rate_cache() -> &'static Mutex<HashMap<RateKey, f64>> {
    static CACHE: OnceLock<Mutex<HashMap<RateKey, f64>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// Exponential censoring rate giving the requested marginal censoring
/// fraction for Weibull outcomes of `setup` in dimension `p`.
///
/// Solved by bisection on the exact censoring probability
/// `mean(1 - exp(-rate * y))` over a fixed pre-sample of event times, so the
/// rate does not depend on the sample size or the replication seed.
pub fn censoring_rate(setup: Setup, p: usize, fraction: f64) -> f64 {
    let key = (setup, p, fraction.to_bits());
    if let Some(&r) = rate_cache().lock().expect("cache lock").get(&key) {
        return r;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[fnv1a("censoring"), fnv1a(&setup.to_string()), p as u64]));
    let coding = setup.coding();
    let times: Vec<f64> = (0..CALIBRATION_SIZE)
        .map(|_| {
            let (_, w, _, mu, tau) = draw_unit(setup, p, &mut rng);
            weibull_time(mu + tau * coding.apply(w), &mut rng)
        })
        .collect();
    let censored = |rate: f64| times.iter().map(|&y| -(-rate * y).exp_m1()).sum::<f64>() / times.len() as f64;
    let (mut lo, mut hi) = (-30.0f64, 30.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if censored(mid.exp()) < fraction {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let rate = (0.5 * (lo + hi)).exp();
    rate_cache().lock().expect("cache lock").insert(key, rate);
    rate
}

/// Draws `spec.n` samples and their ground truth; identical specs give identical data.
pub fn sample(spec: &DgpSpec) -> Result<(Dataset, GroundTruth)> {
    spec.validate()?;
    let family = spec.fit_family();
    let kind = match spec.outcome {
        OutcomeModel::Normal => crate::data::OutcomeKind::Continuous,
        OutcomeModel::Binomial => crate::data::OutcomeKind::Binary,
        OutcomeModel::Multinomial4 => crate::data::OutcomeKind::Ordinal { levels: 4 },
        OutcomeModel::Weibull => crate::data::OutcomeKind::Survival,
    };
    if !family.accepts(kind) {
        return Err(HteError::Argument(format!(
            "family {family} cannot be fitted to {} outcomes",
            spec.outcome
        )));
    }
    let rate = match (spec.outcome, spec.censoring) {
        (OutcomeModel::Weibull, Censoring::Calibrated { fraction }) => {
            Some(censoring_rate(spec.setup, spec.p, fraction))
        }
        _ => None,
    };
    let coding = spec.setup.coding();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut samples = Vec::with_capacity(spec.n);
    let mut truth = GroundTruth {
        tau_true: Vec::with_capacity(spec.n),
        mu_true: Vec::with_capacity(spec.n),
        pi_true: Vec::with_capacity(spec.n),
    };
    for _ in 0..spec.n {
        let (x, w, pi, mu, tau) = draw_unit(spec.setup, spec.p, &mut rng);
        let eta = mu + tau * coding.apply(w);
        let outcome = draw_outcome(spec.outcome, eta, rate, &mut rng);
        samples.push(Sample {
            covariates: x,
            treatment: w,
            outcome,
        });
        truth.tau_true.push(tau);
        truth.mu_true.push(mu);
        truth.pi_true.push(pi);
    }
    Ok((Dataset::new(samples)?, truth))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn propensity_points() {
        let mut x = vec![0.0; 5];
        assert_eq!(Setup::C.propensity(&x), 0.5);
        assert_eq!(Setup::D.propensity(&x), 1.0 / 3.0);
        assert_eq!(Setup::A.propensity(&x), 0.1);
        x[0] = 0.5;
        x[1] = 1.0;
        assert_eq!(Setup::A.propensity(&x), 0.9);
    }

    #[test]
    fn effect_points() {
        assert_eq!(Setup::A.tau(&[1.0, 1.0, 0.0, 0.0, 0.0]), 1.0);
        assert!((Setup::B.tau(&[0.0; 5]) - 2f64.ln()).abs() < 1e-15);
        assert_eq!(Setup::D.mu(&[0.0; 5]), 0.0);
        assert!((Setup::C.mu(&[0.0; 5]) - 2.0 * 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn uniform_table_rows() {
        let x = [0.25, 0.9, 0.75, 0.1];
        let u = |part, row| Setup::Uniform { part, row };
        assert_eq!(u(TablePart::A, 1).tau(&x), 0.0);
        assert_eq!(u(TablePart::A, 1).mu(&x), 0.5);
        assert_eq!(u(TablePart::A, 2).propensity(&x), 0.5);
        // the Beta(2,4) density peaks at 1/4 with value 20 * 27 / 256
        let peak = 0.25 * (1.0 + 20.0 * 27.0 / 256.0);
        assert!((u(TablePart::B, 3).propensity(&x) - peak).abs() < 1e-15);
        assert_eq!(u(TablePart::A, 3).mu(&x), -0.5);
        assert_eq!(u(TablePart::A, 8).propensity(&x), beta_propensity(0.1));
        assert_eq!(u(TablePart::A, 4).coding(), TreatmentCoding::Raw);
        assert_eq!(u(TablePart::B, 4).coding(), TreatmentCoding::Centered);
        assert_eq!(Setup::all_uniform().len(), 16);
    }

    #[test]
    fn setup_names_round_trip() {
        for s in [Setup::A, Setup::D].into_iter().chain(Setup::all_uniform()) {
            assert_eq!(s.to_string().parse::<Setup>().unwrap(), s);
        }
        assert!("UC1".parse::<Setup>().is_err());
        assert!("UA9".parse::<Setup>().is_err());
    }

    #[test]
    fn regeneration_is_deterministic() {
        let spec = DgpSpec::new(Setup::B, OutcomeModel::Weibull, 50, 10, 9);
        let (a, ta) = sample(&spec).unwrap();
        let (b, tb) = sample(&spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(ta, tb);
        assert!(ta.pi_true.iter().all(|&p| p == 0.5));
    }

    #[test]
    fn weibull_median_without_censoring() {
        let spec = DgpSpec {
            censoring: Censoring::None,
            ..DgpSpec::new(
                Setup::Uniform {
                    part: TablePart::A,
                    row: 1,
                },
                OutcomeModel::Weibull,
                20_000,
                4,
                3,
            )
        };
        // row 1 has a prognostic term; check the transformed quantity instead
        let (d, truth) = sample(&spec).unwrap();
        let mut h: Vec<f64> = d
            .samples()
            .iter()
            .zip(&truth.mu_true)
            .map(|(s, mu)| match s.outcome {
                OutcomeValue::Survival { time, .. } => time * (-mu / 2.0).exp(),
                _ => unreachable!(),
            })
            .collect();
        h.sort_by(f64::total_cmp);
        let median = h[h.len() / 2];
        assert!((median - 2f64.ln().sqrt()).abs() < 0.02, "median {median}");
    }

    #[test]
    fn too_few_covariates() {
        assert!(sample(&DgpSpec::new(Setup::A, OutcomeModel::Normal, 10, 4, 0)).is_err());
    }
}
