//! Acceptance criteria. Each test prints one `criterion N PASS|FAIL` line.

use std::io::Write;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use hteforest::data::{CenteredDesign, Dataset, OutcomeValue, Sample, Variant};
use hteforest::dgp::{self, Censoring, DgpSpec, OutcomeModel, Setup};
use hteforest::experiment::{run_experiment, summarize, write_results_csv, ExperimentConfig, RatioTable};
use hteforest::forest::{Forest, ForestConfig};
use hteforest::models::{fit_node, neg_log_lik, score, ModelFamily, ModelParams};
use hteforest::nuisance::{compute_gao_weights, estimate_profile, NuisanceConfig};
use hteforest::tree::{grow_tree, variable_test, NodeKind, TreeConfig};

const RATIO_CONFOUNDED: f64 = 0.5;
const RATIO_SURVIVAL_CONFOUNDED: f64 = 0.5;
const RATIO_RANDOMIZED: f64 = 0.9;
const RATIO_OFFSET: f64 = 0.8;
const COX_VS_WEIBULL: f64 = 1.5;
const DESK_RUNTIME: Duration = Duration::from_secs(300);
const GRADIENT_INSTANCES: usize = 200;
const GRADIENT_REL_TOL: f64 = 1e-4;
const ORACLE_TOL: f64 = 1e-8;
const ORACLE_CASES: usize = 50;
const STEP_SEEDS: u64 = 100;
const STEP_MIN_HITS: usize = 95;
const STEP_CUT_RANGE: (f64, f64) = (0.45, 0.55);
const KS_SIMS: usize = 1000;
const KS_LEVEL: f64 = 0.05;
const NULL_N: usize = 200;
const CENSORING_RANGE: (f64, f64) = (0.45, 0.55);
const GAO_TOL: f64 = 1e-12;
const GAO_PROFILES: usize = 100;

fn report(id: u32, name: &str, pass: bool, detail: String) {
    // the harness captures print macros and the stderr handle; a fresh descriptor is not captured
    let verdict = if pass { "PASS" } else { "FAIL" };
    let line = format!("\ncriterion {id:>2} {verdict}: {name}: {detail}\n");
    let direct = std::fs::OpenOptions::new()
        .append(true)
        .open("/dev/stderr")
        .and_then(|mut f| f.write_all(line.as_bytes()));
    if direct.is_err() {
        eprint!("{line}");
    }
    assert!(pass, "criterion {id} ({name}) failed: {detail}");
}

fn desk_config(setups: Vec<Setup>, outcome: OutcomeModel) -> ExperimentConfig {
    ExperimentConfig {
        setups,
        outcomes: vec![outcome],
        variants: vec![Variant::Naive, Variant::RobinsonW, Variant::Robinson],
        ..ExperimentConfig::default()
    }
}

/// Desk profile for the normal outcome (setups B and C) and its wall time.
fn normal_desk() -> &'static (RatioTable, Duration) {
    static CELL: OnceLock<(RatioTable, Duration)> = OnceLock::new();
    CELL.get_or_init(|| {
        let cfg = desk_config(vec![Setup::C, Setup::B], OutcomeModel::Normal);
        assert_eq!(cfg.forest.n_trees, 100);
        assert_eq!(cfg.replications, 10);
        let start = Instant::now();
        let out = run_experiment(&cfg).expect("desk run");
        let elapsed = start.elapsed();
        assert!(out.failed_cells.is_empty());
        (summarize(&out.records), elapsed)
    })
}

fn survival_desk() -> &'static RatioTable {
    static CELL: OnceLock<RatioTable> = OnceLock::new();
    CELL.get_or_init(|| {
        let cfg = desk_config(vec![Setup::C, Setup::B], OutcomeModel::Weibull);
        assert!(cfg.cox_on_weibull);
        let out = run_experiment(&cfg).expect("desk run");
        assert!(out.failed_cells.is_empty());
        summarize(&out.records)
    })
}

fn ratio(table: &RatioTable, setup: Setup, outcome: OutcomeModel, num: (&str, Variant), den: (&str, Variant)) -> f64 {
    let row = table.find(setup, outcome, num, den).expect("ratio row present");
    assert_eq!(row.pairs, 10, "all replications paired");
    row.ratio.expect("ratio defined")
}

#[test]
fn criterion_01_confounding_rescue_normal() {
    let (table, elapsed) = normal_desk();
    let r = ratio(
        table,
        Setup::C,
        OutcomeModel::Normal,
        ("normal", Variant::Robinson),
        ("normal", Variant::Naive),
    );
    report(
        1,
        "setup C normal, robinson vs naive",
        r <= RATIO_CONFOUNDED && *elapsed < DESK_RUNTIME,
        format!(
            "ratio {r:.3} (limit {RATIO_CONFOUNDED}); setups B+C desk run {:.1}s (limit {}s)",
            elapsed.as_secs_f64(),
            DESK_RUNTIME.as_secs()
        ),
    );
}

#[test]
fn criterion_02_confounding_rescue_survival() {
    let table = survival_desk();
    let r = ratio(
        table,
        Setup::C,
        OutcomeModel::Weibull,
        ("weibull", Variant::Robinson),
        ("weibull", Variant::Naive),
    );
    report(
        2,
        "setup C weibull, robinson vs naive",
        r <= RATIO_SURVIVAL_CONFOUNDED,
        format!("ratio {r:.3} (limit {RATIO_SURVIVAL_CONFOUNDED})"),
    );
}

#[test]
fn criterion_03_randomized_gain() {
    let (table, _) = normal_desk();
    let r = ratio(
        table,
        Setup::B,
        OutcomeModel::Normal,
        ("normal", Variant::Robinson),
        ("normal", Variant::Naive),
    );
    report(
        3,
        "setup B normal, robinson vs naive",
        r <= RATIO_RANDOMIZED,
        format!("ratio {r:.3} (limit {RATIO_RANDOMIZED})"),
    );
}

#[test]
fn criterion_04_offset_value() {
    let (table, _) = normal_desk();
    let r = ratio(
        table,
        Setup::C,
        OutcomeModel::Normal,
        ("normal", Variant::Robinson),
        ("normal", Variant::RobinsonW),
    );
    report(
        4,
        "setup C normal, robinson vs robinson_w",
        r <= RATIO_OFFSET,
        format!("ratio {r:.3} (limit {RATIO_OFFSET})"),
    );
}

#[test]
fn criterion_05_cox_on_weibull() {
    let table = survival_desk();
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for setup in [Setup::B, Setup::C] {
        for v in [Variant::Naive, Variant::RobinsonW, Variant::Robinson] {
            let r = ratio(table, setup, OutcomeModel::Weibull, ("cox", v), ("weibull", v));
            worst = worst.max(r);
            parts.push(format!("{setup}/{v} {r:.3}"));
        }
    }
    report(
        5,
        "cox vs weibull MSE, setups B and C",
        worst <= COX_VS_WEIBULL,
        format!("worst ratio {worst:.3} (limit {COX_VS_WEIBULL}); {}", parts.join(", ")),
    );
}

// ---------------------------------------------------------------------------
// Gradient correctness

fn random_params(family: ModelFamily, rng: &mut ChaCha8Rng) -> ModelParams {
    let mut p = ModelParams::new(rng.random_range(-1.0..1.0), rng.random_range(-1.5..1.5));
    match family {
        ModelFamily::LinearGaussian => p.phi = Some(rng.random_range(0.5..2.0)),
        ModelFamily::ProportionalOdds { levels } => {
            let mut t: Vec<f64> = (0..levels - 1).map(|_| rng.random_range(-2.0..2.0)).collect();
            t.sort_by(f64::total_cmp);
            p.thresholds = t;
        }
        ModelFamily::WeibullPH => p.nu = Some([rng.random_range(-1.0..1.0), rng.random_range(0.5..3.0)]),
        _ => {}
    }
    p
}

fn random_instance(family: ModelFamily, rng: &mut ChaCha8Rng) -> (Dataset, CenteredDesign) {
    let outcome = match family {
        ModelFamily::LinearGaussian => OutcomeModel::Normal,
        ModelFamily::BinomialLogit => OutcomeModel::Binomial,
        ModelFamily::ProportionalOdds { .. } => OutcomeModel::Multinomial4,
        ModelFamily::WeibullPH | ModelFamily::CoxPartial => OutcomeModel::Weibull,
    };
    let n = rng.random_range(5..=20);
    let ties = rng.random_bool(0.5);
    let samples: Vec<Sample> = (0..n)
        .map(|_| {
            let x: f64 = rng.random_range(-1.0..1.0);
            let w = rng.random_bool(0.5) as u8;
            let mut y = dgp::draw_outcome(outcome, 0.5 * x + 0.7 * w as f64, Some(0.6), rng);
            if let (true, OutcomeValue::Survival { time, event }) = (ties, y) {
                // coarsen times so that the tie handling is exercised
                y = OutcomeValue::Survival {
                    time: ((time * 5.0).ceil() / 5.0).max(0.2),
                    event,
                };
            }
            Sample {
                covariates: vec![x],
                treatment: w,
                outcome: y,
            }
        })
        .collect();
    let data = Dataset::new(samples).unwrap();
    let regressor: Vec<f64> = data
        .samples()
        .iter()
        .map(|s| s.treatment as f64 - rng.random_range(0.2..0.8))
        .collect();
    let offset: Vec<f64> = (0..n).map(|_| rng.random_range(-0.5..0.5)).collect();
    (data, CenteredDesign::new(regressor, offset, Variant::Robinson).unwrap())
}

#[test]
fn criterion_06_gradient_correctness() {
    let families = [
        ModelFamily::LinearGaussian,
        ModelFamily::BinomialLogit,
        ModelFamily::ProportionalOdds { levels: 4 },
        ModelFamily::WeibullPH,
        ModelFamily::CoxPartial,
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst_all: f64 = 0.0;
    let mut parts = Vec::new();
    for family in families {
        let mut worst: f64 = 0.0;
        for _ in 0..GRADIENT_INSTANCES {
            let (data, design) = random_instance(family, &mut rng);
            let params = random_params(family, &mut rng);
            let ones = vec![1.0; data.n()];
            let analytic = score(family, &params, &data, &design).unwrap().column_sums();
            for (k, a) in analytic.iter().enumerate() {
                let h = 1e-5;
                let shifted = |d: f64| {
                    let mut p = params.clone();
                    if k == 0 {
                        p.mu += d;
                    } else {
                        p.tau += d;
                    }
                    neg_log_lik(family, &p, &data, &ones, &design).unwrap()
                };
                // score is the gradient of the log-likelihood
                let fd = -(shifted(h) - shifted(-h)) / (2.0 * h);
                let rel = (a - fd).abs() / fd.abs().max(1.0);
                worst = worst.max(rel);
            }
        }
        parts.push(format!("{family} {worst:.1e}"));
        worst_all = worst_all.max(worst);
    }
    report(
        6,
        "analytic scores vs central differences",
        worst_all < GRADIENT_REL_TOL,
        format!(
            "max relative error {worst_all:.2e} (limit {GRADIENT_REL_TOL:e}); {}",
            parts.join(", ")
        ),
    );
}

// ---------------------------------------------------------------------------
// Closed-form Gaussian oracle

/// Weighted least squares of `y - offset` on `(1, z)` by Cramer's rule.
fn wls_oracle(y: &[f64], z: &[f64], offset: &[f64], w: &[f64]) -> (f64, f64, f64) {
    let (mut s0, mut s1, mut s2, mut t0, mut t1) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for i in 0..y.len() {
        let r = y[i] - offset[i];
        s0 += w[i];
        s1 += w[i] * z[i];
        s2 += w[i] * z[i] * z[i];
        t0 += w[i] * r;
        t1 += w[i] * z[i] * r;
    }
    let det = s0 * s2 - s1 * s1;
    let mu = (t0 * s2 - s1 * t1) / det;
    let tau = (s0 * t1 - s1 * t0) / det;
    let rss: f64 = (0..y.len())
        .map(|i| w[i] * (y[i] - offset[i] - mu - tau * z[i]).powi(2))
        .sum();
    (mu, tau, (rss / s0).sqrt())
}

fn continuous(data: &Dataset) -> Vec<f64> {
    data.samples()
        .iter()
        .map(|s| match s.outcome {
            OutcomeValue::Continuous { value } => value,
            _ => unreachable!(),
        })
        .collect()
}

#[test]
fn criterion_07_gaussian_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (data, _) = dgp::sample(&DgpSpec::new(Setup::A, OutcomeModel::Normal, 300, 5, 77)).unwrap();
    let y = continuous(&data);
    let z: Vec<f64> = data.treatment().iter().map(|w| w - 0.4).collect();
    let offset: Vec<f64> = (0..data.n())
        .map(|_| rng.sample::<f64, _>(StandardNormal) * 0.3)
        .collect();
    let design = CenteredDesign::new(z.clone(), offset.clone(), Variant::Robinson).unwrap();
    let family = ModelFamily::LinearGaussian;

    let mut worst_node: f64 = 0.0;
    for _ in 0..ORACLE_CASES {
        let w: Vec<f64> = (0..data.n())
            .map(|_| {
                if rng.random_bool(0.3) {
                    0.0
                } else {
                    rng.random_range(0.0..3.0)
                }
            })
            .collect();
        let fit = fit_node(family, &data, &w, &design).unwrap();
        let (mu, tau, phi) = wls_oracle(&y, &z, &offset, &w);
        worst_node = worst_node
            .max((fit.params.mu - mu).abs())
            .max((fit.params.tau - tau).abs())
            .max((fit.params.phi.unwrap() - phi).abs());
    }

    let cfg = ForestConfig {
        n_trees: 50,
        seed: 3,
        ..ForestConfig::default()
    };
    let forest = Forest::fit(&data, family, &design, &cfg).unwrap();
    let mut worst_forest: f64 = 0.0;
    for _ in 0..ORACLE_CASES {
        let x: Vec<f64> = (0..5).map(|_| rng.random_range(0.0..1.0)).collect();
        let w = forest.query_weights(&x).unwrap();
        let pred = forest.predict_effect(&x).unwrap();
        assert!(!pred.fallback);
        let (mu, tau, _) = wls_oracle(&y, &z, &offset, &w.weights);
        worst_forest = worst_forest.max((pred.mu - mu).abs()).max((pred.tau - tau).abs());
    }
    report(
        7,
        "gaussian fits vs weighted normal equations",
        worst_node <= ORACLE_TOL && worst_forest <= ORACLE_TOL,
        format!(
            "max abs difference node {worst_node:.1e}, forest {worst_forest:.1e} over {ORACLE_CASES} weight vectors each (limit {ORACLE_TOL:e})"
        ),
    );
}

// ---------------------------------------------------------------------------
// Split recovery

fn step_data(n: usize, p: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = (0..n)
        .map(|_| {
            let x: Vec<f64> = (0..p).map(|_| rng.random::<f64>()).collect();
            let w = rng.random_bool(0.5) as u8;
            let tau = if x[0] > 0.5 { 1.0 } else { 0.0 };
            Sample {
                covariates: x,
                treatment: w,
                outcome: OutcomeValue::Continuous { value: tau * w as f64 },
            }
        })
        .collect();
    Dataset::new(samples).unwrap()
}

#[test]
fn criterion_08_split_recovery() {
    let mut hits = 0;
    for seed in 0..STEP_SEEDS {
        let data = step_data(400, 5, 1000 + seed);
        let cfg = TreeConfig {
            seed,
            ..TreeConfig::default()
        };
        let rows: Vec<usize> = (0..data.n()).collect();
        let tree = grow_tree(
            &data,
            ModelFamily::LinearGaussian,
            &CenteredDesign::naive(&data),
            &cfg,
            &rows,
        )
        .unwrap();
        if let NodeKind::Internal { var: 0, cutpoint, .. } = tree.root.kind {
            if (STEP_CUT_RANGE.0..=STEP_CUT_RANGE.1).contains(&cutpoint) {
                hits += 1;
            }
        }
    }
    report(
        8,
        "noiseless step effect, root split on x1 near 0.5",
        hits >= STEP_MIN_HITS,
        format!("{hits}/{STEP_SEEDS} seeds (need {STEP_MIN_HITS})"),
    );
}

// ---------------------------------------------------------------------------
// Null uniformity

/// Asymptotic Kolmogorov p-value with the small-sample correction of Stephens.
fn ks_uniform_p_value(mut u: Vec<f64>) -> (f64, f64) {
    u.sort_by(f64::total_cmp);
    let n = u.len() as f64;
    let d = u
        .iter()
        .enumerate()
        .map(|(i, &v)| ((i + 1) as f64 / n - v).max(v - i as f64 / n))
        .fold(0.0, f64::max);
    let t = d * (n.sqrt() + 0.12 + 0.11 / n.sqrt());
    let p: f64 = (1..=100)
        .map(|k| {
            let k = k as f64;
            2.0 * (-1f64).powf(k - 1.0) * (-2.0 * k * k * t * t).exp()
        })
        .sum();
    (d, p.clamp(0.0, 1.0))
}

#[test]
fn criterion_09_null_uniformity() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let family = ModelFamily::LinearGaussian;
    let mut pvals = Vec::with_capacity(KS_SIMS);
    for _ in 0..KS_SIMS {
        let samples: Vec<Sample> = (0..NULL_N)
            .map(|_| Sample {
                covariates: vec![rng.random::<f64>()],
                treatment: rng.random_bool(0.5) as u8,
                outcome: OutcomeValue::Continuous {
                    value: rng.sample(StandardNormal),
                },
            })
            .collect();
        let data = Dataset::new(samples).unwrap();
        let design = CenteredDesign::naive(&data);
        let fit = fit_node(family, &data, &vec![1.0; data.n()], &design).unwrap();
        let scores = score(family, &fit.params, &data, &design).unwrap();
        let x: Vec<f64> = data.samples().iter().map(|s| s.covariates[0]).collect();
        pvals.push(variable_test(&scores, &x, 0).unwrap().p_value());
    }
    let (d, p) = ks_uniform_p_value(pvals);
    report(
        9,
        "split p-values uniform under independence",
        p > KS_LEVEL,
        format!("KS D = {d:.4}, p = {p:.3} over {KS_SIMS} simulations of n = {NULL_N} (reject below {KS_LEVEL})"),
    );
}

// ---------------------------------------------------------------------------
// DGP validators

#[test]
fn criterion_10_dgp_validators() {
    let zero = [0.0; 5];
    let propensities_ok = Setup::C.propensity(&zero) == 0.5
        && Setup::D.propensity(&zero) == 1.0 / 3.0
        && Setup::A.propensity(&zero) == 0.1;

    let mut fractions = Vec::new();
    for setup in [Setup::A, Setup::B, Setup::C, Setup::D] {
        let spec = DgpSpec::new(setup, OutcomeModel::Weibull, 5000, 10, 10);
        assert_eq!(spec.censoring, Censoring::Calibrated { fraction: 0.5 });
        let (data, _) = dgp::sample(&spec).unwrap();
        let censored = data
            .samples()
            .iter()
            .filter(|s| matches!(s.outcome, OutcomeValue::Survival { event: false, .. }))
            .count();
        fractions.push((setup, censored as f64 / data.n() as f64));
    }
    let censoring_ok = fractions
        .iter()
        .all(|&(_, f)| (CENSORING_RANGE.0..=CENSORING_RANGE.1).contains(&f));

    let n = 20_000;
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut counts = [0usize; 4];
    for _ in 0..n {
        if let OutcomeValue::Ordinal { level, .. } = dgp::draw_outcome(OutcomeModel::Multinomial4, 0.0, None, &mut rng)
        {
            counts[level - 1] += 1;
        }
    }
    let band = 3.0 / (n as f64).sqrt();
    let freqs: Vec<f64> = counts.iter().map(|&c| c as f64 / n as f64).collect();
    let multinomial_ok = freqs.iter().all(|f| (f - 0.25).abs() <= band);

    report(
        10,
        "dgp propensities, censoring, multinomial null",
        propensities_ok && censoring_ok && multinomial_ok,
        format!(
            "propensity points {}; censored fractions {}; category frequencies {:?} (band {band:.4})",
            if propensities_ok { "exact" } else { "wrong" },
            fractions
                .iter()
                .map(|(s, f)| format!("{s} {f:.3}"))
                .collect::<Vec<_>>()
                .join(", "),
            freqs.iter().map(|f| format!("{f:.4}")).collect::<Vec<_>>()
        ),
    );
}

// ---------------------------------------------------------------------------
// Centering-weight algebra

fn brute_force_binomial_weight(pi: f64, eta0: f64, eta1: f64) -> f64 {
    let p0 = 1.0 / (1.0 + (-eta0).exp());
    let p1 = 1.0 / (1.0 + (-eta1).exp());
    let v0 = p0 * (1.0 - p0);
    let v1 = p1 * (1.0 - p1);
    let a = pi * v1 / (pi * v1 + (1.0 - pi) * v0);
    a.clamp(0.01, 0.99)
}

#[test]
fn criterion_11_centering_weights() {
    let (data, _) = dgp::sample(&DgpSpec::new(Setup::A, OutcomeModel::Normal, 400, 10, 11)).unwrap();
    let profile = estimate_profile(&data, ModelFamily::LinearGaussian, &NuisanceConfig::default(), 11).unwrap();
    let a = profile.a.as_ref().unwrap();
    let nu = profile.nu.as_ref().unwrap();
    let gaussian_ok = a == &profile.pi && nu == &profile.m;

    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    for _ in 0..GAO_PROFILES {
        let n = 50;
        let pi: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..0.99)).collect();
        let eta0: Vec<f64> = (0..n).map(|_| 2.0 * rng.sample::<f64, _>(StandardNormal)).collect();
        let eta1: Vec<f64> = (0..n).map(|_| 2.0 * rng.sample::<f64, _>(StandardNormal)).collect();
        let a = compute_gao_weights(&pi, &eta0, &eta1, ModelFamily::BinomialLogit, None).unwrap();
        for i in 0..n {
            worst = worst.max((a[i] - brute_force_binomial_weight(pi[i], eta0[i], eta1[i])).abs());
        }
    }
    report(
        11,
        "gaussian weights equal propensities; binomial weights vs brute force",
        gaussian_ok && worst <= GAO_TOL,
        format!(
            "gaussian a == pi and nu == m: {gaussian_ok}; binomial max abs difference {worst:.1e} over {GAO_PROFILES} profiles (limit {GAO_TOL:e})"
        ),
    );
}

// ---------------------------------------------------------------------------
// Determinism

fn results_bytes(cfg: &ExperimentConfig) -> Vec<u8> {
    let out = run_experiment(cfg).unwrap();
    let mut buf = Vec::new();
    write_results_csv(&mut buf, &out.records).unwrap();
    buf
}

#[test]
fn criterion_12_determinism_across_workers() {
    let base = ExperimentConfig {
        setups: vec![
            Setup::C,
            Setup::Uniform {
                part: dgp::TablePart::B,
                row: 3,
            },
        ],
        outcomes: vec![OutcomeModel::Normal, OutcomeModel::Binomial, OutcomeModel::Weibull],
        variants: Variant::ALL.to_vec(),
        replications: 2,
        n: vec![200],
        test_size: 100,
        forest: ForestConfig {
            n_trees: 20,
            ..ForestConfig::default()
        },
        ..ExperimentConfig::default()
    };
    let one = results_bytes(&ExperimentConfig {
        workers: Some(1),
        ..base.clone()
    });
    let four = results_bytes(&ExperimentConfig {
        workers: Some(4),
        ..base.clone()
    });
    let again = results_bytes(&ExperimentConfig {
        workers: Some(3),
        ..base
    });
    let lines = one.iter().filter(|&&b| b == b'\n').count() - 1;
    report(
        12,
        "results.csv identical across worker counts",
        one == four && one == again,
        format!(
            "{lines} records; 1 vs 4 workers identical: {}, 1 vs 3: {}",
            one == four,
            one == again
        ),
    );
}
