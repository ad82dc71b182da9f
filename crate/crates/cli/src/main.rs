use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use hteforest::data::{load_csv, write_csv, Dataset, Schema, Variant};
use hteforest::dgp::{self, Censoring, DgpSpec, OutcomeModel, Setup};
use hteforest::experiment::{self, fit_external, ExperimentConfig};
use hteforest::forest::ForestConfig;
use hteforest::models::ModelFamily;
use hteforest::nuisance::{build_design, estimate_profile, NuisanceConfig};
use hteforest::tree::{grow_tree, TreeConfig};

#[derive(Parser)]
#[command(
    name = "hteforest",
    version,
    about = "Model-based forests for heterogeneous treatment effects"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a simulation benchmark and write results.csv, ratios.csv and summary.txt.
    Bench(BenchArgs),
    /// Simulation data generators.
    Dgp {
        #[command(subcommand)]
        command: DgpCommand,
    },
    /// Fit a forest to a CSV file and write per-row effect estimates.
    Fit(FitArgs),
    /// Grow a single tree on all rows and dump it as JSON.
    Tree(TreeArgs),
}

#[derive(Args)]
struct BenchArgs {
    /// JSON experiment configuration; defaults to the desk-scale profile.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Use the full simulation matrix with 500-tree forests.
    #[arg(long)]
    paper_scale: bool,
    #[arg(long)]
    workers: Option<usize>,
    /// Master seed; overrides the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides the configuration.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Number of replications; overrides the configuration.
    #[arg(long)]
    replications: Option<usize>,
}

#[derive(Subcommand)]
enum DgpCommand {
    /// Draw a dataset; also writes the true effects and a schema next to it.
    Sample(SampleArgs),
}

#[derive(Args)]
struct SampleArgs {
    /// A, B, C, D, or UA1..UA8 / UB1..UB8 for the uniform-covariate table.
    #[arg(long)]
    setup: Setup,
    /// normal, binomial, multinomial4 or weibull.
    #[arg(long, default_value = "normal")]
    outcome: OutcomeModel,
    #[arg(long, default_value_t = 800)]
    n: usize,
    #[arg(long, default_value_t = 10)]
    p: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Censored fraction for Weibull outcomes; 0 disables censoring.
    #[arg(long, default_value_t = 0.5)]
    censoring: f64,
    #[arg(long)]
    out: PathBuf,
    /// Ground-truth CSV (tau_true, mu_true, pi_true); defaults to <out>.truth.csv.
    #[arg(long)]
    truth: Option<PathBuf>,
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long)]
    data: PathBuf,
    /// JSON schema naming the treatment, outcome and covariate columns.
    #[arg(long)]
    schema: PathBuf,
    /// normal, binomial, ordinal<K>, weibull or cox.
    #[arg(long)]
    family: ModelFamily,
    /// naive, robinson_w, robinson, gao_w or gao.
    #[arg(long, default_value = "robinson")]
    variant: Variant,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 14)]
    min_node_size: usize,
    #[arg(long)]
    mtry: Option<usize>,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = 500)]
    trees: usize,
    #[arg(long, default_value_t = 0.5)]
    subsample: f64,
    #[arg(long, default_value_t = 30)]
    bins: usize,
    #[arg(long, default_value = "fit_out")]
    out: PathBuf,
    /// Also save the fitted forest as JSON.
    #[arg(long)]
    save_forest: Option<PathBuf>,
}

#[derive(Args)]
struct TreeArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Stop splitting when the adjusted p-value exceeds this level.
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long)]
    max_depth: Option<usize>,
    /// Write the JSON here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn load(model: &ModelArgs) -> Result<Dataset> {
    let schema =
        Schema::from_json_file(&model.schema).with_context(|| format!("reading schema {}", model.schema.display()))?;
    let (data, report) = load_csv(&model.data, &schema).with_context(|| format!("reading {}", model.data.display()))?;
    if report.dropped_missing_outcome > 0 {
        log::warn!("dropped {} rows with a missing outcome", report.dropped_missing_outcome);
    }
    Ok(data)
}

fn tree_config(model: &ModelArgs) -> TreeConfig {
    TreeConfig {
        min_node_size: model.min_node_size,
        mtry: model.mtry,
        seed: model.seed,
        ..TreeConfig::default()
    }
}

fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!("{stem}.{suffix}"))
}

fn bench(args: BenchArgs) -> Result<ExitCode> {
    let mut cfg = match (&args.config, args.paper_scale) {
        (Some(path), _) => {
            ExperimentConfig::from_json_file(path).with_context(|| format!("reading config {}", path.display()))?
        }
        (None, true) => ExperimentConfig::paper_scale(),
        (None, false) => ExperimentConfig::default(),
    };
    if args.config.is_some() && args.paper_scale {
        let paper = ExperimentConfig::paper_scale();
        cfg.forest.n_trees = paper.forest.n_trees;
        cfg.outcomes = paper.outcomes;
        cfg.n = paper.n;
        cfg.p = paper.p;
        cfg.replications = paper.replications;
    }
    if let Some(w) = args.workers {
        cfg.workers = Some(w);
    }
    if let Some(s) = args.seed {
        cfg.master_seed = s;
    }
    if let Some(r) = args.replications {
        cfg.replications = r;
    }
    let out = args
        .out
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("bench_out"));
    let result = experiment::run_experiment(&cfg)?;
    let table = experiment::write_outputs(&out, &result.records)?;
    print!("{}", experiment::render_summary(&table));
    println!("wrote {} records to {}", result.records.len(), out.display());
    if !result.failed_cells.is_empty() {
        for c in &result.failed_cells {
            eprintln!(
                "cell failed: setup {} outcome {} family {} n={} p={}",
                c.setup, c.outcome, c.fit_family, c.n, c.p
            );
        }
        return Ok(ExitCode::FAILURE);
    }
    Ok(ExitCode::SUCCESS)
}

fn sample(args: SampleArgs) -> Result<()> {
    let censoring = if args.censoring <= 0.0 {
        Censoring::None
    } else {
        Censoring::Calibrated {
            fraction: args.censoring,
        }
    };
    let spec = DgpSpec {
        censoring,
        ..DgpSpec::new(args.setup, args.outcome, args.n, args.p, args.seed)
    };
    let (data, truth) = dgp::sample(&spec)?;
    write_csv(&args.out, &data)?;
    let truth_path = args.truth.unwrap_or_else(|| sidecar(&args.out, "truth.csv"));
    truth.write_csv(std::fs::File::create(&truth_path)?)?;
    let schema_path = sidecar(&args.out, "schema.json");
    std::fs::write(&schema_path, serde_json::to_string_pretty(&data.default_schema())?)?;
    println!(
        "wrote {} rows to {} (truth {}, schema {})",
        data.n(),
        args.out.display(),
        truth_path.display(),
        schema_path.display()
    );
    Ok(())
}

fn fit(args: FitArgs) -> Result<()> {
    let data = load(&args.model)?;
    let forest = ForestConfig {
        n_trees: args.trees,
        subsample_fraction: args.subsample,
        tree: tree_config(&args.model),
        seed: args.model.seed,
    };
    let fitted = fit_external(
        &data,
        args.model.family,
        args.model.variant,
        &forest,
        &NuisanceConfig::default(),
        args.bins,
    )?;
    std::fs::create_dir_all(&args.out)?;
    fitted.write_rows_csv(args.out.join("tau_hat.csv"))?;
    fitted.write_density_csv(args.out.join("tau_density.csv"))?;
    if let Some(path) = &args.save_forest {
        fitted.forest.save(path)?;
    }
    let fallbacks = fitted.rows.iter().filter(|r| r.fallback).count();
    if fallbacks > 0 {
        log::warn!("{fallbacks} rows used the unsplit fit");
    }
    println!(
        "{} rows, family {}, variant {}: mean effect {:.4}; wrote {}",
        fitted.rows.len(),
        fitted.family,
        fitted.variant,
        fitted.mean_tau,
        args.out.display()
    );
    Ok(())
}

fn tree(args: TreeArgs) -> Result<()> {
    let data = load(&args.model)?;
    if !(args.alpha > 0.0 && args.alpha <= 1.0) {
        bail!("alpha must lie in (0, 1]");
    }
    let profile = match args.model.variant {
        Variant::Naive => None,
        _ => Some(estimate_profile(
            &data,
            args.model.family,
            &NuisanceConfig::default(),
            args.model.seed,
        )?),
    };
    let design = build_design(args.model.variant, &data, profile.as_ref())?;
    let cfg = TreeConfig {
        alpha: args.alpha,
        max_depth: args.max_depth,
        ..tree_config(&args.model)
    };
    cfg.validate(args.model.family)?;
    let rows: Vec<usize> = (0..data.n()).collect();
    let t = grow_tree(&data, args.model.family, &design, &cfg, &rows)?;
    let json = t.to_json()?;
    match args.out {
        Some(path) => std::fs::write(path, json)?,
        None => {
            let mut stdout = std::io::stdout().lock();
            match writeln!(stdout, "{json}") {
                // a closed pipe (e.g. `| head`) is not an error
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => return Err(e.into()),
                _ => {}
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Bench(a) => bench(a),
        Command::Dgp {
            command: DgpCommand::Sample(a),
        } => sample(a).map(|_| ExitCode::SUCCESS),
        Command::Fit(a) => fit(a).map(|_| ExitCode::SUCCESS),
        Command::Tree(a) => tree(a).map(|_| ExitCode::SUCCESS),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
