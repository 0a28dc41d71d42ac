use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use unrolled_es::config::{parse_spec, ExperimentSpec};
use unrolled_es::estimators::EstimatorKind;
use unrolled_es::harness::{one_shot_estimate, run_suite, spec_variance, SuiteOptions, SUITES};
use unrolled_es::output::{write_json, write_run, write_sidecar, write_variance_csv, RunSummary, Sidecar};
use unrolled_es::tasks::TASKS;

#[derive(Parser)]
#[command(name = "unrolled-es", version, about = "ES gradient estimators for unrolled computation graphs")]
struct Cli {
    /// Experiment spec (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides the config's `out`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for particle and replicate fan-out.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// One-shot gradient estimate at the configured starting θ.
    Estimate,
    /// Total-variance sweep over the config's `[variance]` truncation lengths.
    Variance,
    /// Meta-optimization run; writes trace.csv and summary.json.
    MetaOpt,
    /// Runs a preconfigured experiment suite and checks its thresholds.
    Suite {
        name: String,
        /// Reduced grids and replicate counts.
        #[arg(long)]
        quick: bool,
    },
    /// Registered tasks.
    Tasks {
        #[command(subcommand)]
        action: List,
    },
    /// Registered estimators.
    Estimators {
        #[command(subcommand)]
        action: List,
    },
}

#[derive(Subcommand)]
enum List {
    List,
}

const DEFAULT_OUT: &str = "results";

fn load(cli: &Cli) -> Result<ExperimentSpec> {
    let Some(path) = &cli.config else {
        bail!("this command needs --config <path>");
    };
    let mut spec = parse_spec(path).with_context(|| format!("loading {}", path.display()))?;
    if let Some(seed) = cli.seed {
        spec.seed = seed;
    }
    if let Some(out) = &cli.out {
        spec.out = Some(out.clone());
    }
    Ok(spec)
}

fn out_dir(spec: &ExperimentSpec) -> PathBuf {
    spec.out.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

fn meta(spec: &ExperimentSpec) -> Sidecar {
    Sidecar::new(spec.seed, spec.to_toml_string())
}

fn run(cli: &Cli) -> Result<bool> {
    match &cli.command {
        Command::Tasks { .. } => {
            for (id, about) in TASKS {
                println!("{id:<16} {about}");
            }
            Ok(true)
        }
        Command::Estimators { .. } => {
            for kind in EstimatorKind::ALL {
                println!("{:<10} {}", kind.as_str(), kind.description());
            }
            Ok(true)
        }
        Command::Estimate => {
            let spec = load(cli)?;
            let shot = one_shot_estimate(&spec)?;
            let path = out_dir(&spec).join("estimate.json");
            write_json(&path, &shot)?;
            write_sidecar(&path, &meta(&spec))?;
            println!("{}", serde_json::to_string_pretty(&shot)?);
            Ok(true)
        }
        Command::Variance => {
            let spec = load(cli)?;
            let rows = spec_variance(&spec)?;
            let path = out_dir(&spec).join("variance.csv");
            write_variance_csv(&path, &rows, &meta(&spec))?;
            for r in &rows {
                println!("{} K={:<4} tr(Var)={:.6e} |mean|={:.6e}", r.estimator, r.k, r.total_variance, r.mean_grad_norm);
            }
            println!("wrote {}", path.display());
            Ok(true)
        }
        Command::MetaOpt => {
            let spec = load(cli)?;
            let trace = spec.run()?;
            let dir = out_dir(&spec);
            write_run(&dir, &trace, &meta(&spec))?;
            println!("{}", serde_json::to_string_pretty(&RunSummary::from(&trace))?);
            if let Some(f) = &trace.failure {
                eprintln!("run stopped early: {f}");
            }
            Ok(trace.completed())
        }
        Command::Suite { name, quick } => {
            if !SUITES.contains(&name.as_str()) {
                bail!("unknown suite `{name}` (expected one of {})", SUITES.join(", "));
            }
            let opts = SuiteOptions {
                seed: cli.seed.unwrap_or(0),
                out: cli.out.clone().unwrap_or_else(|| Path::new(DEFAULT_OUT).to_path_buf()),
                quick: *quick,
            };
            let report = run_suite(name, &opts)?;
            for c in &report.checks {
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            Ok(report.passed())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot set up {n} workers: {e}");
            return ExitCode::from(2);
        }
    }
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
