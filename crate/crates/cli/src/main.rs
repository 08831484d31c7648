//! Command-line interface: estimation, calibration weights, diagnostics, and
//! the simulation harness, with reproducible JSON artifacts.
//!
//! Exit codes: 0 success, 1 configuration error, 2 data validation error,
//! 3 numerical failure.

mod commands;
mod runcfg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use causal_transport::error::{Error, ErrorCategory};

#[derive(Parser)]
#[command(
    name = "causal-transport",
    version,
    about = "Counterfactual means and causal contrasts under covariate shift",
    long_about = "Estimates counterfactual means and treatment contrasts when the \
experimental sample differs from the target population: outcome modeling, inverse \
selection weighting, and augmented doubly-robust estimators with cross-fitted \
ridge-GLM nuisances; entropy-balancing calibration against target moments; balance, \
overlap, and heterogeneity diagnostics; and a Monte Carlo validation harness.\n\n\
All randomness is seeded and recorded in output artifacts; default artifacts are \
byte-identical across reruns and worker counts. Thread count and output paths are \
execution details and are not embedded in artifacts."
)]
struct Cli {
    /// Worker threads (default: CAUSAL_TRANSPORT_THREADS or all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct DataArgs {
    /// Input delimited text file with a header row.
    #[arg(long)]
    input: PathBuf,
    /// Comma-separated covariate column names.
    #[arg(long)]
    covariates: Option<String>,
    /// Treatment column name.
    #[arg(long)]
    treatment: Option<String>,
    /// Outcome column name.
    #[arg(long)]
    outcome: Option<String>,
    /// Selection indicator column name (1 = study, 0 = external).
    #[arg(long)]
    selection: Option<String>,
    /// Field delimiter.
    #[arg(long)]
    delimiter: Option<char>,
    /// Declared number of treatment arms K+1 (default: inferred from data).
    #[arg(long)]
    arms: Option<usize>,
    /// JSON config file supplying defaults for these flags (flags win).
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct NuisanceArgs {
    /// Cross-fitting fold count.
    #[arg(long)]
    folds: Option<usize>,
    /// Lower propensity trim bound.
    #[arg(long)]
    trim_lo: Option<f64>,
    /// Upper propensity trim bound.
    #[arg(long)]
    trim_hi: Option<f64>,
    /// Comma-separated descending ridge penalty grid.
    #[arg(long)]
    lambda_grid: Option<String>,
    /// Inner cross-validation folds for penalty selection.
    #[arg(long)]
    cv_folds: Option<usize>,
    /// Seed for folds, penalty selection, and bootstrap streams.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate counterfactual means and contrasts from a data file.
    Estimate {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        nuisance: NuisanceArgs,
        /// Estimator: om, isw, or aisw.
        #[arg(long, default_value = "aisw")]
        estimator: String,
        /// Estimand: generalize or transport.
        #[arg(long, default_value = "generalize")]
        estimand: String,
        /// Hajek normalization (divide by realized weight sums).
        #[arg(long)]
        hajek: bool,
        /// Confidence level for intervals.
        #[arg(long, default_value_t = 0.95)]
        ci_level: f64,
        /// Bootstrap scheme: none, np (nonparametric), or bayes.
        #[arg(long, default_value = "none")]
        boot: String,
        /// Bootstrap replicate count.
        #[arg(long = "B", alias = "b", default_value_t = 500)]
        b: usize,
        /// Bootstrap interval method: percentile or normal.
        #[arg(long, default_value = "percentile")]
        ci: String,
        /// Hold nuisances fixed inside bootstrap replicates (fast, ignores
        /// nuisance estimation variability).
        #[arg(long)]
        boot_fast: bool,
        /// Stratified resampling preserving stratum and arm counts.
        #[arg(long)]
        boot_stratified: bool,
        /// Report output path (default: stdout).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Nuisance audit file (row, rho, pi_0.., mu_0..).
        #[arg(long)]
        audit: Option<PathBuf>,
    },
    /// Entropy-balancing calibration weights toward target moments.
    Weights {
        #[command(flatten)]
        data: DataArgs,
        /// Two-column text file of target moments: feature name, value.
        /// Feature names are covariate names, with `name^2` for second
        /// moments.
        #[arg(long)]
        target_moments: Option<PathBuf>,
        /// Inline target moment, e.g. --target x1=0.25 (repeatable).
        #[arg(long = "target")]
        targets: Vec<String>,
        /// Moment-matching tolerance.
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
        /// Newton iteration cap.
        #[arg(long, default_value_t = 200)]
        max_iter: usize,
        /// Known per-arm treatment probabilities for the calibrated
        /// estimate, e.g. 0.5,0.5 (default: uniform over arms).
        #[arg(long)]
        design_probs: Option<String>,
        /// Weight file output path (row, weight).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Balance/estimate report path (default: stdout).
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Balance, overlap, heterogeneity, and bias-decomposition diagnostics.
    Diagnose {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        nuisance: NuisanceArgs,
        /// Arm pair for the heterogeneity test, e.g. 1,0.
        #[arg(long, default_value = "1,0")]
        het_arms: String,
        /// Histogram bins for the overlap report.
        #[arg(long, default_value_t = 20)]
        bins: usize,
        /// Decompose the TATE-SATE gap over the distinct values of this
        /// covariate (works for discrete columns).
        #[arg(long)]
        decompose_by: Option<String>,
        /// Report output path (default: stdout).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Plot-ready SMD table path (covariate, scheme, smd).
        #[arg(long)]
        smd_table: Option<PathBuf>,
    },
    /// Monte Carlo replication study of estimator performance.
    Simulate {
        /// Scenario code: ll, ln, nl, nn (selection/outcome forms), or all.
        #[arg(long, default_value = "all")]
        scenario: String,
        /// Sample size per replication.
        #[arg(long, default_value_t = 2000)]
        n: usize,
        /// Replication count.
        #[arg(long, default_value_t = 500)]
        reps: usize,
        /// Master seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Comma-separated estimators: naive,om,isw,isw-hajek,aisw,aisw-hajek.
        #[arg(long)]
        estimators: Option<String>,
        /// Report output path (default: stdout).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Plot-ready long-format table path (scenario, estimator, metric,
        /// value).
        #[arg(long)]
        table: Option<PathBuf>,
        /// Record wall-clock runtimes in the report. Timed artifacts are not
        /// byte-reproducible.
        #[arg(long)]
        timings: bool,
    },
}

fn exit_code_for(err: &Error) -> u8 {
    match err.category() {
        ErrorCategory::Config | ErrorCategory::Io => 1,
        ErrorCategory::Data => 2,
        ErrorCategory::Numeric => 3,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests are successes, not config errors.
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };

    let threads = cli.threads.or_else(|| {
        std::env::var("CAUSAL_TRANSPORT_THREADS")
            .ok()
            .and_then(|v| v.parse().ok())
    });
    if let Some(t) = threads {
        if rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .is_err()
        {
            eprintln!("warning: thread pool already initialized; --threads ignored");
        }
    }

    let result = match cli.command {
        Command::Estimate {
            data,
            nuisance,
            estimator,
            estimand,
            hajek,
            ci_level,
            boot,
            b,
            ci,
            boot_fast,
            boot_stratified,
            out,
            audit,
        } => commands::estimate(commands::EstimateArgs {
            data,
            nuisance,
            estimator,
            estimand,
            hajek,
            ci_level,
            boot,
            b,
            ci,
            boot_fast,
            boot_stratified,
            out,
            audit,
        }),
        Command::Weights {
            data,
            target_moments,
            targets,
            tol,
            max_iter,
            design_probs,
            out,
            report,
        } => commands::weights(commands::WeightsArgs {
            data,
            target_moments,
            targets,
            tol,
            max_iter,
            design_probs,
            out,
            report,
        }),
        Command::Diagnose {
            data,
            nuisance,
            het_arms,
            bins,
            decompose_by,
            out,
            smd_table,
        } => commands::diagnose(commands::DiagnoseArgs {
            data,
            nuisance,
            het_arms,
            bins,
            decompose_by,
            out,
            smd_table,
        }),
        Command::Simulate {
            scenario,
            n,
            reps,
            seed,
            estimators,
            out,
            table,
            timings,
        } => commands::simulate(commands::SimulateArgs {
            scenario,
            n,
            reps,
            seed,
            estimators,
            out,
            table,
            timings,
        }),
    };

    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}

pub(crate) use {DataArgs as CliDataArgs, NuisanceArgs as CliNuisanceArgs};
