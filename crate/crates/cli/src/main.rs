mod commands;
mod error;
mod io;

use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::error::CliResult;

#[derive(Parser)]
#[command(name = "lrvb", version, about = "Mean-field and linear-response variational Bayes for Gaussian mixtures")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a data set from a mixture described in JSON.
    Simulate(SimulateArgs),
    /// Fit the mean-field approximation.
    Fit(FitArgs),
    /// Linear-response covariance of the α statistics of a fit.
    Lrvb(LrvbArgs),
    /// Influence of each data value on the posterior means.
    Influence(InfluenceArgs),
    /// Run the reference Gibbs sampler and summarize it.
    Gibbs(GibbsArgs),
    /// Tabulate Gibbs, MFVB and LRVB standard deviations side by side.
    Compare(CompareArgs),
    /// Time LRVB and Gibbs over a sweep of N, P or K.
    Scaling(ScalingArgs),
    /// Variance table for a multivariate normal target.
    MvnDemo(MvnDemoArgs),
}

#[derive(clap::Args, Serialize)]
pub struct SimulateArgs {
    /// Mixture JSON with weights, means, covariances and seed.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub n: usize,
    /// Defaults to the seed in the config.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
    /// Component of each row; defaults to truth-assignments.csv beside --out.
    #[arg(long)]
    #[serde(skip)]
    pub assignments_out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum InitKind {
    Kmeans,
    Random,
    Truth,
}

#[derive(clap::Args, Serialize)]
pub struct FitArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Solver configuration JSON; replaces the solver flags below.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Number of components.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long, value_enum, default_value = "kmeans")]
    pub init: InitKind,
    /// Mixture JSON used by `--init truth`.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long, default_value_t = 1e-9)]
    pub tol: f64,
    #[arg(long, default_value_t = 10_000)]
    pub max_iter: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum, Serialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Weighted monomial moments; never forms per-point products.
    Gmm,
    /// Per-point Schur complement over block matrices.
    Alpha,
    /// Dense solve over every statistic.
    Full,
}

#[derive(clap::Args, Serialize)]
pub struct LrvbArgs {
    #[arg(long)]
    pub state: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value = "gmm")]
    pub method: Method,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(clap::Args, Serialize)]
pub struct InfluenceArgs {
    #[arg(long)]
    pub state: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// sigma_times_v_inverse or sigma_inverse.
    #[arg(long, default_value = "sigma_times_v_inverse")]
    pub prefactor: String,
    /// Also write influence on the second-order statistics x_a x_b.
    #[arg(long)]
    pub second_order: bool,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
    /// Per point and component, the largest rate of change of ‖E μ_k‖².
    #[arg(long)]
    #[serde(skip)]
    pub directional_out: Option<PathBuf>,
}

#[derive(clap::Args, Serialize)]
pub struct GibbsArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Mixture JSON used as the starting point.
    #[arg(long)]
    pub init: PathBuf,
    #[arg(long, default_value_t = 5000)]
    pub iters: usize,
    #[arg(long, default_value_t = 500)]
    pub burn: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
    /// Post-burn-in draws of the α statistics.
    #[arg(long)]
    #[serde(skip)]
    pub draws_out: Option<PathBuf>,
}

#[derive(clap::Args, Serialize)]
pub struct CompareArgs {
    #[arg(long)]
    pub gibbs: PathBuf,
    #[arg(long)]
    pub lrvb: PathBuf,
    /// Accept a chain below the effective-sample-size bar.
    #[arg(long)]
    pub force: bool,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
    /// Pairwise covariances; defaults to compare-pairs.csv beside --out.
    #[arg(long)]
    #[serde(skip)]
    pub pairs_out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum, Serialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    N,
    P,
    K,
}

#[derive(clap::Args, Serialize)]
pub struct ScalingArgs {
    #[arg(long, value_enum)]
    pub axis: Axis,
    /// Comma-separated values of the swept axis.
    #[arg(long, value_delimiter = ',', required = true)]
    pub values: Vec<usize>,
    #[arg(long, default_value_t = 10_000)]
    pub n: usize,
    #[arg(long, default_value_t = 2)]
    pub p: usize,
    #[arg(long, default_value_t = 2)]
    pub k: usize,
    /// Distance between consecutive component means.
    #[arg(long, default_value_t = 3.5)]
    pub separation: f64,
    #[arg(long, value_enum, default_value = "gmm")]
    pub method: Method,
    /// Timing repetitions; the fastest is reported.
    #[arg(long, default_value_t = 3)]
    pub reps: usize,
    #[arg(long, default_value_t = 1000)]
    pub gibbs_iters: usize,
    #[arg(long, default_value_t = 100)]
    pub gibbs_burn: usize,
    #[arg(long)]
    pub skip_gibbs: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(clap::Args, Serialize)]
pub struct MvnDemoArgs {
    /// JSON with `mu`, `sigma` and `partition`; replaces --dim and --rho.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 2)]
    pub dim: usize,
    /// Common correlation of an equicorrelated unit-variance target.
    #[arg(long, default_value_t = 0.9, allow_hyphen_values = true)]
    pub rho: f64,
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Simulate(a) => commands::simulate(&a),
        Command::Fit(a) => commands::fit(&a),
        Command::Lrvb(a) => commands::lrvb(&a),
        Command::Influence(a) => commands::influence(&a),
        Command::Gibbs(a) => commands::gibbs(&a),
        Command::Compare(a) => commands::compare(&a),
        Command::Scaling(a) => commands::scaling(&a),
        Command::MvnDemo(a) => commands::mvn_demo(&a),
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { error::EXIT_VALIDATION } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
