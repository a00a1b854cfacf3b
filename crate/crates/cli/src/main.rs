//! `afeg`: generate instances, compute Gittins tables, evaluate policies,
//! fit parameters, rerun the experiments and serve the advisor.
//!
//! Exit codes: 0 success, 2 usage, 3 validation, 4 resource guard, 1 I/O.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use afeg::policy::PolicyKind;
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "afeg", version, about = "Adaptive frontier exploration on graphs")]
pub struct Cli {
    /// Start the advisor service (same as the `serve` subcommand).
    #[arg(long)]
    pub serve: bool,
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a random instance, its model and one sampled labelling.
    Generate(GenerateArgs),
    /// Compute the Gittins index table of an instance.
    Index(IndexArgs),
    /// Evaluate policies and write a results CSV.
    Eval(EvalArgs),
    /// Fit model parameters to one labelled graph by pseudo-likelihood.
    Fit(FitArgs),
    /// Rerun one of the experiments and write its CSV bundle.
    Reproduce(ReproduceArgs),
    /// Start the advisor service.
    Serve,
}

/// Where the instance comes from: a file or the random generator.
#[derive(Args, Debug, Clone)]
pub struct SourceArgs {
    /// Instance file (nodes with covariates, edges).
    #[arg(long, value_name = "PATH", conflicts_with_all = ["tree", "n", "extra_edges"])]
    pub instance: Option<PathBuf>,
    /// Model file; required with --instance, optional for generated graphs.
    #[arg(long, value_name = "PATH")]
    pub model: Option<PathBuf>,
    /// Generate a random tree, optionally giving its node count.
    #[arg(long, value_name = "N", num_args = 0..=1)]
    pub tree: Option<Option<usize>>,
    /// Node count of the generated graph.
    #[arg(short = 'n', value_name = "N")]
    pub n: Option<usize>,
    /// Extra non-tree edges added to the generated tree.
    #[arg(long, value_name = "K", default_value_t = 0)]
    pub extra_edges: usize,
    /// Covariate dimension of the generated graph.
    #[arg(long, value_name = "D", default_value_t = 5)]
    pub d: usize,
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory for instance.json, model.json and labels.json.
    #[arg(long, value_name = "DIR", default_value = ".")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct IndexArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    #[arg(long, value_parser = parse_beta, default_value = "0.9")]
    pub beta: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Index dump path; stdout when absent.
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    /// Experiment configuration file, instead of a single instance.
    #[arg(long, value_name = "PATH", conflicts_with_all = ["instance", "tree", "n"])]
    pub config: Option<PathBuf>,
    /// Discount factors, comma separated.
    #[arg(long, value_parser = parse_beta, value_delimiter = ',', default_value = "0.9")]
    pub beta: Vec<f64>,
    /// Policies, comma separated.
    #[arg(long, value_parser = parse_policy, value_delimiter = ',', default_value = "random,greedy,gittins")]
    pub policy: Vec<PolicyKind>,
    /// Monte Carlo rollouts per cell.
    #[arg(long, default_value_t = 200)]
    pub rollouts: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Deterministic policies are evaluated exactly up to this many nodes.
    #[arg(long, value_name = "N", default_value_t = 10)]
    pub exact_up_to: usize,
    /// Discounted results CSV; the undiscounted curves go next to it.
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
    /// Write the trace of one rollout of the first policy as JSON lines.
    #[arg(long, value_name = "PATH")]
    pub trace: Option<PathBuf>,
    /// Rollout worker threads.
    #[arg(long, value_name = "N")]
    pub jobs: Option<usize>,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    #[arg(long, value_name = "PATH")]
    pub instance: PathBuf,
    /// Observed labels of every node.
    #[arg(long, value_name = "PATH")]
    pub labels: PathBuf,
    /// L2 penalty on the parameters.
    #[arg(long, default_value_t = 0.0)]
    pub l2: f64,
    #[arg(long, default_value_t = 500)]
    pub max_iters: usize,
    #[arg(long, default_value_t = 1e-6)]
    pub tolerance: f64,
    /// Model path; stdout when absent.
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
    /// Write iterations, final gradient norm and the objective trace as JSON.
    #[arg(long, value_name = "PATH")]
    pub diagnostics: Option<PathBuf>,
    #[arg(long, value_name = "N")]
    pub jobs: Option<usize>,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    /// Random trees, n in {10, 50, 100}, beta in {0.5, 0.7, 0.9}.
    #[value(name = "1")]
    Trees,
    /// 50-node trees with 0 to 10 extra edges, beta = 0.9.
    #[value(name = "2")]
    Edges,
    /// Aggregated multi-component graph with fitted parameters, beta = 0.99.
    #[value(name = "3s")]
    Components,
}

#[derive(Args, Debug)]
pub struct ReproduceArgs {
    pub experiment: Experiment,
    #[arg(long, value_name = "DIR", default_value = "results")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Monte Carlo rollouts per cell.
    #[arg(long, default_value_t = 200)]
    pub rollouts: usize,
    /// Random instances per cell (experiments 1 and 2).
    #[arg(long, value_name = "N", default_value_t = 10)]
    pub instances: usize,
    /// Node threshold for the aggregated graph (experiment 3s).
    #[arg(long, default_value_t = 300)]
    pub tau: usize,
    #[arg(long, value_name = "D", default_value_t = 5)]
    pub d: usize,
    #[arg(long, value_name = "N")]
    pub jobs: Option<usize>,
}

fn parse_beta(s: &str) -> Result<f64, String> {
    let beta: f64 = s.parse().map_err(|e| format!("{s:?} is not a number: {e}"))?;
    if beta > 0.0 && beta < 1.0 {
        Ok(beta)
    } else {
        Err(format!("discount factor {beta} is not in (0, 1)"))
    }
}

fn parse_policy(s: &str) -> Result<PolicyKind, String> {
    s.parse().map_err(|e: afeg::policy::PolicyError| e.to_string())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                clap::error::ErrorKind::ValueValidation => 3,
                _ => 2,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
