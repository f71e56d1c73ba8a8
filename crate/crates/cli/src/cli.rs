use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "ramac",
    version,
    about = "Delay-constrained energy/utility optimization for random-access networks"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a canonical topology file.
    Gen(GenArgs),
    /// Minimum feasible delay bound of a topology.
    Mindc(MindcArgs),
    /// Solve the scalarized problem for one (λ1, λ2, D_c).
    Solve(SolveArgs),
    /// Trace tradeoff curves over delay bounds and weights.
    Sweep(SweepArgs),
    /// Run the distributed algorithm and write its convergence trace.
    Distributed(DistributedArgs),
    /// Packet-level simulation of an operating point.
    Simulate(SimulateArgs),
    /// Re-run the command recorded in a manifest.
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Shape {
    Linear,
    Star,
    Geometric,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long, value_enum)]
    pub shape: Shape,
    #[arg(long)]
    pub n: usize,
    /// Communication range relative to the unit square (geometric only).
    #[arg(long)]
    pub factor: Option<f64>,
    /// Placement seed (geometric only).
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Barrier,
    Bruteforce,
}

#[derive(Debug, Args)]
pub struct MindcArgs {
    #[arg(long)]
    pub topo: PathBuf,
    #[arg(long, value_enum, default_value_t = Method::Barrier)]
    pub method: Method,
    /// Grid step of the brute-force search.
    #[arg(long, default_value_t = 0.01)]
    pub resolution: f64,
    /// Feasibility report (JSON).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[arg(long)]
    pub topo: PathBuf,
    #[arg(long)]
    pub lambda1: f64,
    #[arg(long)]
    pub lambda2: f64,
    #[arg(long)]
    pub dc: f64,
    /// Solve report (JSON).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub topo: PathBuf,
    /// Delay bounds in slots.
    #[arg(
        long,
        value_delimiter = ',',
        required_unless_present = "dc_factor",
        conflicts_with = "dc_factor"
    )]
    pub dc: Vec<f64>,
    /// Delay bounds as multiples of MinDc.
    #[arg(long, value_delimiter = ',')]
    pub dc_factor: Vec<f64>,
    /// Energy weights; every combination with --lambda2 is solved.
    #[arg(long, value_delimiter = ',', required = true)]
    pub lambda1: Vec<f64>,
    #[arg(long, value_delimiter = ',', required = true)]
    pub lambda2: Vec<f64>,
    /// Tradeoff points (CSV).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DistributedArgs {
    #[arg(long)]
    pub topo: PathBuf,
    #[arg(long)]
    pub lambda1: f64,
    #[arg(long)]
    pub lambda2: f64,
    #[arg(long)]
    pub dc: f64,
    #[arg(long, default_value_t = 0.01)]
    pub alpha: f64,
    #[arg(long, default_value_t = 500)]
    pub iters: usize,
    /// Initial per-link probability.
    #[arg(long, default_value_t = 0.1)]
    pub p0: f64,
    /// Initial price (default 2·λ2).
    #[arg(long)]
    pub mu0: Option<f64>,
    /// Relative cost error counted as converged.
    #[arg(long, default_value_t = 0.01)]
    pub threshold: f64,
    /// Keep iterating after the threshold is reached.
    #[arg(long)]
    pub no_early_stop: bool,
    /// Stop once no price moves by more than this.
    #[arg(long, default_value_t = 0.0)]
    pub dual_tol: f64,
    /// Solve report to measure errors against.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    /// Links to trace, as FROM-TO node ids (default: the first link).
    #[arg(long, value_delimiter = ',')]
    pub watch: Vec<String>,
    /// Convergence trace (CSV).
    #[arg(long)]
    pub trace_out: PathBuf,
    /// Final state and summary (JSON).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub topo: PathBuf,
    /// JSON report whose "state" holds probabilities and rates (from solve or distributed).
    #[arg(long)]
    pub solution: PathBuf,
    #[arg(long, default_value_t = 1_000_000)]
    pub slots: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Slots excluded from statistics (default: 1% of the run).
    #[arg(long)]
    pub warmup: Option<u64>,
    /// Keep every queue backlogged.
    #[arg(long)]
    pub saturated: bool,
    /// Per-link comparison (CSV).
    #[arg(long)]
    pub out: PathBuf,
    /// Full simulation report (JSON).
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    pub manifest: PathBuf,
    /// Fail unless every output hashes to the recorded digest.
    #[arg(long)]
    pub check: bool,
}
