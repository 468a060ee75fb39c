use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use parvqe::device::SelectionMethod;
use parvqe::harness::{self, Command, ExperimentConfig, Mitigation, OptimizerKind};
use parvqe::hubbard::{AnsatzParams, HubbardParams};
use parvqe::optimizers::ParallelMode;

#[derive(Parser)]
#[command(name = "parvqe", version, about = "Parallel VQE experiments on a simulated multi-pair device")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Optimal circuit on every pair individually, then on 1..p pairs in parallel
    BenchmarkPairs(Opts),
    /// Energy landscape over a phi/theta grid tiled across pairs
    Heatmap(Opts),
    /// Full optimization with repeats and final TFLO correction
    Vqe(Opts),
    /// SPSA at several shot counts
    ShotsSweep(Opts),
    /// SPSA against MGD for several pair counts
    OptimizerCompare(Opts),
}

#[derive(clap::Args)]
struct Opts {
    /// Device calibration JSON (bundled 80-qubit device when omitted)
    #[arg(long)]
    calibration: Option<PathBuf>,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    pairs: Option<usize>,
    /// greedy or matching
    #[arg(long, default_value = "greedy")]
    select: SelectionMethod,
    /// Minimum CZ fidelity for selected pairs
    #[arg(long)]
    cap: Option<f64>,
    #[arg(long)]
    shots: Option<u64>,
    /// spsa or mgd
    #[arg(long, default_value = "spsa")]
    optimizer: OptimizerKind,
    #[arg(long)]
    iterations: Option<usize>,
    /// none, ni, tflo or ni+tflo
    #[arg(long, default_value = "ni+tflo")]
    mitigation: Mitigation,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[arg(long)]
    cost_model: Option<PathBuf>,
    #[arg(long)]
    repeats: Option<usize>,
    #[arg(long, default_value_t = 20)]
    grid: usize,
    /// Comma-separated shot counts for shots-sweep
    #[arg(long, value_delimiter = ',', default_value = "100,1000,10000")]
    shot_list: Vec<u64>,
    /// Comma-separated pair counts for optimizer-compare
    #[arg(long, value_delimiter = ',', default_value = "2,4,6,8,12,16,20")]
    pair_counts: Vec<usize>,
    /// same-params or batch
    #[arg(long, value_parser = parse_mode)]
    mode: Option<ParallelMode>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long, default_value_t = 10_000)]
    confusion_shots: u64,
    /// Extra depolarizing probability on pairs with an active neighbor
    #[arg(long, default_value_t = 0.0)]
    crosstalk: f64,
    #[arg(long, default_value_t = 1.0)]
    t: f64,
    #[arg(long, default_value_t = 2.0)]
    u: f64,
    #[arg(long, default_value_t = 0.6)]
    start_phi: f64,
    #[arg(long, default_value_t = 0.8)]
    start_theta: f64,
    /// Use exact outcome probabilities instead of sampled shots
    #[arg(long)]
    exact: bool,
}

fn parse_mode(s: &str) -> Result<ParallelMode, String> {
    match s {
        "same-params" => Ok(ParallelMode::SameParams),
        "batch" => Ok(ParallelMode::Batch),
        other => Err(format!("unknown mode {other:?}")),
    }
}

impl Opts {
    fn into_config(self) -> parvqe::Result<ExperimentConfig> {
        Ok(ExperimentConfig {
            calibration: self.calibration,
            cost_model: self.cost_model,
            seed: self.seed,
            pairs: self.pairs,
            select: self.select,
            cap: self.cap,
            shots: self.shots,
            optimizer: self.optimizer,
            iterations: self.iterations,
            mitigation: self.mitigation,
            out: self.out,
            workers: self.workers,
            hubbard: HubbardParams::new(self.t, self.u)?,
            confusion_shots: self.confusion_shots,
            crosstalk: self.crosstalk,
            repeats: self.repeats,
            grid: self.grid,
            start: AnsatzParams::new(self.start_phi, self.start_theta),
            shot_list: self.shot_list,
            pair_counts: self.pair_counts,
            mode: self.mode,
            eta: self.eta,
            exact: self.exact,
        })
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, opts) = match cli.command {
        Cmd::BenchmarkPairs(o) => (Command::BenchmarkPairs, o),
        Cmd::Heatmap(o) => (Command::Heatmap, o),
        Cmd::Vqe(o) => (Command::Vqe, o),
        Cmd::ShotsSweep(o) => (Command::ShotsSweep, o),
        Cmd::OptimizerCompare(o) => (Command::OptimizerCompare, o),
    };
    let result = opts.into_config().and_then(|cfg| harness::run(command, &cfg));
    match result {
        Ok(record) => {
            println!("{command}: wrote {} files to {}", record.artifacts.len(), record.config.out.display());
            for (k, v) in &record.metrics {
                println!("  {k} = {v}");
            }
            for (k, v) in &record.modeled_seconds {
                println!("  modeled {k} = {v:.1} s");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
