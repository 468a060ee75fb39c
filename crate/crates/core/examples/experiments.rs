//! Runs every harness experiment with small settings and prints the headline
//! metrics. Output goes to `target/experiments/<command>`.
//!
//! `cargo run --release --example experiments [-- SEED]`

use parvqe::harness::{run, Command, ExperimentConfig, OptimizerKind};

fn main() -> parvqe::Result<()> {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1);
    for command in Command::ALL {
        let mut cfg = ExperimentConfig::new(seed, format!("target/experiments/{command}"));
        cfg.workers = 4;
        if command == Command::Vqe {
            cfg.optimizer = OptimizerKind::Mgd;
        }
        let record = run(command, &cfg)?;
        println!("{command} -> {}", cfg.out.display());
        for (k, v) in &record.metrics {
            println!("  {k:<36} {v:.4}");
        }
    }
    Ok(())
}
