//! Model gradient descent with one sample point per pair, noiseless and
//! on 12 simulated pairs.
//!
//! `cargo run --example mgd [-- DELTA]`

use parvqe::device::{greedy_select, DeviceTopology};
use parvqe::executor::Executor;
use parvqe::hubbard::{exact_energy, exact_ground_energy, AnsatzParams, HubbardParams};
use parvqe::optimizers::{mgd_run, DeviceEvaluator, ExactEvaluator, MgdConfig, ParallelMode};
use parvqe::rng;

fn main() -> parvqe::Result<()> {
    let delta: f64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0.6);
    let h = HubbardParams::default();
    let ground = exact_ground_energy(&h);
    let start = AnsatzParams::new(0.6, 0.8);
    let cfg = MgdConfig {
        delta,
        iterations: 50,
        ..MgdConfig::default()
    };
    for seed in 0..5 {
        let trace = mgd_run(&cfg, &mut ExactEvaluator { hubbard: h }, start, 12, &mut rng::stream(seed, &[]), None)?;
        let f = trace.final_params;
        println!(
            "noiseless seed {seed}: final ({:+.4}, {:+.4}) error {:.4}",
            f.phi,
            f.theta,
            exact_energy(&f, &h) - ground
        );
    }

    let topology = DeviceTopology::shipped();
    let pairs = greedy_select(&topology, Some(12), None).pairs;
    let exec = Executor::new(topology, h, 4)?;
    let confusions = exec.measure_confusions(&pairs, 10_000, 2)?;
    let mut eval = DeviceEvaluator::new(&exec, pairs, 1000, 3, ParallelMode::Batch)?.with_confusions(&confusions);
    let cfg = MgdConfig { delta, ..MgdConfig::default() };
    let trace = mgd_run(&cfg, &mut eval, start, 12, &mut rng::stream(9, &[]), Some(&h))?;
    for r in &trace.records {
        println!(
            "it {:>2}  ({:+.3}, {:+.3})  surrogate {:+.4}  exact {:+.4}",
            r.iteration,
            r.phi,
            r.theta,
            r.e_ni.unwrap_or(r.e_raw),
            r.e_exact.unwrap_or(f64::NAN)
        );
    }
    println!("{} batches for {} evaluations", eval.batches(), trace.evaluations);
    Ok(())
}
