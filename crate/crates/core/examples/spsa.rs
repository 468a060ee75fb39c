//! SPSA on the exact oracle and on 25 simulated pairs in parallel.
//!
//! `cargo run --example spsa`

use parvqe::device::{greedy_select, DeviceTopology};
use parvqe::executor::Executor;
use parvqe::hubbard::{exact_ground_energy, AnsatzParams, HubbardParams};
use parvqe::optimizers::{spsa_run, DeviceEvaluator, ExactEvaluator, ParallelMode, SpsaConfig};
use parvqe::rng;

fn main() -> parvqe::Result<()> {
    let h = HubbardParams::default();
    let ground = exact_ground_energy(&h);
    let start = AnsatzParams::new(0.6, 0.8);

    let cfg = SpsaConfig {
        iterations: 100,
        ..SpsaConfig::default()
    };
    let trace = spsa_run(&cfg, &mut ExactEvaluator { hubbard: h }, start, &mut rng::stream(1, &[]), Some(&h))?;
    let f = trace.final_params;
    println!("noiseless: final ({:.4}, {:.4}), error {:.2e}", f.phi, f.theta, trace.records.last().unwrap().e_raw - ground);

    let topology = DeviceTopology::shipped();
    let pairs = greedy_select(&topology, Some(25), None).pairs;
    let exec = Executor::new(topology, h, 4)?;
    let confusions = exec.measure_confusions(&pairs, 10_000, 2)?;
    let mut eval = DeviceEvaluator::new(&exec, pairs, 1000, 3, ParallelMode::SameParams)?.with_confusions(&confusions);
    let cfg = SpsaConfig::default();
    let trace = spsa_run(&cfg, &mut eval, start, &mut rng::stream(1, &[]), Some(&h))?;
    println!("25 pairs, 1000 shots, NI:");
    for r in trace.records.iter().step_by(5) {
        println!(
            "  it {:>3}  ni {:+.4}  raw {:+.4}  exact {:+.4}",
            r.iteration,
            r.e_ni.unwrap_or(f64::NAN),
            r.e_raw,
            r.e_exact.unwrap_or(f64::NAN)
        );
    }
    println!("batches submitted: {}", eval.batches());
    Ok(())
}
