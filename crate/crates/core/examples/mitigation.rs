//! Readout noise inversion and TFLO on a single noisy pair.
//!
//! `cargo run --example mitigation`

use parvqe::device::DeviceTopology;
use parvqe::executor::{BatchJob, Executor};
use parvqe::hubbard::{exact_energy, optimal_params, HubbardParams};
use parvqe::mitigation::{tflo_correct, tflo_reference_exact};
use parvqe::sim::ReadoutRates;

fn main() -> parvqe::Result<()> {
    let h = HubbardParams::default();
    let topology = DeviceTopology::uniform_pairs(1, 0.95, ReadoutRates::new(0.03, 0.08)?)?;
    let pair = topology.edges()[0].pair();
    let exec = Executor::new(topology, h, 2)?;
    let confusions = exec.measure_confusions(&[pair], 100_000, 1)?;
    println!("measured confusion (cond {:.3}):", confusions[&pair].condition_number());
    for row in confusions[&pair].to_rows() {
        println!("  {row:.4?}");
    }

    let a = optimal_params(&h);
    let run = |params, seed| -> parvqe::Result<_> {
        let job = BatchJob::same_params(&[pair], params, 100_000, seed).with_ni(true);
        Ok(exec.run_batch(&job)?.energies(&h, Some(&confusions))?[0])
    };
    let main = run(a, 2)?;
    let reference = run(a.tflo_reference(), 3)?;
    let ref_exact = tflo_reference_exact(&a, &h);
    let ni = main.ni.expect("NI requested");
    let ref_ni = reference.ni.expect("NI requested");
    let exact = exact_energy(&a, &h);
    println!("exact      {exact:+.5}");
    println!("raw        {:+.5}", main.raw.value);
    println!("NI         {:+.5}", ni.value);
    println!("TFLO       {:+.5}", tflo_correct(main.raw.value, ref_exact, reference.raw.value));
    println!("TFLO + NI  {:+.5}", tflo_correct(ni.value, ref_exact, ref_ni.value));
    Ok(())
}
