//! Effect of CZ fidelity and readout error on the energy at the optimum,
//! exact and with sampled shots.
//!
//! `cargo run --example noisy_sim`

use parvqe::circuit::{build_circuit, MeasurementSetting};
use parvqe::executor::estimate_energy;
use parvqe::hubbard::{exact_ground_energy, optimal_params, HubbardParams};
use parvqe::rng;
use parvqe::sim::{exact_distribution, run_circuit, sample_shots, PairNoiseSpec, ReadoutRates};

fn main() -> parvqe::Result<()> {
    let h = HubbardParams::default();
    let a = optimal_params(&h);
    let ground = exact_ground_energy(&h);
    let readout = ReadoutRates::new(0.02, 0.05)?;
    println!("fidelity  depol_p   exact_dist_energy  sampled(10k)  std_err");
    for f in [1.0, 0.99, 0.97, 0.95, 0.9, 0.85] {
        let noise = PairNoiseSpec::new(f, [readout, readout], 0.0)?;
        let mut stream = rng::stream(7, &[(f * 1000.0) as u64]);
        let mut hists = Vec::new();
        let mut dists = [[0.0; 4]; 2];
        for s in MeasurementSetting::ALL {
            let rho = run_circuit(&build_circuit(&a, &h, s), &noise, false);
            dists[s.index()] = exact_distribution(&rho, &noise);
            hists.push((s, sample_shots(&rho, &noise, 10_000, &mut stream)?));
        }
        let exact = parvqe::executor::estimate_from_distributions(&dists[0], &dists[1], &h, None);
        let sampled = estimate_energy(&hists, &h, None)?;
        println!(
            "{f:>8.2}  {:.4}   {:>+.6}          {:>+.6}     {:.4}",
            noise.depol_p,
            exact.value - ground,
            sampled.value - ground,
            sampled.std_err
        );
    }
    println!("(energies shown as error above the ground energy {ground:.6})");
    Ok(())
}
