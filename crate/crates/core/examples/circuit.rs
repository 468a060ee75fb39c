//! Prints the compiled native circuits for both measurement settings and
//! the energy read off their noiseless outcome distributions.
//!
//! `cargo run --example circuit [-- PHI THETA]`

use parvqe::circuit::{build_circuit, MeasurementSetting};
use parvqe::executor::estimate_from_distributions;
use parvqe::hubbard::{exact_energy, AnsatzParams, HubbardParams};
use parvqe::sim::{exact_distribution, run_circuit, PairNoiseSpec};

fn main() -> parvqe::Result<()> {
    let args: Vec<f64> = std::env::args().skip(1).filter_map(|s| s.parse().ok()).collect();
    let a = AnsatzParams::new(*args.first().unwrap_or(&0.2318), *args.get(1).unwrap_or(&0.3927));
    let h = HubbardParams::default();
    let noise = PairNoiseSpec::noiseless();
    let mut dists = [[0.0; 4]; 2];
    for s in MeasurementSetting::ALL {
        let c = build_circuit(&a, &h, s);
        print!("{}", c.dump());
        dists[s.index()] = exact_distribution(&run_circuit(&c, &noise, false), &noise);
        println!("# P(00, 01, 10, 11) = {:.6?}\n", dists[s.index()]);
    }
    let e = estimate_from_distributions(&dists[0], &dists[1], &h, None);
    println!("energy from circuits {:.12}", e.value);
    println!("exact energy         {:.12}", exact_energy(&a, &h));
    Ok(())
}
