//! Exact energy landscape of the two-site Hubbard ansatz.
//!
//! `cargo run --example landscape [-- N]` prints the ground energy, the
//! optimal angles and the minimum over an N×N grid (default 200).

use parvqe::hubbard::{exact_energy, exact_ground_energy, landscape_axis, optimal_params, AnsatzParams, HubbardParams};

fn main() {
    let n: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(200);
    let h = HubbardParams::default();
    let ground = exact_ground_energy(&h);
    let best = optimal_params(&h);
    println!("ground energy {ground:.12} (1 - sqrt 5 = {:.12})", 1.0 - 5f64.sqrt());
    println!("optimum phi = {:.6}, theta = {:.6}", best.phi, best.theta);

    let axis = landscape_axis(n);
    let (mut min_e, mut at) = (f64::INFINITY, AnsatzParams::new(0.0, 0.0));
    for &phi in &axis {
        for &theta in &axis {
            let a = AnsatzParams::new(phi, theta);
            let e = exact_energy(&a, &h);
            if e < min_e {
                min_e = e;
                at = a;
            }
        }
    }
    println!(
        "{n}x{n} grid minimum {min_e:.8} at ({:.4}, {:.4}), gap {:.2e}",
        at.phi,
        at.theta,
        min_e - ground
    );

    // coarse text rendering
    let coarse = landscape_axis(24);
    let shades = [' ', '.', ':', '-', '=', '+', '*', '#', '%', '@'];
    for &phi in coarse.iter().rev() {
        let line: String = coarse
            .iter()
            .map(|&theta| {
                let e = exact_energy(&AnsatzParams::new(phi, theta), &h);
                let t = ((e - ground) / (3.0 - ground)).clamp(0.0, 0.999);
                shades[(t * shades.len() as f64) as usize]
            })
            .collect();
        println!("{line}");
    }
}
