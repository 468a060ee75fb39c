//! Fits the wall-clock cost model to the reference timings and prints the
//! modeled speedups of the standard scenarios.
//!
//! `cargo run --example cost_model [-- --json]`

use parvqe::executor::{calibrate_cost_model, REFERENCE_TIMINGS};

fn main() -> parvqe::Result<()> {
    let fit = calibrate_cost_model(&REFERENCE_TIMINGS)?;
    if std::env::args().any(|a| a == "--json") {
        println!("{}", fit.model.to_json_string());
        return Ok(());
    }
    let m = fit.model;
    println!("t_base = {:.6} s, beta = {:.6} s/pair, tau = {:.6e} s/shot", m.t_base, m.beta, m.tau);
    for (o, r) in REFERENCE_TIMINGS.iter().zip(&fit.residuals) {
        println!(
            "p={:>2} batches={:>3} shots={:>5}: observed {:>7.1} s, residual {:+8.2} s",
            o.p, o.batches, o.shots, o.seconds, r
        );
    }
    println!("heatmap 20x20 on 25 pairs: {:.2}x", m.sweep_speedup(400, 25, 10_000, 2));
    for p in [2, 4, 8, 12, 16, 20, 25] {
        println!("MGD, {p:>2} points per iteration at 1000 shots: {:.2}x", m.sweep_speedup(p, p, 1000, 2));
    }
    let spsa = m.predict_wall_time(1, 150, 1000, 2) / m.predict_wall_time(25, 150, 1000, 2);
    println!("SPSA same-params on 25 pairs: {spsa:.2}x");
    Ok(())
}
