//! Greedy and maximum-weight-matching pair selection on the bundled device
//! or a calibration file.
//!
//! `cargo run --example pair_selection [-- calibration.json]`

use parvqe::device::{load_calibration, select_pairs, DeviceTopology, SelectionMethod};

fn main() -> parvqe::Result<()> {
    let t = match std::env::args().nth(1) {
        Some(path) => load_calibration(path)?,
        None => DeviceTopology::shipped(),
    };
    println!(
        "{}: {} qubits, {} edges",
        t.name.as_deref().unwrap_or("device"),
        t.qubits().len(),
        t.edges().len()
    );
    for (method, cap) in [
        (SelectionMethod::Greedy, None),
        (SelectionMethod::Greedy, Some(0.90)),
        (SelectionMethod::MaxWeightMatching, None),
        (SelectionMethod::MaxWeightMatching, Some(0.90)),
    ] {
        let sel = select_pairs(&t, method, cap);
        let cap_s = cap.map(|c| format!(" cap {c}")).unwrap_or_default();
        println!(
            "{method}{cap_s}: {} pairs, total fidelity {:.4}",
            sel.len(),
            sel.total_fidelity(&t)
        );
    }
    let greedy = select_pairs(&t, SelectionMethod::Greedy, None);
    println!("greedy order:");
    for (i, &p) in greedy.pairs.iter().enumerate() {
        println!("{:>3}  ({:>3}, {:>3})  {:.4}", i + 1, p.0, p.1, t.fidelity(p)?);
    }
    Ok(())
}
