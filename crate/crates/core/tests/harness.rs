use std::collections::BTreeMap;
use std::path::Path;

use parvqe::device::{DeviceTopology, Edge};
use parvqe::harness::{run, Command, ExperimentConfig, Mitigation, OptimizerKind, RunRecord, RECORD_FILE};
use parvqe::hubbard::exact_ground_energy;
use parvqe::optimizers::ParallelMode;
use parvqe::sim::ReadoutRates;
use parvqe::Error;

fn write_topology(dir: &Path, t: &DeviceTopology) -> std::path::PathBuf {
    let path = dir.join("calibration.json");
    std::fs::write(&path, t.to_json_string()).unwrap();
    path
}

fn noiseless_chain(n: u32) -> DeviceTopology {
    let edges = (0..n - 1)
        .map(|i| Edge {
            a: i,
            b: i + 1,
            fidelity: 1.0,
        })
        .collect();
    DeviceTopology::new((0..n).collect(), edges, BTreeMap::new()).unwrap()
}

fn read_csv(path: &Path) -> Vec<BTreeMap<String, String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    let headers = r.headers().unwrap().clone();
    r.records()
        .map(|rec| {
            let rec = rec.unwrap();
            headers.iter().zip(rec.iter()).map(|(h, v)| (h.to_string(), v.to_string())).collect()
        })
        .collect()
}

#[test]
fn noiseless_benchmark_levels_coincide() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::new(3, dir.path().join("out"));
    cfg.calibration = Some(write_topology(dir.path(), &noiseless_chain(8)));
    cfg.shots = Some(20_000);
    let record = run(Command::BenchmarkPairs, &cfg).unwrap();
    assert_eq!(record.pairs.len(), 4);
    let ground = exact_ground_energy(&cfg.hubbard);
    for row in read_csv(&cfg.out.join("individual.csv")) {
        let vals: Vec<f64> = ["e_raw", "e_ni", "e_tflo", "e_tflo_ni"].iter().map(|k| row[*k].parse().unwrap()).collect();
        // identity confusion: NI changes nothing
        assert_eq!(vals[0], vals[1]);
        assert_eq!(vals[2], vals[3]);
        for v in vals {
            assert!((v - ground).abs() < 0.05, "{v}");
        }
    }
    assert_eq!(read_csv(&cfg.out.join("sweep.csv")).len(), 4);
    assert_eq!(read_csv(&cfg.out.join("pair_matrix.csv")).len(), 1 + 2 + 3 + 4);
}

#[test]
fn exact_heatmap_matches_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::new(1, dir.path().join("out"));
    cfg.calibration = Some(write_topology(dir.path(), &noiseless_chain(10)));
    cfg.exact = true;
    cfg.grid = 6;
    cfg.pairs = Some(5);
    let record = run(Command::Heatmap, &cfg).unwrap();
    assert_eq!(record.metric("batches"), Some(8.0));
    assert!(record.metric("max_abs_err").unwrap() < 1e-10);
    assert_eq!(read_csv(&cfg.out.join("heatmap.csv")).len(), 36);
    for name in ["heatmap_exact.svg", "heatmap_measured.svg", "heatmap_error.svg", RECORD_FILE] {
        assert!(record.artifacts.iter().any(|a| a == name));
        assert!(cfg.out.join(name).is_file());
    }
}

#[test]
fn record_round_trips_and_reproduces() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::new(11, dir.path().join("a"));
    cfg.optimizer = OptimizerKind::Mgd;
    cfg.pairs = Some(6);
    cfg.iterations = Some(4);
    cfg.repeats = Some(2);
    let record = run(Command::Vqe, &cfg).unwrap();
    let loaded = RunRecord::load(cfg.out.join(RECORD_FILE)).unwrap();
    assert_eq!(loaded, record);
    assert_eq!(loaded.code_version, env!("CARGO_PKG_VERSION"));
    assert!(loaded.resolved.contains_key("plan"));

    let rerun = run(Command::Vqe, &loaded.config).unwrap();
    assert_eq!(rerun, record);
    let again = std::fs::read(cfg.out.join("final.csv")).unwrap();
    assert!(!again.is_empty());
}

#[test]
fn invalid_inputs_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::new(1, dir.path().join("out"));
    cfg.calibration = Some(dir.path().join("missing.json"));
    assert!(matches!(run(Command::Heatmap, &cfg), Err(Error::InvalidParameter(_))));

    let mut cfg = ExperimentConfig::new(1, dir.path().join("out"));
    cfg.pairs = Some(40);
    assert!(matches!(
        run(Command::BenchmarkPairs, &cfg),
        Err(Error::SelectionTooLarge {
            requested: 40,
            available: 33
        })
    ));

    let mut cfg = ExperimentConfig::new(1, dir.path().join("out"));
    cfg.optimizer = OptimizerKind::Mgd;
    cfg.mode = Some(ParallelMode::SameParams);
    assert!(matches!(run(Command::Vqe, &cfg), Err(Error::InvalidParameter(_))));
}

#[test]
fn mitigation_flag_controls_columns() {
    let dir = tempfile::tempdir().unwrap();
    let t = DeviceTopology::uniform_pairs(4, 0.97, ReadoutRates::new(0.02, 0.04).unwrap()).unwrap();
    let mut cfg = ExperimentConfig::new(5, dir.path().join("out"));
    cfg.calibration = Some(write_topology(dir.path(), &t));
    cfg.grid = 4;
    cfg.pairs = Some(4);
    cfg.mitigation = Mitigation::NONE;
    let record = run(Command::Heatmap, &cfg).unwrap();
    let rows = read_csv(&cfg.out.join("heatmap.csv"));
    assert!(rows.iter().all(|r| r["e_ni"].is_empty() && r["e_tflo"].is_empty()));
    assert!(rows.iter().all(|r| r["e_selected"] == r["e_raw"]));
    let none_time = record.modeled_seconds["parallel"];

    cfg.mitigation = Mitigation::FULL;
    let record = run(Command::Heatmap, &cfg).unwrap();
    let rows = read_csv(&cfg.out.join("heatmap.csv"));
    assert!(rows.iter().all(|r| !r["e_tflo_ni"].is_empty() && r["e_selected"] == r["e_tflo_ni"]));
    assert!((record.modeled_seconds["parallel"] - 2.0 * none_time).abs() < 1e-9);
}

#[test]
fn shots_sweep_and_compare_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::new(2, dir.path().join("ss"));
    cfg.iterations = Some(5);
    cfg.shot_list = vec![100, 1000];
    let record = run(Command::ShotsSweep, &cfg).unwrap();
    assert_eq!(record.pairs.len(), 26);
    assert!(cfg.out.join("trace_shots100.csv").is_file());
    assert_eq!(read_csv(&cfg.out.join("shots_sweep.csv")).len(), 2);

    let mut cfg = ExperimentConfig::new(2, dir.path().join("oc"));
    cfg.pair_counts = vec![3, 9];
    cfg.iterations = Some(3);
    cfg.repeats = Some(2);
    let record = run(Command::OptimizerCompare, &cfg).unwrap();
    assert_eq!(read_csv(&cfg.out.join("compare.csv")).len(), 2 * 2 * 2);
    assert_eq!(read_csv(&cfg.out.join("compare_summary.csv")).len(), 4);
    assert_eq!(record.metric("tested_p_ge_9"), Some(1.0));
}
