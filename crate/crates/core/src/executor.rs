//! Batched execution of two-qubit circuits across disjoint qubit pairs,
//! energy estimation, and the wall-clock cost model.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector, Vector4};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::circuit::{build_circuit, MeasurementSetting};
use crate::device::{DeviceTopology, Pair};
use crate::error::{Error, Result};
use crate::hubbard::{AnsatzParams, HubbardParams};
use crate::mitigation::{measure_confusion, ConfusionMatrix};
use crate::rng::{self, label};
use crate::sim::{exact_distribution, run_circuit, sample_distribution, ShotHistogram};

/// One parallel submission: every assignment runs both measurement settings
/// with `shots` shots each.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchJob {
    pub assignments: Vec<(Pair, AnsatzParams)>,
    pub shots: u64,
    pub seed: u64,
    pub apply_ni: bool,
}

impl BatchJob {
    /// The same parameters on every pair.
    pub fn same_params(pairs: &[Pair], params: AnsatzParams, shots: u64, seed: u64) -> Self {
        Self {
            assignments: pairs.iter().map(|&p| (p, params)).collect(),
            shots,
            seed,
            apply_ni: false,
        }
    }

    pub fn with_ni(mut self, apply_ni: bool) -> Self {
        self.apply_ni = apply_ni;
        self
    }

    pub fn parallelism(&self) -> usize {
        self.assignments.len()
    }

    pub fn validate(&self, topology: &DeviceTopology) -> Result<()> {
        if self.assignments.is_empty() {
            return Err(Error::InvalidParameter("batch has no assignments".into()));
        }
        if self.shots == 0 {
            return Err(Error::InvalidParameter("shots must be at least 1".into()));
        }
        let mut used = BTreeSet::new();
        for &((a, b), params) in &self.assignments {
            topology.fidelity((a, b))?;
            for q in [a, b] {
                if !used.insert(q) {
                    return Err(Error::OverlappingPairs(q));
                }
            }
            if !params.is_finite() {
                return Err(Error::InvalidParameter(format!("non-finite parameters {params:?}")));
            }
        }
        Ok(())
    }
}

/// Result of one setting on one pair: sampled counts, or the exact outcome
/// distribution when running in exact-expectation mode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Measured {
    Shots(ShotHistogram),
    Exact([f64; 4]),
}

impl Measured {
    pub fn frequencies(&self) -> [f64; 4] {
        match self {
            Measured::Shots(h) => h.frequencies(),
            Measured::Exact(p) => *p,
        }
    }

    /// `None` in exact mode.
    pub fn shots(&self) -> Option<u64> {
        match self {
            Measured::Shots(h) => Some(h.shots),
            Measured::Exact(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairMeasurement {
    pub pair: Pair,
    pub params: AnsatzParams,
    /// Indexed by [`MeasurementSetting::index`].
    pub data: [Measured; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyEstimate {
    pub value: f64,
    pub std_err: f64,
    /// 0 for exact-expectation estimates.
    pub shots_per_setting: u64,
}

/// Raw and (optionally) readout-corrected estimate for one pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairEnergy {
    pub pair: Pair,
    pub params: AnsatzParams,
    pub raw: EnergyEstimate,
    pub ni: Option<EnergyEstimate>,
}

impl PairEnergy {
    /// NI estimate when present, else raw.
    pub fn best(&self) -> EnergyEstimate {
        self.ni.unwrap_or(self.raw)
    }
}

pub type ConfusionSet = BTreeMap<Pair, ConfusionMatrix>;

#[derive(Debug, Clone, PartialEq)]
pub struct BatchResult {
    pub measurements: Vec<PairMeasurement>,
    pub shots: u64,
    pub apply_ni: bool,
}

impl BatchResult {
    /// Energies per assignment, in job order. NI needs a confusion matrix for
    /// every pair when the job asked for it.
    pub fn energies(&self, h: &HubbardParams, confusions: Option<&ConfusionSet>) -> Result<Vec<PairEnergy>> {
        self.measurements
            .iter()
            .map(|m| {
                let raw = m.estimate(h, None);
                let ni = if self.apply_ni {
                    let n = confusions
                        .and_then(|c| c.get(&m.pair))
                        .ok_or_else(|| Error::InvalidParameter(format!("no confusion matrix for pair {:?}", m.pair)))?;
                    Some(m.estimate(h, Some(n)))
                } else {
                    None
                };
                Ok(PairEnergy {
                    pair: m.pair,
                    params: m.params,
                    raw,
                    ni,
                })
            })
            .collect()
    }

    /// CSV with columns `pair_a,pair_b,setting,b00,b01,b10,b11,shots`. Exact
    /// results carry probabilities and `shots = 0`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["pair_a", "pair_b", "setting", "b00", "b01", "b10", "b11", "shots"])?;
        for m in &self.measurements {
            for s in MeasurementSetting::ALL {
                let mut row = vec![m.pair.0.to_string(), m.pair.1.to_string(), s.name().to_string()];
                match &m.data[s.index()] {
                    Measured::Shots(h) => {
                        row.extend(h.counts.iter().map(|c| c.to_string()));
                        row.push(h.shots.to_string());
                    }
                    Measured::Exact(p) => {
                        row.extend(p.iter().map(|x| format!("{x:.15e}")));
                        row.push("0".into());
                    }
                }
                w.write_record(&row)?;
            }
        }
        w.flush().map_err(|e| Error::Output(e.to_string()))?;
        Ok(())
    }
}

impl PairMeasurement {
    pub fn estimate(&self, h: &HubbardParams, confusion: Option<&ConfusionMatrix>) -> EnergyEstimate {
        estimate_parts(
            &self.data[0].frequencies(),
            &self.data[1].frequencies(),
            self.data[0].shots(),
            h,
            confusion,
        )
    }
}

/// Per-outcome energy contributions of one setting: the measured energy is
/// `U/2 + c_onsite·p_onsite + c_hopping·p_hopping`.
pub fn setting_coefficients(setting: MeasurementSetting, h: &HubbardParams) -> [f64; 4] {
    let [s0, s1] = setting.signs();
    std::array::from_fn(|idx| {
        let z0 = if idx & 2 == 0 { 1.0 } else { -1.0 };
        let z1 = if idx & 1 == 0 { 1.0 } else { -1.0 };
        match setting {
            MeasurementSetting::Onsite => h.u / 2.0 * s0 * s1 * z0 * z1,
            MeasurementSetting::Hopping => -h.t * (s0 * z0 + s1 * z1),
        }
    })
}

fn estimate_parts(
    onsite: &[f64; 4],
    hopping: &[f64; 4],
    shots: Option<u64>,
    h: &HubbardParams,
    confusion: Option<&ConfusionMatrix>,
) -> EnergyEstimate {
    let mut value = h.u / 2.0;
    let mut variance = 0.0;
    for (setting, freqs) in [(MeasurementSetting::Onsite, onsite), (MeasurementSetting::Hopping, hopping)] {
        let c = Vector4::from(setting_coefficients(setting, h));
        // c·(N⁻¹ f) = (N⁻ᵀ c)·f
        let w = match confusion {
            Some(n) => n.inverse().transpose() * c,
            None => c,
        };
        let mean: f64 = (0..4).map(|i| w[i] * freqs[i]).sum();
        value += mean;
        if let Some(n) = shots {
            let second: f64 = (0..4).map(|i| w[i] * w[i] * freqs[i]).sum();
            variance += (second - mean * mean).max(0.0) / n as f64;
        }
    }
    EnergyEstimate {
        value,
        std_err: variance.sqrt(),
        shots_per_setting: shots.unwrap_or(0),
    }
}

/// Energy from one histogram per setting. Both settings must be present
/// exactly once, with equal shot counts.
pub fn estimate_energy(
    data: &[(MeasurementSetting, ShotHistogram)],
    h: &HubbardParams,
    confusion: Option<&ConfusionMatrix>,
) -> Result<EnergyEstimate> {
    let find = |s: MeasurementSetting| {
        let mut hits = data.iter().filter(|(x, _)| *x == s);
        match (hits.next(), hits.next()) {
            (Some((_, hist)), None) => Ok(hist),
            (None, _) => Err(Error::SettingMismatch(format!("{s} setting missing"))),
            _ => Err(Error::SettingMismatch(format!("{s} setting given twice"))),
        }
    };
    let on = find(MeasurementSetting::Onsite)?;
    let hop = find(MeasurementSetting::Hopping)?;
    if data.len() != 2 {
        return Err(Error::SettingMismatch(format!("expected 2 histograms, got {}", data.len())));
    }
    if on.shots != hop.shots {
        return Err(Error::SettingMismatch(format!("{} onsite shots vs {} hopping shots", on.shots, hop.shots)));
    }
    Ok(estimate_parts(&on.frequencies(), &hop.frequencies(), Some(on.shots), h, confusion))
}

/// Exact-expectation estimate (`std_err = 0`).
pub fn estimate_from_distributions(
    onsite: &[f64; 4],
    hopping: &[f64; 4],
    h: &HubbardParams,
    confusion: Option<&ConfusionMatrix>,
) -> EnergyEstimate {
    estimate_parts(onsite, hopping, None, h, confusion)
}

/// Shot-weighted pooled estimate of runs with identical parameters.
pub fn aggregate_same_params(estimates: &[EnergyEstimate]) -> Result<EnergyEstimate> {
    if estimates.is_empty() {
        return Err(Error::InvalidParameter("nothing to aggregate".into()));
    }
    let total: u64 = estimates.iter().map(|e| e.shots_per_setting).sum();
    let weights: Vec<f64> = if total == 0 {
        vec![1.0 / estimates.len() as f64; estimates.len()]
    } else {
        estimates
            .iter()
            .map(|e| e.shots_per_setting as f64 / total as f64)
            .collect()
    };
    let value = estimates.iter().zip(&weights).map(|(e, w)| w * e.value).sum();
    let var: f64 = estimates
        .iter()
        .zip(&weights)
        .map(|(e, w)| w * w * e.std_err * e.std_err)
        .sum();
    Ok(EnergyEstimate {
        value,
        std_err: var.sqrt(),
        shots_per_setting: total,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Sampling {
    #[default]
    Shots,
    /// Use exact outcome distributions instead of sampling.
    Exact,
}

/// Runs batches on a device. Work is fanned out per (pair, setting) on a
/// dedicated thread pool; every task draws from its own derived stream, so
/// results do not depend on the worker count.
pub struct Executor {
    topology: DeviceTopology,
    hubbard: HubbardParams,
    crosstalk_p: f64,
    sampling: Sampling,
    pool: rayon::ThreadPool,
}

impl Executor {
    pub fn new(topology: DeviceTopology, hubbard: HubbardParams, workers: usize) -> Result<Self> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers.max(1))
            .build()
            .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
        Ok(Self {
            topology,
            hubbard,
            crosstalk_p: 0.0,
            sampling: Sampling::Shots,
            pool,
        })
    }

    pub fn with_crosstalk(mut self, crosstalk_p: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&crosstalk_p) {
            return Err(Error::InvalidParameter(format!("crosstalk_p = {crosstalk_p} outside [0, 1]")));
        }
        self.crosstalk_p = crosstalk_p;
        Ok(self)
    }

    pub fn with_sampling(mut self, sampling: Sampling) -> Self {
        self.sampling = sampling;
        self
    }

    pub fn topology(&self) -> &DeviceTopology {
        &self.topology
    }

    pub fn hubbard(&self) -> &HubbardParams {
        &self.hubbard
    }

    pub fn sampling(&self) -> Sampling {
        self.sampling
    }

    pub fn workers(&self) -> usize {
        self.pool.current_num_threads()
    }

    pub fn run_batch(&self, job: &BatchJob) -> Result<BatchResult> {
        job.validate(&self.topology)?;
        let pairs: Vec<Pair> = job.assignments.iter().map(|a| a.0).collect();
        let crosstalk: Vec<bool> = pairs
            .iter()
            .map(|&p| {
                self.crosstalk_p > 0.0
                    && pairs
                        .iter()
                        .any(|&q| q != p && self.topology.pairs_are_neighbors(p, q))
            })
            .collect();
        let tasks: Vec<(usize, MeasurementSetting)> = (0..job.assignments.len())
            .flat_map(|i| MeasurementSetting::ALL.map(|s| (i, s)))
            .collect();
        let outcomes: Vec<Result<Measured>> = self.pool.install(|| {
            tasks
                .par_iter()
                .map(|&(i, s)| {
                    let (pair, params) = job.assignments[i];
                    let noise = self.topology.noise_spec_with_crosstalk(pair, self.crosstalk_p)?;
                    let rho = run_circuit(&build_circuit(&params, &self.hubbard, s), &noise, crosstalk[i]);
                    let probs = exact_distribution(&rho, &noise);
                    match self.sampling {
                        Sampling::Exact => Ok(Measured::Exact(probs)),
                        Sampling::Shots => {
                            let mut stream = rng::stream(job.seed, &[label::BATCH, i as u64, s.index() as u64]);
                            Ok(Measured::Shots(sample_distribution(&probs, job.shots, &mut stream)?))
                        }
                    }
                })
                .collect()
        });
        let mut outcomes = outcomes.into_iter();
        let mut measurements = Vec::with_capacity(job.assignments.len());
        for &(pair, params) in &job.assignments {
            let onsite = outcomes.next().expect("one outcome per task")?;
            let hopping = outcomes.next().expect("one outcome per task")?;
            measurements.push(PairMeasurement {
                pair,
                params,
                data: [onsite, hopping],
            });
        }
        Ok(BatchResult {
            measurements,
            shots: job.shots,
            apply_ni: job.apply_ni,
        })
    }

    /// Confusion matrix per pair, sampled with `shots` shots per prepared
    /// state (exact in exact-expectation mode).
    pub fn measure_confusions(&self, pairs: &[Pair], shots: u64, seed: u64) -> Result<ConfusionSet> {
        let results: Vec<Result<(Pair, ConfusionMatrix)>> = self.pool.install(|| {
            pairs
                .par_iter()
                .enumerate()
                .map(|(i, &pair)| {
                    let noise = self.topology.noise_spec_for_pair(pair)?;
                    let n = match self.sampling {
                        Sampling::Exact => ConfusionMatrix::exact(&noise)?,
                        Sampling::Shots => {
                            let mut stream = rng::stream(seed, &[label::CONFUSION, i as u64]);
                            measure_confusion(&noise, shots, &mut stream)?
                        }
                    };
                    Ok((pair, n))
                })
                .collect()
        });
        results.into_iter().collect()
    }
}

/// Affine wall-clock model of one batch:
/// `t_base + beta·p + settings·shots·tau` seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    pub t_base: f64,
    pub beta: f64,
    pub tau: f64,
}

const DEFAULT_COST_MODEL: &str = include_str!("../data/default_cost_model.json");

impl CostModel {
    pub fn new(t_base: f64, beta: f64, tau: f64) -> Result<Self> {
        for (name, v) in [("t_base", t_base), ("beta", beta), ("tau", tau)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("cost model {name} = {v} must be finite and >= 0")));
            }
        }
        Ok(Self { t_base, beta, tau })
    }

    /// Model fitted to [`REFERENCE_TIMINGS`], as shipped.
    pub fn shipped() -> Self {
        Self::from_json_str(DEFAULT_COST_MODEL).expect("bundled cost model is valid")
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let raw: CostModel = serde_json::from_str(text)?;
        Self::new(raw.t_base, raw.beta, raw.tau)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("cost model serializes")
    }

    pub fn batch_time(&self, p: usize, shots: u64, settings: usize) -> f64 {
        self.t_base + self.beta * p as f64 + settings as f64 * shots as f64 * self.tau
    }

    pub fn predict_wall_time(&self, p: usize, batches: usize, shots: u64, settings: usize) -> f64 {
        batches as f64 * self.batch_time(p, shots, settings)
    }

    /// Speedup of sweeping `n_points` independent circuits over `p` pairs
    /// (`⌈n/p⌉` batches) versus one pair (`n` batches).
    pub fn sweep_speedup(&self, n_points: usize, p: usize, shots: u64, settings: usize) -> f64 {
        let serial = self.predict_wall_time(1, n_points, shots, settings);
        let parallel = self.predict_wall_time(p, n_points.div_ceil(p), shots, settings);
        serial / parallel
    }
}

/// One timed run: `batches` batches of `p` parallel circuits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingObservation {
    pub p: usize,
    pub batches: usize,
    pub shots: u64,
    pub settings: usize,
    pub seconds: f64,
}

/// Hardware timings the shipped cost model is fitted to: a 20×20 landscape
/// scan at 10,000 shots on 25 pairs (16 batches, 3 min 40 s) versus one
/// pair (400 batches, estimated 66 min), and 50 SPSA iterations of 3
/// evaluations at 1,000 shots on one pair (245 s) versus 25 pairs (420 s).
pub const REFERENCE_TIMINGS: [TimingObservation; 4] = [
    TimingObservation { p: 25, batches: 16, shots: 10_000, settings: 2, seconds: 220.0 },
    TimingObservation { p: 1, batches: 400, shots: 10_000, settings: 2, seconds: 3960.0 },
    TimingObservation { p: 1, batches: 150, shots: 1_000, settings: 2, seconds: 245.0 },
    TimingObservation { p: 25, batches: 150, shots: 1_000, settings: 2, seconds: 420.0 },
];

#[derive(Debug, Clone, PartialEq)]
pub struct CostFit {
    pub model: CostModel,
    /// `observed − predicted` per observation.
    pub residuals: Vec<f64>,
}

/// Non-negative least squares fit of `(t_base, beta, tau)`. With three
/// unknowns the active set is enumerated exhaustively.
pub fn calibrate_cost_model(obs: &[TimingObservation]) -> Result<CostFit> {
    if obs.len() < 3 {
        return Err(Error::RankDeficient(format!("{} observations, need at least 3", obs.len())));
    }
    let distinct_p: BTreeSet<usize> = obs.iter().map(|o| o.p).collect();
    if distinct_p.len() < 2 {
        return Err(Error::RankDeficient("all observations share one pair count".into()));
    }
    let design = DMatrix::from_fn(obs.len(), 3, |i, j| {
        let o = &obs[i];
        let b = o.batches as f64;
        match j {
            0 => b,
            1 => b * o.p as f64,
            _ => b * o.settings as f64 * o.shots as f64,
        }
    });
    let target = DVector::from_iterator(obs.len(), obs.iter().map(|o| o.seconds));
    let scale: Vec<f64> = (0..3).map(|j| design.column(j).norm()).collect();
    if scale.iter().any(|&s| s == 0.0) {
        return Err(Error::RankDeficient("a cost term never varies".into()));
    }
    let scaled = DMatrix::from_fn(obs.len(), 3, |i, j| design[(i, j)] / scale[j]);
    let sv = scaled.clone().svd(false, false).singular_values;
    if sv.min() < 1e-10 * sv.max() {
        return Err(Error::RankDeficient("cost terms are collinear".into()));
    }

    let mut best: Option<(f64, [f64; 3])> = None;
    for mask in 0u8..8 {
        let cols: Vec<usize> = (0..3).filter(|j| mask & (1 << j) != 0).collect();
        let mut coef = [0.0; 3];
        if !cols.is_empty() {
            let sub = DMatrix::from_fn(obs.len(), cols.len(), |i, k| scaled[(i, cols[k])]);
            let sol = sub
                .svd(true, true)
                .solve(&target, 1e-14)
                .map_err(|e| Error::RankDeficient(e.to_string()))?;
            if sol.iter().any(|&x| x < 0.0) {
                continue;
            }
            for (k, &j) in cols.iter().enumerate() {
                coef[j] = sol[k];
            }
        }
        let pred = &scaled * DVector::from_column_slice(&coef);
        let ssr = (&target - pred).norm_squared();
        if best.is_none_or(|(b, _)| ssr < b) {
            best = Some((ssr, coef));
        }
    }
    let (_, coef) = best.expect("the empty active set is always feasible");
    let model = CostModel::new(coef[0] / scale[0], coef[1] / scale[1], coef[2] / scale[2])?;
    let residuals = obs
        .iter()
        .map(|o| o.seconds - model.predict_wall_time(o.p, o.batches, o.shots, o.settings))
        .collect();
    Ok(CostFit { model, residuals })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hubbard::{exact_energy, exact_ground_energy, landscape_axis, optimal_params};
    use crate::sim::ReadoutRates;

    fn noiseless_executor(n: usize, workers: usize) -> Executor {
        let t = DeviceTopology::uniform_pairs(n, 1.0, ReadoutRates::default()).unwrap();
        Executor::new(t, HubbardParams::default(), workers).unwrap()
    }

    #[test]
    fn exact_mode_matches_oracle_on_grid() {
        let ex = noiseless_executor(1, 1).with_sampling(Sampling::Exact);
        let h = HubbardParams::default();
        let axis = landscape_axis(20);
        for &phi in &axis {
            for &theta in &axis {
                let a = AnsatzParams::new(phi, theta);
                let r = ex.run_batch(&BatchJob::same_params(&[(0, 1)], a, 1, 0)).unwrap();
                let e = r.energies(&h, None).unwrap()[0].raw;
                assert!((e.value - exact_energy(&a, &h)).abs() < 1e-10);
                assert_eq!(e.std_err, 0.0);
            }
        }
    }

    #[test]
    fn estimator_examples() {
        let h = HubbardParams::default();
        let ex = noiseless_executor(1, 1).with_sampling(Sampling::Exact);
        for theta in [-1.0, 0.3, 2.0] {
            let r = ex.run_batch(&BatchJob::same_params(&[(0, 1)], AnsatzParams::new(0.0, theta), 1, 0)).unwrap();
            assert!((r.energies(&h, None).unwrap()[0].raw.value + 1.0).abs() < 1e-10);
        }
        let all_zero = ShotHistogram::new([100, 0, 0, 0]).unwrap();
        let e = estimate_energy(
            &[(MeasurementSetting::Onsite, all_zero), (MeasurementSetting::Hopping, all_zero)],
            &h,
            None,
        )
        .unwrap();
        // onsite signs give <ZZ> = -1, hopping signs give <XI> = <IX> = +1
        assert!((e.value - -2.0).abs() < 1e-12);
        assert_eq!(e.std_err, 0.0);
    }

    #[test]
    fn estimator_errors() {
        let h = HubbardParams::default();
        let a = ShotHistogram::new([10, 0, 0, 0]).unwrap();
        let b = ShotHistogram::new([5, 5, 0, 1]).unwrap();
        let on = MeasurementSetting::Onsite;
        let hop = MeasurementSetting::Hopping;
        assert!(matches!(estimate_energy(&[(on, a)], &h, None), Err(Error::SettingMismatch(_))));
        assert!(matches!(estimate_energy(&[(on, a), (on, a)], &h, None), Err(Error::SettingMismatch(_))));
        assert!(matches!(estimate_energy(&[(on, a), (hop, b)], &h, None), Err(Error::SettingMismatch(_))));
    }

    #[test]
    fn million_shots_near_ground_energy() {
        let h = HubbardParams::default();
        let ex = noiseless_executor(1, 2);
        let job = BatchJob::same_params(&[(0, 1)], optimal_params(&h), 1_000_000, 9);
        let e = ex.run_batch(&job).unwrap().energies(&h, None).unwrap()[0].raw;
        assert!((e.value - exact_ground_energy(&h)).abs() < 3.0 * e.std_err + 1e-9);
        assert!(e.std_err > 0.0 && e.std_err < 0.01);
    }

    #[test]
    fn sampled_std_err_matches_spread() {
        let h = HubbardParams::default();
        let ex = noiseless_executor(1, 1);
        let a = AnsatzParams::new(0.4, 0.9);
        let values: Vec<f64> = (0..400)
            .map(|seed| {
                let r = ex.run_batch(&BatchJob::same_params(&[(0, 1)], a, 500, seed)).unwrap();
                r.energies(&h, None).unwrap()[0].raw.value
            })
            .collect();
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (values.len() - 1) as f64).sqrt();
        let r = ex.run_batch(&BatchJob::same_params(&[(0, 1)], a, 500, 0)).unwrap();
        let se = r.energies(&h, None).unwrap()[0].raw.std_err;
        assert!((sd / se - 1.0).abs() < 0.15, "spread {sd} vs std_err {se}");
    }

    #[test]
    fn identical_assignments_share_distribution() {
        let ex = noiseless_executor(5, 3).with_sampling(Sampling::Exact);
        let pairs: Vec<Pair> = (0..5).map(|i| (2 * i, 2 * i + 1)).collect();
        let r = ex.run_batch(&BatchJob::same_params(&pairs, AnsatzParams::new(0.3, 0.2), 10, 1)).unwrap();
        for m in &r.measurements {
            assert_eq!(m.data, r.measurements[0].data);
        }
    }

    #[test]
    fn worker_count_does_not_change_output() {
        let topo = DeviceTopology::shipped();
        let pairs = crate::device::greedy_select(&topo, Some(20), None).pairs;
        let job = BatchJob {
            assignments: pairs
                .iter()
                .enumerate()
                .map(|(i, &p)| (p, AnsatzParams::new(0.1 * i as f64, -0.05 * i as f64)))
                .collect(),
            shots: 2000,
            seed: 77,
            apply_ni: false,
        };
        let mut outputs = Vec::new();
        for workers in [1, 4, 8] {
            let ex = Executor::new(topo.clone(), HubbardParams::default(), workers)
                .unwrap()
                .with_crosstalk(0.01)
                .unwrap();
            let mut buf = Vec::new();
            ex.run_batch(&job).unwrap().write_csv(&mut buf).unwrap();
            outputs.push(buf);
        }
        assert_eq!(outputs[0], outputs[1]);
        assert_eq!(outputs[0], outputs[2]);
        let text = String::from_utf8(outputs[0].clone()).unwrap();
        assert!(text.starts_with("pair_a,pair_b,setting,b00,b01,b10,b11,shots\n"));
        assert_eq!(text.lines().count(), 1 + 2 * 20);
    }

    #[test]
    fn job_validation() {
        let ex = noiseless_executor(2, 1);
        let a = AnsatzParams::new(0.0, 0.0);
        let overlap = BatchJob {
            assignments: vec![((0, 1), a), ((1, 0), a)],
            shots: 10,
            seed: 0,
            apply_ni: false,
        };
        assert!(matches!(ex.run_batch(&overlap), Err(Error::OverlappingPairs(_))));
        let missing = BatchJob::same_params(&[(1, 2)], a, 10, 0);
        assert!(matches!(ex.run_batch(&missing), Err(Error::MissingEdge(1, 2))));
        let empty = BatchJob::same_params(&[], a, 10, 0);
        assert!(ex.run_batch(&empty).is_err());
        let no_shots = BatchJob::same_params(&[(0, 1)], a, 0, 0);
        assert!(ex.run_batch(&no_shots).is_err());
    }

    #[test]
    fn ni_removes_readout_bias_in_exact_mode() {
        let h = HubbardParams::default();
        let r = ReadoutRates::new(0.03, 0.08).unwrap();
        let t = DeviceTopology::uniform_pairs(1, 1.0, r).unwrap();
        let ex = Executor::new(t, h, 1).unwrap().with_sampling(Sampling::Exact);
        let a = AnsatzParams::new(0.5, -0.7);
        let conf = ex.measure_confusions(&[(0, 1)], 1, 0).unwrap();
        let res = ex.run_batch(&BatchJob::same_params(&[(0, 1)], a, 1, 0).with_ni(true)).unwrap();
        let e = res.energies(&h, Some(&conf)).unwrap()[0];
        assert!((e.raw.value - exact_energy(&a, &h)).abs() > 1e-3);
        assert!((e.ni.unwrap().value - exact_energy(&a, &h)).abs() < 1e-12);
        assert!(res.energies(&h, None).is_err());
    }

    #[test]
    fn pooling() {
        let e1 = EnergyEstimate { value: -1.0, std_err: 0.1, shots_per_setting: 100 };
        let e2 = EnergyEstimate { value: -2.0, std_err: 0.1, shots_per_setting: 100 };
        assert_eq!(aggregate_same_params(&[e1]).unwrap(), e1);
        let pooled = aggregate_same_params(&[e1, e2]).unwrap();
        assert!((pooled.value + 1.5).abs() < 1e-15);
        assert!((pooled.std_err - 0.1 / 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(pooled.shots_per_setting, 200);
        assert!(aggregate_same_params(&[]).is_err());
    }

    #[test]
    fn pooled_std_err_shrinks_with_pairs() {
        let h = HubbardParams::default();
        let ex = noiseless_executor(25, 4);
        let pairs: Vec<Pair> = (0..25).map(|i| (2 * i, 2 * i + 1)).collect();
        let a = AnsatzParams::new(0.3, 0.5);
        let spread = |p: usize| {
            let vals: Vec<f64> = (0..200)
                .map(|seed| {
                    let r = ex.run_batch(&BatchJob::same_params(&pairs[..p], a, 400, seed)).unwrap();
                    let es: Vec<_> = r.energies(&h, None).unwrap().iter().map(|e| e.raw).collect();
                    aggregate_same_params(&es).unwrap().value
                })
                .collect();
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            (vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (vals.len() - 1) as f64).sqrt()
        };
        let ratio = spread(1) / spread(25);
        assert!((ratio / 5.0 - 1.0).abs() < 0.2, "ratio {ratio}");
    }

    #[test]
    fn cost_model_formula() {
        let m = CostModel::new(10.0, 0.5, 1e-4).unwrap();
        assert!((m.predict_wall_time(25, 16, 10_000, 2) - 392.0).abs() < 1e-9);
        let diff = m.predict_wall_time(25, 7, 100, 2) - m.predict_wall_time(1, 7, 100, 2);
        assert!((diff - 7.0 * 0.5 * 24.0).abs() < 1e-9);
        assert!(CostModel::new(-1.0, 0.0, 0.0).is_err());
        let back = CostModel::from_json_str(&m.to_json_string()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn cost_model_is_increasing() {
        let m = CostModel::shipped();
        for p in 1..30 {
            assert!(m.predict_wall_time(p + 1, 5, 1000, 2) > m.predict_wall_time(p, 5, 1000, 2));
        }
        assert!(m.predict_wall_time(3, 6, 1000, 2) > m.predict_wall_time(3, 5, 1000, 2));
        assert!(m.predict_wall_time(3, 5, 1001, 2) > m.predict_wall_time(3, 5, 1000, 2));
        for p in 1..=25 {
            assert!(m.sweep_speedup(400, p, 10_000, 2) <= p as f64 + 1e-12);
        }
    }

    #[test]
    fn recovers_synthetic_model() {
        let truth = CostModel::new(3.5, 0.21, 2.5e-4).unwrap();
        let obs: Vec<TimingObservation> = [(1, 10, 1000), (8, 4, 5000), (25, 3, 200), (12, 7, 10_000)]
            .iter()
            .map(|&(p, batches, shots)| TimingObservation {
                p,
                batches,
                shots,
                settings: 2,
                seconds: truth.predict_wall_time(p, batches, shots, 2),
            })
            .collect();
        let fit = calibrate_cost_model(&obs).unwrap();
        assert!((fit.model.t_base - truth.t_base).abs() < 1e-6);
        assert!((fit.model.beta - truth.beta).abs() < 1e-6);
        assert!((fit.model.tau - truth.tau).abs() < 1e-6);
        assert!(fit.residuals.iter().all(|r| r.abs() < 1e-6));
    }

    #[test]
    fn calibration_rejects_degenerate_input() {
        let o = |p, batches, shots| TimingObservation { p, batches, shots, settings: 2, seconds: 10.0 };
        assert!(matches!(calibrate_cost_model(&[o(1, 1, 10), o(1, 2, 20), o(1, 3, 5)]), Err(Error::RankDeficient(_))));
        assert!(matches!(calibrate_cost_model(&[o(1, 1, 10), o(2, 2, 20)]), Err(Error::RankDeficient(_))));
    }

    #[test]
    fn shipped_model_is_the_reference_fit() {
        let fit = calibrate_cost_model(&REFERENCE_TIMINGS).unwrap();
        let shipped = CostModel::shipped();
        for (a, b) in [
            (fit.model.t_base, shipped.t_base),
            (fit.model.beta, shipped.beta),
            (fit.model.tau, shipped.tau),
        ] {
            assert!((a - b).abs() <= 1e-9 * a.abs().max(1e-12), "{a} vs {b}");
        }
    }

    #[test]
    fn nnls_clamps_negative_terms() {
        // decreasing time in p would need beta < 0
        let obs = [
            TimingObservation { p: 1, batches: 10, shots: 100, settings: 2, seconds: 100.0 },
            TimingObservation { p: 10, batches: 10, shots: 100, settings: 2, seconds: 50.0 },
            TimingObservation { p: 5, batches: 10, shots: 1000, settings: 2, seconds: 90.0 },
        ];
        let fit = calibrate_cost_model(&obs).unwrap();
        assert_eq!(fit.model.beta, 0.0);
        assert!(fit.model.t_base >= 0.0 && fit.model.tau >= 0.0);
    }
}
