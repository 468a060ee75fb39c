//! SPSA and batch-parallel model gradient descent (MGD) over the two ansatz
//! parameters, driven by abstract (possibly noisy, possibly batched)
//! energy evaluators.

use std::io::Write;

use nalgebra::{SMatrix, SVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::device::Pair;
use crate::error::{Error, Result};
use crate::executor::{aggregate_same_params, BatchJob, ConfusionSet, EnergyEstimate, Executor};
use crate::hubbard::{exact_energy, AnsatzParams, HubbardParams};
use crate::rng::{self, label};

/// Quadratic surrogate features in two dimensions.
pub const SURROGATE_FEATURES: usize = 6;

/// One energy query result: raw estimate and, when readout mitigation is
/// on, the NI-corrected one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub raw: EnergyEstimate,
    pub ni: Option<EnergyEstimate>,
}

impl Evaluation {
    pub fn exact(value: f64) -> Self {
        Self {
            raw: EnergyEstimate {
                value,
                std_err: 0.0,
                shots_per_setting: 0,
            },
            ni: None,
        }
    }

    /// What the optimizer minimizes: the NI estimate when available.
    pub fn objective(&self) -> EnergyEstimate {
        self.ni.unwrap_or(self.raw)
    }
}

pub trait Evaluator {
    fn evaluate(&mut self, a: &AnsatzParams) -> Result<Evaluation>;
}

/// Evaluates a list of points as one parallel submission where possible.
pub trait BatchEvaluator {
    fn evaluate_batch(&mut self, points: &[AnsatzParams]) -> Result<Vec<Evaluation>>;
}

/// Noiseless oracle.
#[derive(Debug, Clone, Copy)]
pub struct ExactEvaluator {
    pub hubbard: HubbardParams,
}

impl Evaluator for ExactEvaluator {
    fn evaluate(&mut self, a: &AnsatzParams) -> Result<Evaluation> {
        Ok(Evaluation::exact(exact_energy(a, &self.hubbard)))
    }
}

impl BatchEvaluator for ExactEvaluator {
    fn evaluate_batch(&mut self, points: &[AnsatzParams]) -> Result<Vec<Evaluation>> {
        points.iter().map(|a| self.evaluate(a)).collect()
    }
}

/// Wraps a deterministic function of the parameters.
pub struct FnEvaluator<F>(pub F);

impl<F: FnMut(&AnsatzParams) -> f64> Evaluator for FnEvaluator<F> {
    fn evaluate(&mut self, a: &AnsatzParams) -> Result<Evaluation> {
        Ok(Evaluation::exact((self.0)(a)))
    }
}

impl<F: FnMut(&AnsatzParams) -> f64> BatchEvaluator for FnEvaluator<F> {
    fn evaluate_batch(&mut self, points: &[AnsatzParams]) -> Result<Vec<Evaluation>> {
        points.iter().map(|a| self.evaluate(a)).collect()
    }
}

/// How a device evaluator uses its pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ParallelMode {
    /// Every query runs the same parameters on all pairs and pools them.
    SameParams,
    /// Each point of a batch query gets its own pair.
    Batch,
}

/// Evaluator backed by the simulated device. Each submission draws a fresh
/// seed derived from the evaluator seed and a submission counter.
pub struct DeviceEvaluator<'a> {
    executor: &'a Executor,
    pairs: Vec<Pair>,
    shots: u64,
    seed: u64,
    mode: ParallelMode,
    confusions: Option<&'a ConfusionSet>,
    batches: usize,
}

impl<'a> DeviceEvaluator<'a> {
    pub fn new(executor: &'a Executor, pairs: Vec<Pair>, shots: u64, seed: u64, mode: ParallelMode) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::InvalidParameter("evaluator needs at least one pair".into()));
        }
        Ok(Self {
            executor,
            pairs,
            shots,
            seed,
            mode,
            confusions: None,
            batches: 0,
        })
    }

    /// Enables NI with per-pair confusion matrices.
    pub fn with_confusions(mut self, confusions: &'a ConfusionSet) -> Self {
        self.confusions = Some(confusions);
        self
    }

    /// Submissions made so far.
    pub fn batches(&self) -> usize {
        self.batches
    }

    pub fn pairs(&self) -> &[Pair] {
        &self.pairs
    }

    fn submit(&mut self, assignments: Vec<(Pair, AnsatzParams)>) -> Result<Vec<Evaluation>> {
        let job = BatchJob {
            assignments,
            shots: self.shots,
            seed: rng::derive_seed(self.seed, &[label::BATCH, self.batches as u64]),
            apply_ni: self.confusions.is_some(),
        };
        self.batches += 1;
        let energies = self
            .executor
            .run_batch(&job)?
            .energies(self.executor.hubbard(), self.confusions)?;
        Ok(energies.iter().map(|e| Evaluation { raw: e.raw, ni: e.ni }).collect())
    }

    fn same_params(&mut self, a: &AnsatzParams) -> Result<Evaluation> {
        let per_pair = self.submit(self.pairs.iter().map(|&p| (p, *a)).collect())?;
        let raw: Vec<EnergyEstimate> = per_pair.iter().map(|e| e.raw).collect();
        let ni = if self.confusions.is_some() {
            let ni: Vec<EnergyEstimate> = per_pair.iter().filter_map(|e| e.ni).collect();
            Some(aggregate_same_params(&ni)?)
        } else {
            None
        };
        Ok(Evaluation {
            raw: aggregate_same_params(&raw)?,
            ni,
        })
    }
}

impl Evaluator for DeviceEvaluator<'_> {
    fn evaluate(&mut self, a: &AnsatzParams) -> Result<Evaluation> {
        match self.mode {
            ParallelMode::SameParams => self.same_params(a),
            ParallelMode::Batch => Ok(self.submit(vec![(self.pairs[0], *a)])?[0]),
        }
    }
}

impl BatchEvaluator for DeviceEvaluator<'_> {
    /// In batch mode, points beyond the pair count spill into further
    /// submissions.
    fn evaluate_batch(&mut self, points: &[AnsatzParams]) -> Result<Vec<Evaluation>> {
        match self.mode {
            ParallelMode::SameParams => points.iter().map(|a| self.same_params(a)).collect(),
            ParallelMode::Batch => {
                let mut out = Vec::with_capacity(points.len());
                for chunk in points.chunks(self.pairs.len()) {
                    let assignments = chunk.iter().zip(&self.pairs).map(|(a, &p)| (p, *a)).collect();
                    out.extend(self.submit(assignments)?);
                }
                Ok(out)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iteration: usize,
    /// Center parameters at the start of the iteration.
    pub phi: f64,
    pub theta: f64,
    pub e_raw: f64,
    pub e_ni: Option<f64>,
    /// Oracle energy at the center; diagnostics only.
    pub e_exact: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub samples: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptTrace {
    pub optimizer: String,
    pub records: Vec<TraceRecord>,
    pub final_params: AnsatzParams,
    /// Evaluator calls made (one per point).
    pub evaluations: usize,
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

impl OptTrace {
    /// Columns `iteration,phi,theta,e_raw,e_ni,e_exact`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["iteration", "phi", "theta", "e_raw", "e_ni", "e_exact"])?;
        for r in &self.records {
            w.write_record([
                r.iteration.to_string(),
                r.phi.to_string(),
                r.theta.to_string(),
                r.e_raw.to_string(),
                fmt_opt(r.e_ni),
                fmt_opt(r.e_exact),
            ])?;
        }
        w.flush().map_err(|e| Error::Output(e.to_string()))?;
        Ok(())
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("trace serializes")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpsaConfig {
    pub alpha: f64,
    pub gamma: f64,
    pub a: f64,
    pub c: f64,
    #[serde(rename = "A")]
    pub big_a: f64,
    pub iterations: usize,
    pub shots: u64,
}

impl Default for SpsaConfig {
    fn default() -> Self {
        Self {
            alpha: 0.602,
            gamma: 0.101,
            a: 0.15,
            c: 0.2,
            big_a: 1.0,
            iterations: 50,
            shots: 1000,
        }
    }
}

impl SpsaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.a > 0.0 && self.c > 0.0 && self.gamma > 0.0 && self.alpha > self.gamma && self.big_a >= 0.0) {
            return Err(Error::InvalidParameter(format!("invalid SPSA gains {self:?}")));
        }
        Ok(())
    }

    /// `(a_k, c_k)` for 1-based iteration `k`.
    pub fn gains(&self, k: usize) -> (f64, f64) {
        let k = k as f64;
        (self.a / (k + self.big_a).powf(self.alpha), self.c / k.powf(self.gamma))
    }
}

/// One-stage SPSA. Each iteration evaluates the center (for the trace),
/// then `θ ± c_k Δ` for a Rademacher `Δ`, and steps `θ ← θ − a_k g`.
pub fn spsa_run<E: Evaluator + ?Sized, R: Rng + ?Sized>(
    cfg: &SpsaConfig,
    evaluator: &mut E,
    start: AnsatzParams,
    stream: &mut R,
    diagnostics: Option<&HubbardParams>,
) -> Result<OptTrace> {
    cfg.validate()?;
    let mut x = start.as_array();
    let mut records = Vec::with_capacity(cfg.iterations);
    let mut evaluations = 0;
    for k in 1..=cfg.iterations {
        let (a_k, c_k) = cfg.gains(k);
        let center = AnsatzParams::from_array(x);
        let ev = evaluator.evaluate(&center)?;
        let delta: [f64; 2] = std::array::from_fn(|_| if stream.random::<bool>() { 1.0 } else { -1.0 });
        let plus = AnsatzParams::from_array([x[0] + c_k * delta[0], x[1] + c_k * delta[1]]);
        let minus = AnsatzParams::from_array([x[0] - c_k * delta[0], x[1] - c_k * delta[1]]);
        let e_plus = evaluator.evaluate(&plus)?.objective().value;
        let e_minus = evaluator.evaluate(&minus)?.objective().value;
        evaluations += 3;
        let diff = (e_plus - e_minus) / (2.0 * c_k);
        records.push(TraceRecord {
            iteration: k,
            phi: x[0],
            theta: x[1],
            e_raw: ev.raw.value,
            e_ni: ev.ni.map(|e| e.value),
            e_exact: diagnostics.map(|h| exact_energy(&center, h)),
            samples: Vec::new(),
        });
        for i in 0..2 {
            x[i] -= a_k * diff / delta[i];
        }
    }
    Ok(OptTrace {
        optimizer: "spsa".into(),
        records,
        final_params: AnsatzParams::from_array(x),
        evaluations,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MgdConfig {
    pub alpha: f64,
    pub delta: f64,
    pub xi: f64,
    pub l: f64,
    pub gamma: f64,
    #[serde(rename = "A")]
    pub big_a: f64,
    pub eta: Option<f64>,
    pub iterations: usize,
    pub shots: u64,
}

impl Default for MgdConfig {
    fn default() -> Self {
        Self {
            alpha: 0.602,
            delta: 0.6,
            xi: 0.101,
            l: 0.2,
            gamma: 0.6,
            big_a: 1.0,
            eta: None,
            iterations: 30,
            shots: 1000,
        }
    }
}

impl MgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.xi > 0.0 && self.xi < self.alpha && self.gamma > 0.0 && self.l > 0.0) {
            return Err(Error::InvalidParameter(format!("invalid MGD settings {self:?}")));
        }
        Ok(())
    }

    /// Trust-region half-width `δ_k`.
    pub fn radius(&self, k: usize) -> f64 {
        self.delta / (k as f64).powf(self.xi)
    }

    /// Step size `γ_k`.
    pub fn step(&self, k: usize) -> f64 {
        self.gamma / (k as f64 + self.big_a).powf(self.alpha)
    }
}

/// `round(6η)`. Values below 6 leave the quadratic fit under-determined
/// without the ridge term.
pub fn n_points_from_eta(eta: f64) -> Result<usize> {
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(Error::InvalidParameter(format!("eta = {eta} must be positive")));
    }
    Ok((eta * SURROGATE_FEATURES as f64).round() as usize)
}

/// Quadratic `c0 + c1 x + c2 y + c3 x² + c4 xy + c5 y²` in offset
/// coordinates around a center.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Surrogate {
    pub coeffs: [f64; SURROGATE_FEATURES],
}

impl Surrogate {
    pub fn value(&self, x: f64, y: f64) -> f64 {
        let c = &self.coeffs;
        c[0] + c[1] * x + c[2] * y + c[3] * x * x + c[4] * x * y + c[5] * y * y
    }

    pub fn gradient_at_center(&self) -> [f64; 2] {
        [self.coeffs[1], self.coeffs[2]]
    }
}

fn features(x: f64, y: f64) -> [f64; SURROGATE_FEATURES] {
    [1.0, x, y, x * x, x * y, y * y]
}

/// Ridge-regularized weighted least squares. `ridge` applies to every
/// coefficient; weights are `1/σ²`. Points are given as offsets; `scale`
/// is the sampling radius, used only to condition the solve.
pub fn fit_surrogate(
    offsets: &[[f64; 2]],
    values: &[f64],
    weights: &[f64],
    ridge: f64,
    scale: f64,
) -> Result<Surrogate> {
    let s = if scale > 0.0 { scale } else { 1.0 };
    // column scaling of the features in units of the radius
    let col_scale = features(s, s);
    let mut gram = SMatrix::<f64, 6, 6>::zeros();
    let mut rhs = SVector::<f64, 6>::zeros();
    for ((o, &v), &w) in offsets.iter().zip(values).zip(weights) {
        let f = features(o[0], o[1]);
        let fs = SVector::<f64, 6>::from_fn(|j, _| f[j] / col_scale[j]);
        gram += w * fs * fs.transpose();
        rhs += w * v * fs;
    }
    for j in 0..SURROGATE_FEATURES {
        gram[(j, j)] += ridge / (col_scale[j] * col_scale[j]);
    }
    let sv = gram.singular_values();
    if sv.min() <= 1e-12 * sv.max() {
        return Err(Error::UnderDetermined(format!(
            "{} points cannot determine {} surrogate coefficients",
            offsets.len(),
            SURROGATE_FEATURES
        )));
    }
    let sol = gram
        .cholesky()
        .ok_or_else(|| Error::UnderDetermined("normal equations not positive definite".into()))?
        .solve(&rhs);
    Ok(Surrogate {
        coeffs: std::array::from_fn(|j| sol[j] / col_scale[j]),
    })
}

/// Fits the surrogate from estimates with the module's weighting rule:
/// weights `1/σ²` and ridge `mean(σ²)/l²`; when any estimate is exact
/// (σ = 0) the fit is unweighted and unregularized.
pub fn fit_from_estimates(offsets: &[[f64; 2]], estimates: &[EnergyEstimate], l: f64, scale: f64) -> Result<Surrogate> {
    let values: Vec<f64> = estimates.iter().map(|e| e.value).collect();
    let variances: Vec<f64> = estimates.iter().map(|e| e.std_err * e.std_err).collect();
    if variances.iter().any(|&v| v <= 0.0) {
        return fit_surrogate(offsets, &values, &vec![1.0; values.len()], 0.0, scale);
    }
    let mean_var = variances.iter().sum::<f64>() / variances.len() as f64;
    let weights: Vec<f64> = variances.iter().map(|v| 1.0 / v).collect();
    fit_surrogate(offsets, &values, &weights, mean_var / (l * l), scale)
}

/// Batch-parallel model gradient descent with `points` samples per
/// iteration, all submitted together.
pub fn mgd_run<E: BatchEvaluator + ?Sized, R: Rng + ?Sized>(
    cfg: &MgdConfig,
    evaluator: &mut E,
    start: AnsatzParams,
    points: usize,
    stream: &mut R,
    diagnostics: Option<&HubbardParams>,
) -> Result<OptTrace> {
    cfg.validate()?;
    if points == 0 {
        return Err(Error::UnderDetermined("no sample points per iteration".into()));
    }
    let mut x = start.as_array();
    let mut records = Vec::with_capacity(cfg.iterations);
    let mut evaluations = 0;
    for k in 1..=cfg.iterations {
        let radius = cfg.radius(k);
        let offsets: Vec<[f64; 2]> = (0..points)
            .map(|_| [stream.random_range(-radius..=radius), stream.random_range(-radius..=radius)])
            .collect();
        let params: Vec<AnsatzParams> = offsets
            .iter()
            .map(|o| AnsatzParams::from_array([x[0] + o[0], x[1] + o[1]]))
            .collect();
        let evs = evaluator.evaluate_batch(&params)?;
        evaluations += evs.len();
        let objective: Vec<EnergyEstimate> = evs.iter().map(Evaluation::objective).collect();
        let fit = fit_from_estimates(&offsets, &objective, cfg.l, radius)?;
        let raw: Vec<EnergyEstimate> = evs.iter().map(|e| e.raw).collect();
        let e_raw = if evs.iter().any(|e| e.ni.is_some()) {
            fit_from_estimates(&offsets, &raw, cfg.l, radius)?.coeffs[0]
        } else {
            fit.coeffs[0]
        };
        let center = AnsatzParams::from_array(x);
        records.push(TraceRecord {
            iteration: k,
            phi: x[0],
            theta: x[1],
            e_raw,
            e_ni: evs.iter().any(|e| e.ni.is_some()).then_some(fit.coeffs[0]),
            e_exact: diagnostics.map(|h| exact_energy(&center, h)),
            samples: params.iter().map(|p| p.as_array()).collect(),
        });
        let g = fit.gradient_at_center();
        let step = cfg.step(k);
        x[0] -= step * g[0];
        x[1] -= step * g[1];
    }
    Ok(OptTrace {
        optimizer: "mgd".into(),
        records,
        final_params: AnsatzParams::from_array(x),
        evaluations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hubbard::exact_ground_energy;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn h() -> HubbardParams {
        HubbardParams::default()
    }

    #[test]
    fn gain_sequences() {
        let s = SpsaConfig::default();
        let (a1, c1) = s.gains(1);
        assert!((a1 - 0.15 / 2f64.powf(0.602)).abs() < 1e-12);
        assert!((a1 - 0.09882).abs() < 1e-5);
        assert_eq!(c1, 0.2);
        let m = MgdConfig::default();
        assert!((m.radius(1) - 0.6).abs() < 1e-15);
        assert!((m.step(3) - 0.6 / 4f64.powf(0.602)).abs() < 1e-15);
        for k in 1..200 {
            let (a, c) = s.gains(k);
            let (a2, c2) = s.gains(k + 1);
            assert!(a2 < a && c2 < c);
            assert!(m.radius(k + 1) < m.radius(k) && m.step(k + 1) < m.step(k));
        }
    }

    #[test]
    fn eta_to_points() {
        assert_eq!(n_points_from_eta(2.0).unwrap(), 12);
        assert_eq!(n_points_from_eta(1.5).unwrap(), 9);
        assert_eq!(n_points_from_eta(1.0).unwrap(), 6);
        assert!(n_points_from_eta(0.0).is_err());
    }

    #[test]
    fn spsa_converges_noiselessly() {
        let cfg = SpsaConfig { iterations: 100, ..Default::default() };
        let ground = exact_ground_energy(&h());
        let good = (0..10)
            .filter(|&seed| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut ev = ExactEvaluator { hubbard: h() };
                let t = spsa_run(&cfg, &mut ev, AnsatzParams::new(0.6, 0.8), &mut rng, None).unwrap();
                exact_energy(&t.final_params, &h()) - ground < 0.01
            })
            .count();
        assert!(good >= 8, "{good}/10");
    }

    #[test]
    fn spsa_constant_objective_never_moves() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut ev = FnEvaluator(|_: &AnsatzParams| 3.25);
        let start = AnsatzParams::new(0.6, 0.8);
        let t = spsa_run(&SpsaConfig::default(), &mut ev, start, &mut rng, None).unwrap();
        assert_eq!(t.final_params, start);
        assert_eq!(t.records.len(), 50);
        assert_eq!(t.evaluations, 150);
    }

    #[test]
    fn spsa_ignores_additive_constant_and_diagnostics() {
        let run = |offset: f64, diag: bool| {
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            let mut ev = FnEvaluator(|a: &AnsatzParams| exact_energy(a, &h()) + offset);
            let d = h();
            spsa_run(&SpsaConfig::default(), &mut ev, AnsatzParams::new(0.6, 0.8), &mut rng, diag.then_some(&d)).unwrap()
        };
        let base = run(0.0, true);
        let shifted = run(0.0, false);
        let params = |t: &OptTrace| t.records.iter().map(|r| (r.phi, r.theta)).collect::<Vec<_>>();
        assert_eq!(params(&base), params(&shifted));
        assert!(shifted.records.iter().all(|r| r.e_exact.is_none()));
        // exact cancellation of the constant holds up to float rounding
        let offset = run(7.0, true);
        for (a, b) in params(&base).iter().zip(params(&offset)) {
            assert!((a.0 - b.0).abs() < 1e-9 && (a.1 - b.1).abs() < 1e-9);
        }
    }

    #[test]
    fn surrogate_recovers_quadratic() {
        let truth = [0.3, -1.2, 0.7, 2.0, -0.5, 1.5];
        let q = Surrogate { coeffs: truth };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for n in [6, 12, 25] {
            let offsets: Vec<[f64; 2]> = (0..n)
                .map(|_| [rng.random_range(-0.4..0.4), rng.random_range(-0.4..0.4)])
                .collect();
            let values: Vec<f64> = offsets.iter().map(|o| q.value(o[0], o[1])).collect();
            let fit = fit_surrogate(&offsets, &values, &vec![1.0; n], 0.0, 0.4).unwrap();
            for j in 0..6 {
                assert!((fit.coeffs[j] - truth[j]).abs() < 1e-8, "{n} {j}");
            }
        }
    }

    #[test]
    fn mgd_exact_quadratic_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let center = [0.2, -0.1];
        let f = |a: &AnsatzParams| {
            let (x, y) = (a.phi, a.theta);
            1.0 + 0.5 * x - 2.0 * y + 3.0 * x * x + x * y + 0.25 * y * y
        };
        let grad = [0.5 + 6.0 * center[0] + center[1], -2.0 + center[0] + 0.5 * center[1]];
        let mut ev = FnEvaluator(f);
        let cfg = MgdConfig { iterations: 1, gamma: 1.0, big_a: 0.0, alpha: 0.602, ..Default::default() };
        let t = mgd_run(&cfg, &mut ev, AnsatzParams::from_array(center), 6, &mut rng, None).unwrap();
        // one step with γ_1 = 1 moves by exactly the fitted gradient
        let moved = t.final_params.as_array();
        assert!((center[0] - moved[0] - grad[0]).abs() < 1e-8);
        assert!((center[1] - moved[1] - grad[1]).abs() < 1e-8);
        assert_eq!(t.records[0].samples.len(), 6);
    }

    #[test]
    fn mgd_gradient_converges_on_energy_surface() {
        let center = AnsatzParams::new(0.5, 0.3);
        let hp = 1e-5;
        let fd = [
            (exact_energy(&AnsatzParams::new(0.5 + hp, 0.3), &h()) - exact_energy(&AnsatzParams::new(0.5 - hp, 0.3), &h())) / (2.0 * hp),
            (exact_energy(&AnsatzParams::new(0.5, 0.3 + hp), &h()) - exact_energy(&AnsatzParams::new(0.5, 0.3 - hp), &h())) / (2.0 * hp),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut errors = Vec::new();
        for radius in [0.4, 0.2, 0.1, 0.05] {
            let offsets: Vec<[f64; 2]> = (0..12)
                .map(|_| [rng.random_range(-radius..=radius), rng.random_range(-radius..=radius)])
                .collect();
            let values: Vec<f64> = offsets
                .iter()
                .map(|o| exact_energy(&AnsatzParams::new(center.phi + o[0], center.theta + o[1]), &h()))
                .collect();
            let g = fit_surrogate(&offsets, &values, &[1.0; 12], 0.0, radius).unwrap().gradient_at_center();
            errors.push(((g[0] - fd[0]).powi(2) + (g[1] - fd[1]).powi(2)).sqrt());
        }
        for w in errors.windows(2) {
            assert!(w[1] < w[0], "{errors:?}");
        }
        assert!(errors[3] < 0.05 * 1.0 + 0.05, "{errors:?}");
        assert!(errors[3] / errors[0] < 0.2, "{errors:?}");
    }

    #[test]
    fn mgd_converges_noiselessly_with_tight_trust_region() {
        let cfg = MgdConfig { iterations: 50, delta: 0.3, ..Default::default() };
        let ground = exact_ground_energy(&h());
        let good = (0..10)
            .filter(|&seed| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut ev = ExactEvaluator { hubbard: h() };
                let t = mgd_run(&cfg, &mut ev, AnsatzParams::new(0.6, 0.8), 12, &mut rng, None).unwrap();
                exact_energy(&t.final_params, &h()) - ground < 0.01
            })
            .count();
        assert!(good >= 8, "{good}/10");
    }

    #[test]
    fn wide_trust_region_shrinks_phi_toward_zero() {
        // the x·y² term of the energy leaks into the fitted φ slope
        let cfg = MgdConfig { iterations: 50, ..Default::default() };
        let phi_star = crate::hubbard::optimal_params(&h()).phi.abs();
        for seed in 0..5 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut ev = ExactEvaluator { hubbard: h() };
            let t = mgd_run(&cfg, &mut ev, AnsatzParams::new(0.6, 0.8), 12, &mut rng, None).unwrap();
            let phi = t.final_params.phi.abs();
            assert!(phi < phi_star - 0.02 && phi > 0.1, "seed {seed}: |phi| = {phi}");
        }
    }

    #[test]
    fn mgd_under_determined_without_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut ev = ExactEvaluator { hubbard: h() };
        let r = mgd_run(&MgdConfig::default(), &mut ev, AnsatzParams::new(0.6, 0.8), 4, &mut rng, None);
        assert!(matches!(r, Err(Error::UnderDetermined(_))));
    }

    #[test]
    fn ridge_makes_small_batches_solvable() {
        let offsets = [[0.1, 0.0], [0.0, 0.1], [-0.1, 0.05]];
        let est: Vec<EnergyEstimate> = [1.0, 2.0, 1.5]
            .iter()
            .map(|&v| EnergyEstimate { value: v, std_err: 0.05, shots_per_setting: 100 })
            .collect();
        assert!(fit_from_estimates(&offsets, &est, 0.2, 0.1).is_ok());
    }

    #[test]
    fn trace_csv_layout() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut ev = ExactEvaluator { hubbard: h() };
        let cfg = SpsaConfig { iterations: 3, ..Default::default() };
        let t = spsa_run(&cfg, &mut ev, AnsatzParams::new(0.6, 0.8), &mut rng, Some(&h())).unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "iteration,phi,theta,e_raw,e_ni,e_exact");
        assert_eq!(lines.len(), 4);
        assert!(lines[1].starts_with("1,0.6,0.8,"));
        let back: OptTrace = serde_json::from_str(&t.to_json_string()).unwrap();
        assert_eq!(back, t);
    }
}
