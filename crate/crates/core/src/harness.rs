//! Experiment drivers behind the `parvqe` subcommands. Every command writes
//! CSV data, SVG plots and a `run_record.json` into the output directory.
//! CSV files are the normative output and depend only on the config.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::device::{load_calibration, select_pairs, DeviceTopology, Pair, PairSelection, SelectionMethod};
use crate::error::{Error, Result};
use crate::executor::{BatchJob, ConfusionSet, CostModel, EnergyEstimate, Executor, PairEnergy, Sampling};
use crate::hubbard::{exact_energy, exact_ground_energy, landscape_axis, AnsatzParams, HubbardParams};
use crate::mitigation::tflo_correct;
use crate::optimizers::{
    mgd_run, n_points_from_eta, spsa_run, DeviceEvaluator, MgdConfig, OptTrace, ParallelMode, SpsaConfig,
};
use crate::plot::{heatmap_svg, xy_plot_svg, Series};
use crate::rng::{self, derive_seed, label};

pub const RECORD_SCHEMA_VERSION: u32 = 1;
pub const RECORD_FILE: &str = "run_record.json";

/// Measurement settings per energy estimate.
const SETTINGS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    BenchmarkPairs,
    Heatmap,
    Vqe,
    ShotsSweep,
    OptimizerCompare,
}

impl Command {
    pub const ALL: [Command; 5] = [
        Command::BenchmarkPairs,
        Command::Heatmap,
        Command::Vqe,
        Command::ShotsSweep,
        Command::OptimizerCompare,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::BenchmarkPairs => "benchmark-pairs",
            Command::Heatmap => "heatmap",
            Command::Vqe => "vqe",
            Command::ShotsSweep => "shots-sweep",
            Command::OptimizerCompare => "optimizer-compare",
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Command {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Command::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown command {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Spsa,
    Mgd,
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::Spsa => "spsa",
            OptimizerKind::Mgd => "mgd",
        })
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "spsa" => Ok(OptimizerKind::Spsa),
            "mgd" => Ok(OptimizerKind::Mgd),
            other => Err(Error::InvalidParameter(format!("unknown optimizer {other:?}"))),
        }
    }
}

/// Which corrections are applied: NI during estimation, TFLO on reported
/// energies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mitigation {
    pub ni: bool,
    pub tflo: bool,
}

impl Mitigation {
    pub const NONE: Mitigation = Mitigation { ni: false, tflo: false };
    pub const FULL: Mitigation = Mitigation { ni: true, tflo: true };
}

impl fmt::Display for Mitigation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match (self.ni, self.tflo) {
            (false, false) => "none",
            (true, false) => "ni",
            (false, true) => "tflo",
            (true, true) => "ni+tflo",
        })
    }
}

impl FromStr for Mitigation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Mitigation::NONE),
            "ni" => Ok(Mitigation { ni: true, tflo: false }),
            "tflo" => Ok(Mitigation { ni: false, tflo: true }),
            "ni+tflo" | "tflo+ni" => Ok(Mitigation::FULL),
            other => Err(Error::InvalidParameter(format!("unknown mitigation {other:?}"))),
        }
    }
}

/// Options shared by all commands. `None` fields take a per-command default
/// which is written into the run record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// Device calibration JSON; the bundled stand-in when absent.
    pub calibration: Option<PathBuf>,
    pub cost_model: Option<PathBuf>,
    pub seed: u64,
    pub pairs: Option<usize>,
    pub select: SelectionMethod,
    pub cap: Option<f64>,
    pub shots: Option<u64>,
    pub optimizer: OptimizerKind,
    pub iterations: Option<usize>,
    pub mitigation: Mitigation,
    pub out: PathBuf,
    pub workers: usize,
    pub hubbard: HubbardParams,
    pub confusion_shots: u64,
    pub crosstalk: f64,
    pub repeats: Option<usize>,
    pub grid: usize,
    pub start: AnsatzParams,
    pub shot_list: Vec<u64>,
    pub pair_counts: Vec<usize>,
    /// Forces a parallel mode for `vqe`.
    pub mode: Option<ParallelMode>,
    /// MGD points per iteration on a single pair, as `round(6η)`.
    pub eta: Option<f64>,
    /// Exact outcome probabilities instead of shot sampling.
    pub exact: bool,
}

impl ExperimentConfig {
    pub fn new(seed: u64, out: impl Into<PathBuf>) -> Self {
        Self {
            calibration: None,
            cost_model: None,
            seed,
            pairs: None,
            select: SelectionMethod::Greedy,
            cap: None,
            shots: None,
            optimizer: OptimizerKind::Spsa,
            iterations: None,
            mitigation: Mitigation::FULL,
            out: out.into(),
            workers: 1,
            hubbard: HubbardParams::default(),
            confusion_shots: 10_000,
            crosstalk: 0.0,
            repeats: None,
            grid: 20,
            start: AnsatzParams::new(0.6, 0.8),
            shot_list: vec![100, 1_000, 10_000],
            pair_counts: vec![2, 4, 6, 8, 12, 16, 20],
            mode: None,
            eta: None,
            exact: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(p) = &self.calibration {
            if !p.is_file() {
                return Err(Error::InvalidParameter(format!("calibration file {} does not exist", p.display())));
            }
        }
        if let Some(p) = &self.cost_model {
            if !p.is_file() {
                return Err(Error::InvalidParameter(format!("cost model file {} does not exist", p.display())));
            }
        }
        if self.workers == 0 {
            return Err(Error::InvalidParameter("workers must be at least 1".into()));
        }
        if self.pairs == Some(0) || self.shots == Some(0) || self.repeats == Some(0) || self.iterations == Some(0) {
            return Err(Error::InvalidParameter("pairs, shots, repeats and iterations must be positive".into()));
        }
        if self.grid == 0 || self.confusion_shots == 0 {
            return Err(Error::InvalidParameter("grid and confusion shots must be positive".into()));
        }
        if self.shot_list.is_empty() || self.shot_list.contains(&0) {
            return Err(Error::InvalidParameter("shot list must be non-empty and positive".into()));
        }
        if self.pair_counts.is_empty() || self.pair_counts.contains(&0) {
            return Err(Error::InvalidParameter("pair counts must be non-empty and positive".into()));
        }
        if !self.start.is_finite() {
            return Err(Error::InvalidParameter("start point must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub schema_version: u32,
    pub command: Command,
    pub code_version: String,
    pub config: ExperimentConfig,
    /// Per-command values resolved from defaults.
    pub resolved: BTreeMap<String, serde_json::Value>,
    pub ground_energy: f64,
    pub pairs: Vec<Pair>,
    pub metrics: BTreeMap<String, f64>,
    /// Cost-model predictions in seconds.
    pub modeled_seconds: BTreeMap<String, f64>,
    pub artifacts: Vec<String>,
}

impl RunRecord {
    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("run record serializes")
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }

    pub fn metric(&self, name: &str) -> Option<f64> {
        self.metrics.get(name).copied()
    }
}

pub fn run(command: Command, cfg: &ExperimentConfig) -> Result<RunRecord> {
    match command {
        Command::BenchmarkPairs => cmd_benchmark_pairs(cfg),
        Command::Heatmap => cmd_heatmap(cfg),
        Command::Vqe => cmd_vqe(cfg),
        Command::ShotsSweep => cmd_shots_sweep(cfg),
        Command::OptimizerCompare => cmd_optimizer_compare(cfg),
    }
}

/// An energy and its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Level {
    pub value: f64,
    pub std_err: f64,
}

impl From<EnergyEstimate> for Level {
    fn from(e: EnergyEstimate) -> Self {
        Self {
            value: e.value,
            std_err: e.std_err,
        }
    }
}

/// One energy at each mitigation level that was computed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Levels {
    pub raw: Level,
    pub ni: Option<Level>,
    pub tflo: Option<Level>,
    pub tflo_ni: Option<Level>,
}

impl Levels {
    /// The most corrected level allowed by `m`.
    pub fn pick(&self, m: Mitigation) -> Level {
        let candidates = match (m.ni, m.tflo) {
            (true, true) => [self.tflo_ni, self.ni, self.tflo],
            (true, false) => [self.ni, None, None],
            (false, true) => [self.tflo, None, None],
            (false, false) => [None, None, None],
        };
        candidates.into_iter().flatten().next().unwrap_or(self.raw)
    }

    fn values(&self) -> [Option<f64>; 4] {
        [
            Some(self.raw.value),
            self.ni.map(|l| l.value),
            self.tflo.map(|l| l.value),
            self.tflo_ni.map(|l| l.value),
        ]
    }

    /// Equal-weight mean over pairs that ran the same circuit.
    fn mean(all: &[Levels]) -> Levels {
        let n = all.len() as f64;
        let avg = |get: &dyn Fn(&Levels) -> Option<Level>| -> Option<Level> {
            let v: Option<Vec<Level>> = all.iter().map(get).collect();
            v.map(|v| Level {
                value: v.iter().map(|l| l.value).sum::<f64>() / n,
                std_err: v.iter().map(|l| l.std_err * l.std_err).sum::<f64>().sqrt() / n,
            })
        };
        Levels {
            raw: avg(&|l| Some(l.raw)).expect("raw is always present"),
            ni: avg(&|l| l.ni),
            tflo: avg(&|l| l.tflo),
            tflo_ni: avg(&|l| l.tflo_ni),
        }
    }
}

const LEVEL_NAMES: [&str; 4] = ["raw", "ni", "tflo", "tflo_ni"];

fn corrected(main: &PairEnergy, reference: Option<&PairEnergy>, ref_exact: f64) -> Levels {
    let tflo = |m: EnergyEstimate, r: EnergyEstimate| Level {
        value: tflo_correct(m.value, ref_exact, r.value),
        std_err: m.std_err.hypot(r.std_err),
    };
    Levels {
        raw: main.raw.into(),
        ni: main.ni.map(Level::from),
        tflo: reference.map(|r| tflo(main.raw, r.raw)),
        tflo_ni: reference.and_then(|r| Some(tflo(main.ni?, r.ni?))),
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn median(v: &[f64]) -> f64 {
    let mut s: Vec<f64> = v.iter().copied().filter(|x| x.is_finite()).collect();
    if s.is_empty() {
        return f64::NAN;
    }
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

fn min_max(v: &[f64]) -> (f64, f64) {
    v.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)))
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

struct Context<'c> {
    cfg: &'c ExperimentConfig,
    topology: DeviceTopology,
    cost: CostModel,
    executor: Executor,
    ground: f64,
    artifacts: Vec<String>,
    resolved: BTreeMap<String, serde_json::Value>,
    metrics: BTreeMap<String, f64>,
    modeled: BTreeMap<String, f64>,
}

impl<'c> Context<'c> {
    fn new(cfg: &'c ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let topology = match &cfg.calibration {
            Some(p) => load_calibration(p)?,
            None => DeviceTopology::shipped(),
        };
        let cost = match &cfg.cost_model {
            Some(p) => CostModel::load(p)?,
            None => CostModel::shipped(),
        };
        let sampling = if cfg.exact { Sampling::Exact } else { Sampling::Shots };
        let executor = Executor::new(topology.clone(), cfg.hubbard, cfg.workers)?
            .with_crosstalk(cfg.crosstalk)?
            .with_sampling(sampling);
        std::fs::create_dir_all(&cfg.out).map_err(|e| Error::io(&cfg.out, e))?;
        Ok(Self {
            cfg,
            topology,
            cost,
            executor,
            ground: exact_ground_energy(&cfg.hubbard),
            artifacts: Vec::new(),
            resolved: BTreeMap::new(),
            metrics: BTreeMap::new(),
            modeled: BTreeMap::new(),
        })
    }

    fn resolve<T: Serialize>(&mut self, key: &str, value: T) {
        self.resolved
            .insert(key.into(), serde_json::to_value(value).expect("resolved value serializes"));
    }

    fn metric(&mut self, key: &str, value: f64) {
        self.metrics.insert(key.into(), value);
    }

    fn selection(&self, cap: Option<f64>) -> PairSelection {
        select_pairs(&self.topology, self.cfg.select, cap)
    }

    fn write(&mut self, name: &str, contents: &[u8]) -> Result<()> {
        let path = self.cfg.out.join(name);
        std::fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
        self.artifacts.push(name.into());
        Ok(())
    }

    fn write_csv(&mut self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(header)?;
        for r in rows {
            w.write_record(r)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Output(e.to_string()))?;
        self.write(name, &bytes)
    }

    fn confusions(&self, pairs: &[Pair]) -> Result<Option<ConfusionSet>> {
        if !self.cfg.mitigation.ni {
            return Ok(None);
        }
        let seed = derive_seed(self.cfg.seed, &[label::CONFUSION]);
        Ok(Some(self.executor.measure_confusions(pairs, self.cfg.confusion_shots, seed)?))
    }

    /// Runs `assignments` as one batch, and its φ = 0 reference batch when
    /// `tflo` is set, returning per-assignment levels.
    fn measure(
        &self,
        assignments: Vec<(Pair, AnsatzParams)>,
        shots: u64,
        seed: u64,
        confusions: Option<&ConfusionSet>,
        tflo: bool,
    ) -> Result<Vec<Levels>> {
        let h = self.executor.hubbard();
        let run = |assignments: Vec<(Pair, AnsatzParams)>, salt: u64| -> Result<Vec<PairEnergy>> {
            let job = BatchJob {
                assignments,
                shots,
                seed: derive_seed(seed, &[salt]),
                apply_ni: confusions.is_some(),
            };
            self.executor.run_batch(&job)?.energies(h, confusions)
        };
        let main = run(assignments.clone(), 0)?;
        let refs = if tflo {
            Some(run(assignments.iter().map(|&(p, a)| (p, a.tflo_reference())).collect(), 1)?)
        } else {
            None
        };
        Ok(main
            .iter()
            .enumerate()
            .map(|(i, m)| {
                let ref_exact = exact_energy(&m.params.tflo_reference(), h);
                corrected(m, refs.as_ref().map(|r| &r[i]), ref_exact)
            })
            .collect())
    }

    fn finish(mut self, command: Command, pairs: Vec<Pair>) -> Result<RunRecord> {
        self.artifacts.push(RECORD_FILE.into());
        self.artifacts.sort();
        let record = RunRecord {
            schema_version: RECORD_SCHEMA_VERSION,
            command,
            code_version: env!("CARGO_PKG_VERSION").into(),
            config: self.cfg.clone(),
            resolved: self.resolved,
            ground_energy: self.ground,
            pairs,
            metrics: self.metrics,
            modeled_seconds: self.modeled,
            artifacts: self.artifacts,
        };
        let path = self.cfg.out.join(RECORD_FILE);
        std::fs::write(&path, record.to_json_string()).map_err(|e| Error::io(&path, e))?;
        Ok(record)
    }
}

fn pair_cols(p: Pair) -> [String; 2] {
    [p.0.to_string(), p.1.to_string()]
}

fn level_cols(l: &Levels, offset: f64) -> Vec<String> {
    l.values().iter().map(|v| fmt_opt(v.map(|x| x - offset))).collect()
}

/// Individual runs of the optimal circuit on every edge, then a sweep over
/// the first `p` selected pairs in parallel.
pub fn cmd_benchmark_pairs(cfg: &ExperimentConfig) -> Result<RunRecord> {
    let mut ctx = Context::new(cfg)?;
    let shots = cfg.shots.unwrap_or(10_000);
    let params = crate::hubbard::optimal_params(&cfg.hubbard);
    let tflo = true;
    let selection = ctx.selection(cfg.cap);
    let max_p = cfg.pairs.unwrap_or(selection.len());
    let sweep_pairs = selection.take(max_p)?;
    ctx.resolve("shots", shots);
    ctx.resolve("params", params);
    ctx.resolve("max_pairs", max_p);

    let edges: Vec<Pair> = ctx.topology.edges().iter().map(|e| e.pair()).collect();
    // NI is always measured here so that all four levels can be reported.
    let confusions = ctx.executor.measure_confusions(
        &edges,
        cfg.confusion_shots,
        derive_seed(cfg.seed, &[label::CONFUSION]),
    )?;

    let mut individual: BTreeMap<Pair, Levels> = BTreeMap::new();
    let mut rows = Vec::new();
    for (i, &pair) in edges.iter().enumerate() {
        let seed = derive_seed(cfg.seed, &[label::EXPERIMENT, 0, i as u64]);
        let l = ctx.measure(vec![(pair, params)], shots, seed, Some(&confusions), tflo)?[0];
        individual.insert(pair, l);
        let mut row = pair_cols(pair).to_vec();
        row.push(ctx.topology.fidelity(pair)?.to_string());
        row.extend(level_cols(&l, 0.0));
        row.extend(level_cols(&l, ctx.ground));
        rows.push(row);
    }
    ctx.write_csv(
        "individual.csv",
        &[
            "pair_a", "pair_b", "fidelity", "e_raw", "e_ni", "e_tflo", "e_tflo_ni", "err_raw", "err_ni", "err_tflo",
            "err_tflo_ni",
        ],
        &rows,
    )?;

    let mut sweep_rows = Vec::new();
    let mut matrix_rows = Vec::new();
    let mut curves: [Vec<f64>; 4] = Default::default();
    let mut within = (0usize, 0usize);
    let mut matrix_grid = vec![vec![f64::NAN; max_p]; max_p];
    for p in 1..=max_p {
        let pairs = &sweep_pairs[..p];
        let seed = derive_seed(cfg.seed, &[label::EXPERIMENT, 1, p as u64]);
        let levels = ctx.measure(
            pairs.iter().map(|&q| (q, params)).collect(),
            shots,
            seed,
            Some(&confusions),
            tflo,
        )?;
        let mut row = vec![p.to_string()];
        for k in 0..4 {
            let errs: Vec<f64> = levels.iter().filter_map(|l| l.values()[k]).map(|v| (v - ctx.ground).abs()).collect();
            let mean = errs.iter().sum::<f64>() / errs.len() as f64;
            curves[k].push(mean);
            row.push(mean.to_string());
        }
        row.push(Levels::mean(&levels).pick(Mitigation::FULL).value.to_string());
        sweep_rows.push(row);
        for (j, (&pair, l)) in pairs.iter().zip(&levels).enumerate() {
            let f = ctx.topology.fidelity(pair)?;
            let mut r = pair_cols(pair).to_vec();
            r.push(f.to_string());
            r.push(p.to_string());
            r.extend(level_cols(l, ctx.ground));
            matrix_rows.push(r);
            let err = (l.pick(cfg.mitigation).value - ctx.ground).abs();
            matrix_grid[j][p - 1] = err;
            if f >= 0.9 {
                let base = (individual[&pair].pick(cfg.mitigation).value - ctx.ground).abs();
                within.1 += 1;
                if err <= 2.0 * base {
                    within.0 += 1;
                }
            }
        }
    }
    ctx.write_csv(
        "sweep.csv",
        &["p", "mean_abs_err_raw", "mean_abs_err_ni", "mean_abs_err_tflo", "mean_abs_err_tflo_ni", "pooled_tflo_ni"],
        &sweep_rows,
    )?;
    ctx.write_csv(
        "pair_matrix.csv",
        &["pair_a", "pair_b", "fidelity", "p", "err_raw", "err_ni", "err_tflo", "err_tflo_ni"],
        &matrix_rows,
    )?;

    let ps: Vec<f64> = (1..=max_p).map(|p| p as f64).collect();
    if max_p >= 2 {
        ctx.metric("spearman_raw", spearman(&ps, &curves[0]));
        ctx.metric("spearman_tflo", spearman(&ps, &curves[2]));
    }
    let below = curves[2].iter().zip(&curves[0]).filter(|(t, r)| t < r).count();
    ctx.metric("tflo_below_raw_fraction", below as f64 / max_p as f64);
    if within.1 > 0 {
        ctx.metric("high_fidelity_within_2x_fraction", within.0 as f64 / within.1 as f64);
    }
    for (k, name) in LEVEL_NAMES.iter().enumerate() {
        let errs: Vec<f64> = individual
            .values()
            .filter_map(|l| l.values()[k])
            .map(|v| (v - ctx.ground).abs())
            .collect();
        ctx.metric(&format!("individual_mean_abs_err_{name}"), errs.iter().sum::<f64>() / errs.len() as f64);
    }
    let t1 = ctx.cost.batch_time(1, shots, SETTINGS);
    ctx.modeled.insert("individual".into(), 2.0 * edges.len() as f64 * t1);
    let sweep: f64 = (1..=max_p).map(|p| 2.0 * ctx.cost.batch_time(p, shots, SETTINGS)).sum();
    ctx.modeled.insert("sweep".into(), sweep);

    let scatter: Vec<Series> = LEVEL_NAMES
        .iter()
        .enumerate()
        .map(|(k, name)| {
            Series::scatter(
                *name,
                individual
                    .iter()
                    .filter_map(|(&pair, l)| Some((ctx.topology.fidelity(pair).ok()?, l.values()[k]? - ctx.ground)))
                    .collect(),
            )
        })
        .collect();
    let svg = xy_plot_svg("Individual pairs at the optimum", "CZ fidelity", "energy error", &scatter);
    ctx.write("individual.svg", svg.as_bytes())?;
    let lines: Vec<Series> = LEVEL_NAMES
        .iter()
        .enumerate()
        .map(|(k, name)| Series::line(*name, ps.iter().copied().zip(curves[k].iter().copied()).collect()))
        .collect();
    let svg = xy_plot_svg("Parallel benchmark", "pairs in parallel", "mean |error|", &lines);
    ctx.write("sweep.svg", svg.as_bytes())?;
    let svg = heatmap_svg("|error| per pair (rows) and p (columns)", "p", "pair rank", &matrix_grid, (1.0, max_p as f64));
    ctx.write("pair_matrix.svg", svg.as_bytes())?;

    ctx.finish(Command::BenchmarkPairs, sweep_pairs)
}

/// Energy landscape on a cell-centred grid, tiled over the selected pairs.
pub fn cmd_heatmap(cfg: &ExperimentConfig) -> Result<RunRecord> {
    let mut ctx = Context::new(cfg)?;
    let shots = cfg.shots.unwrap_or(10_000);
    let n_pairs = cfg.pairs.unwrap_or(25);
    let pairs = ctx.selection(cfg.cap).take(n_pairs)?;
    let n = cfg.grid;
    let axis = landscape_axis(n);
    let points: Vec<AnsatzParams> = axis
        .iter()
        .flat_map(|&phi| axis.iter().map(move |&theta| AnsatzParams::new(phi, theta)))
        .collect();
    let batches = points.len().div_ceil(n_pairs);
    ctx.resolve("shots", shots);
    ctx.resolve("pairs", n_pairs);
    ctx.resolve("batches", batches);

    let confusions = ctx.confusions(&pairs)?;
    let mut levels = Vec::with_capacity(points.len());
    for (b, chunk) in points.chunks(n_pairs).enumerate() {
        let seed = derive_seed(cfg.seed, &[label::EXPERIMENT, 2, b as u64]);
        let assignments = pairs.iter().copied().zip(chunk.iter().copied()).collect();
        levels.extend(ctx.measure(assignments, shots, seed, confusions.as_ref(), cfg.mitigation.tflo)?);
    }

    let mut rows = Vec::with_capacity(points.len());
    let mut exact_grid = vec![vec![0.0; n]; n];
    let mut measured_grid = vec![vec![0.0; n]; n];
    let mut error_grid = vec![vec![0.0; n]; n];
    let (mut max_err, mut sum_err, mut max_ratio) = (0.0f64, 0.0, 0.0f64);
    for (k, (a, l)) in points.iter().zip(&levels).enumerate() {
        let exact = exact_energy(a, &cfg.hubbard);
        let chosen = l.pick(cfg.mitigation);
        let err = (chosen.value - exact).abs();
        max_err = max_err.max(err);
        sum_err += err;
        if chosen.std_err > 0.0 {
            max_ratio = max_ratio.max(err / chosen.std_err);
        } else if err > 1e-9 {
            max_ratio = f64::INFINITY;
        }
        let (i, j) = (k / n, k % n);
        exact_grid[i][j] = exact;
        measured_grid[i][j] = chosen.value;
        error_grid[i][j] = err;
        let pair = pairs[k % n_pairs];
        let mut row = vec![a.phi.to_string(), a.theta.to_string()];
        row.extend(pair_cols(pair));
        row.push(exact.to_string());
        row.extend(level_cols(l, 0.0));
        row.push(chosen.value.to_string());
        row.push(chosen.std_err.to_string());
        rows.push(row);
    }
    ctx.write_csv(
        "heatmap.csv",
        &[
            "phi", "theta", "pair_a", "pair_b", "e_exact", "e_raw", "e_ni", "e_tflo", "e_tflo_ni", "e_selected",
            "std_err",
        ],
        &rows,
    )?;
    ctx.metric("batches", batches as f64);
    ctx.metric("max_abs_err", max_err);
    ctx.metric("mean_abs_err", sum_err / points.len() as f64);
    ctx.metric("max_err_over_std_err", max_ratio);
    let grid_min = points
        .iter()
        .zip(&levels)
        .map(|(_, l)| l.pick(cfg.mitigation).value)
        .fold(f64::INFINITY, f64::min);
    ctx.metric("measured_grid_min", grid_min);

    let per_point = if cfg.mitigation.tflo { 2 } else { 1 };
    let parallel = ctx.cost.predict_wall_time(n_pairs, per_point * batches, shots, SETTINGS);
    let serial = ctx.cost.predict_wall_time(1, per_point * points.len(), shots, SETTINGS);
    ctx.modeled.insert("parallel".into(), parallel);
    ctx.modeled.insert("single_pair".into(), serial);
    ctx.metric("modeled_speedup", serial / parallel);

    let ext = (axis[0], axis[n - 1]);
    for (name, title, grid) in [
        ("heatmap_exact.svg", "Exact energy", &exact_grid),
        ("heatmap_measured.svg", "Simulated energy", &measured_grid),
        ("heatmap_error.svg", "Absolute error", &error_grid),
    ] {
        let svg = heatmap_svg(title, "theta", "phi", grid, ext);
        ctx.write(name, svg.as_bytes())?;
    }
    ctx.finish(Command::Heatmap, pairs)
}

/// Resolved settings of one optimizer run.
#[derive(Debug, Clone, Copy, Serialize)]
struct OptimizerPlan {
    optimizer: OptimizerKind,
    mode: ParallelMode,
    pairs: usize,
    points: usize,
    iterations: usize,
    shots: u64,
}

impl OptimizerPlan {
    fn new(cfg: &ExperimentConfig, optimizer: OptimizerKind, pairs: usize, iterations: usize, shots: u64) -> Result<Self> {
        let mode = match (optimizer, cfg.mode) {
            (_, Some(m)) => m,
            (OptimizerKind::Spsa, None) => ParallelMode::SameParams,
            (OptimizerKind::Mgd, None) => ParallelMode::Batch,
        };
        if pairs > 1 {
            match (optimizer, mode) {
                (OptimizerKind::Mgd, ParallelMode::SameParams) => {
                    return Err(Error::InvalidParameter("mgd needs batch mode when running on more than one pair".into()))
                }
                (OptimizerKind::Spsa, ParallelMode::Batch) => {
                    return Err(Error::InvalidParameter("spsa runs in same-params mode on more than one pair".into()))
                }
                _ => {}
            }
        }
        let points = match optimizer {
            OptimizerKind::Spsa => 1,
            OptimizerKind::Mgd if pairs > 1 => pairs,
            OptimizerKind::Mgd => n_points_from_eta(cfg.eta.unwrap_or(2.0))?,
        };
        Ok(Self {
            optimizer,
            mode,
            pairs,
            points,
            iterations,
            shots,
        })
    }

    /// Wall time of this run and of the equivalent run on one pair.
    fn modeled(&self, cost: &CostModel, batches: usize) -> (f64, f64) {
        let parallel = cost.predict_wall_time(self.pairs, batches, self.shots, SETTINGS);
        let single_batches = match self.optimizer {
            OptimizerKind::Spsa => batches,
            OptimizerKind::Mgd => self.points * self.iterations,
        };
        (parallel, cost.predict_wall_time(1, single_batches, self.shots, SETTINGS))
    }
}

struct RepeatOutcome {
    trace: OptTrace,
    batches: usize,
    finals: Levels,
}

fn optimize(
    ctx: &Context,
    plan: &OptimizerPlan,
    pairs: &[Pair],
    confusions: Option<&ConfusionSet>,
    eval_seed: u64,
    stream_labels: &[u64],
    final_seed: u64,
) -> Result<RepeatOutcome> {
    let cfg = ctx.cfg;
    let mut eval = DeviceEvaluator::new(&ctx.executor, pairs.to_vec(), plan.shots, eval_seed, plan.mode)?;
    if let Some(c) = confusions {
        eval = eval.with_confusions(c);
    }
    let mut stream = rng::stream(cfg.seed, stream_labels);
    let trace = match plan.optimizer {
        OptimizerKind::Spsa => {
            let sc = SpsaConfig {
                iterations: plan.iterations,
                shots: plan.shots,
                ..SpsaConfig::default()
            };
            spsa_run(&sc, &mut eval, cfg.start, &mut stream, Some(&cfg.hubbard))?
        }
        OptimizerKind::Mgd => {
            let mc = MgdConfig {
                iterations: plan.iterations,
                shots: plan.shots,
                eta: cfg.eta,
                ..MgdConfig::default()
            };
            mgd_run(&mc, &mut eval, cfg.start, plan.points, &mut stream, Some(&cfg.hubbard))?
        }
    };
    let batches = eval.batches();
    let levels = ctx.measure(
        pairs.iter().map(|&p| (p, trace.final_params)).collect(),
        plan.shots,
        final_seed,
        confusions,
        cfg.mitigation.tflo,
    )?;
    Ok(RepeatOutcome {
        trace,
        batches,
        finals: Levels::mean(&levels),
    })
}

fn final_row(ctx: &Context, r: usize, o: &RepeatOutcome) -> Vec<String> {
    let f = o.trace.final_params;
    let exact = exact_energy(&f, &ctx.cfg.hubbard);
    let mut row = vec![r.to_string(), f.phi.to_string(), f.theta.to_string(), exact.to_string()];
    row.extend(level_cols(&o.finals, 0.0));
    row.push((o.finals.pick(ctx.cfg.mitigation).value - ctx.ground).abs().to_string());
    row.push((exact - ctx.ground).to_string());
    row.push(o.batches.to_string());
    row
}

const FINAL_HEADER: [&str; 12] = [
    "repeat", "phi", "theta", "e_exact", "e_raw", "e_ni", "e_tflo", "e_tflo_ni", "abs_err", "exact_err", "batches",
    "evaluations",
];

/// Full optimization runs with repeats, final TFLO correction and modeled
/// wall times.
pub fn cmd_vqe(cfg: &ExperimentConfig) -> Result<RunRecord> {
    let mut ctx = Context::new(cfg)?;
    let opt = cfg.optimizer;
    let n_pairs = cfg.pairs.unwrap_or(match opt {
        OptimizerKind::Spsa => 25,
        OptimizerKind::Mgd => 12,
    });
    let iterations = cfg.iterations.unwrap_or(match opt {
        OptimizerKind::Spsa => 50,
        OptimizerKind::Mgd => 30,
    });
    let repeats = cfg.repeats.unwrap_or(match opt {
        OptimizerKind::Spsa => 4,
        OptimizerKind::Mgd => 5,
    });
    let shots = cfg.shots.unwrap_or(1_000);
    let plan = OptimizerPlan::new(cfg, opt, n_pairs, iterations, shots)?;
    let pairs = ctx.selection(cfg.cap).take(n_pairs)?;
    ctx.resolve("plan", plan);
    ctx.resolve("repeats", repeats);

    let confusions = ctx.confusions(&pairs)?;
    let stream_label = match opt {
        OptimizerKind::Spsa => label::SPSA,
        OptimizerKind::Mgd => label::MGD,
    };
    let mut outcomes = Vec::with_capacity(repeats);
    for r in 0..repeats {
        let o = optimize(
            &ctx,
            &plan,
            &pairs,
            confusions.as_ref(),
            derive_seed(cfg.seed, &[label::EXPERIMENT, 4, r as u64]),
            &[stream_label, label::REPEAT, r as u64],
            derive_seed(cfg.seed, &[label::EXPERIMENT, 5, r as u64]),
        )?;
        let mut buf = Vec::new();
        o.trace.write_csv(&mut buf)?;
        ctx.write(&format!("trace_r{r}.csv"), &buf)?;
        outcomes.push(o);
    }

    let mut rows = Vec::new();
    for (r, o) in outcomes.iter().enumerate() {
        let mut row = final_row(&ctx, r, o);
        row.push(o.trace.evaluations.to_string());
        rows.push(row);
    }
    ctx.write_csv("final.csv", &FINAL_HEADER, &rows)?;

    let mut band_rows = Vec::new();
    let mut obj_band = Vec::new();
    let mut exact_band = Vec::new();
    let (mut obj_med, mut exact_med) = (Vec::new(), Vec::new());
    for it in 0..iterations {
        let obj: Vec<f64> = outcomes
            .iter()
            .map(|o| {
                let rec = &o.trace.records[it];
                rec.e_ni.unwrap_or(rec.e_raw)
            })
            .collect();
        let ex: Vec<f64> = outcomes
            .iter()
            .filter_map(|o| o.trace.records[it].e_exact)
            .collect();
        let (olo, ohi) = min_max(&obj);
        let (elo, ehi) = min_max(&ex);
        let (om, em) = (median(&obj), median(&ex));
        let x = (it + 1) as f64;
        obj_band.push((x, olo, ohi));
        exact_band.push((x, elo, ehi));
        obj_med.push((x, om));
        exact_med.push((x, em));
        band_rows.push(vec![
            (it + 1).to_string(),
            om.to_string(),
            olo.to_string(),
            ohi.to_string(),
            em.to_string(),
            elo.to_string(),
            ehi.to_string(),
        ]);
    }
    ctx.write_csv(
        "bands.csv",
        &["iteration", "median_objective", "min_objective", "max_objective", "median_exact", "min_exact", "max_exact"],
        &band_rows,
    )?;

    let finals: Vec<f64> = outcomes
        .iter()
        .map(|o| (o.finals.pick(cfg.mitigation).value - ctx.ground).abs())
        .collect();
    let exact_finals: Vec<f64> = outcomes
        .iter()
        .map(|o| exact_energy(&o.trace.final_params, &cfg.hubbard) - ctx.ground)
        .collect();
    let (lo, hi) = min_max(&finals);
    ctx.metric("median_final_error", median(&finals));
    ctx.metric("min_final_error", lo);
    ctx.metric("max_final_error", hi);
    ctx.metric("median_final_exact_error", median(&exact_finals));
    let (parallel, single) = plan.modeled(&ctx.cost, outcomes[0].batches);
    ctx.modeled.insert("parallel".into(), parallel);
    ctx.modeled.insert("single_pair".into(), single);
    ctx.metric("modeled_speedup", single / parallel);

    let speedups = speedup_sweep(&ctx.cost, iterations, shots);
    let rows: Vec<Vec<String>> = speedups
        .iter()
        .map(|&(p, s, m)| vec![p.to_string(), s.to_string(), m.to_string()])
        .collect();
    ctx.write_csv("speedup.csv", &["p", "spsa_speedup", "mgd_speedup"], &rows)?;

    let ground_line = vec![(1.0, ctx.ground), (iterations as f64, ctx.ground)];
    let series = vec![
        Series::line("objective (median)", obj_med).with_band(obj_band),
        Series::line("exact at params (median)", exact_med).with_band(exact_band),
        Series::line("ground energy", ground_line).dashed(),
    ];
    let title = format!("{opt} on {n_pairs} pair(s)");
    ctx.write("trace.svg", xy_plot_svg(&title, "iteration", "energy", &series).as_bytes())?;
    let series = vec![
        Series::line("spsa", speedups.iter().map(|&(p, s, _)| (p as f64, s)).collect()),
        Series::line("mgd", speedups.iter().map(|&(p, _, m)| (p as f64, m)).collect()),
    ];
    ctx.write("speedup.svg", xy_plot_svg("Modeled speedup", "pairs", "speedup", &series).as_bytes())?;
    ctx.finish(Command::Vqe, pairs)
}

/// Pair counts of the modeled speedup sweep.
pub const SPEEDUP_PAIRS: [usize; 7] = [2, 4, 8, 12, 16, 20, 25];

/// `(p, spsa, mgd)` modeled speedups. SPSA on `p` pairs makes the same
/// number of batches as on one pair; MGD on one pair evaluates the `p`
/// points of each iteration one after another.
pub fn speedup_sweep(cost: &CostModel, iterations: usize, shots: u64) -> Vec<(usize, f64, f64)> {
    SPEEDUP_PAIRS
        .iter()
        .map(|&p| {
            let batches = 3 * iterations;
            let spsa = cost.predict_wall_time(1, batches, shots, SETTINGS) / cost.predict_wall_time(p, batches, shots, SETTINGS);
            (p, spsa, cost.sweep_speedup(p, p, shots, SETTINGS))
        })
        .collect()
}

/// SPSA at several shot counts on greedy pairs capped at 0.90 fidelity.
pub fn cmd_shots_sweep(cfg: &ExperimentConfig) -> Result<RunRecord> {
    let mut ctx = Context::new(cfg)?;
    let cap = cfg.cap.or(Some(0.90));
    let selection = ctx.selection(cap);
    let n_pairs = cfg.pairs.unwrap_or(selection.len());
    let pairs = selection.take(n_pairs)?;
    let iterations = cfg.iterations.unwrap_or(50);
    ctx.resolve("cap", cap);
    ctx.resolve("pairs", n_pairs);
    ctx.resolve("iterations", iterations);
    let confusions = ctx.confusions(&pairs)?;

    let mut rows = Vec::new();
    let mut series = Vec::new();
    let mut final_err: BTreeMap<u64, f64> = BTreeMap::new();
    for (i, &shots) in cfg.shot_list.iter().enumerate() {
        let plan = OptimizerPlan::new(cfg, OptimizerKind::Spsa, n_pairs, iterations, shots)?;
        let o = optimize(
            &ctx,
            &plan,
            &pairs,
            confusions.as_ref(),
            derive_seed(cfg.seed, &[label::EXPERIMENT, 6, i as u64]),
            &[label::SPSA],
            derive_seed(cfg.seed, &[label::EXPERIMENT, 7, i as u64]),
        )?;
        let mut buf = Vec::new();
        o.trace.write_csv(&mut buf)?;
        ctx.write(&format!("trace_shots{shots}.csv"), &buf)?;
        let exact_err = exact_energy(&o.trace.final_params, &cfg.hubbard) - ctx.ground;
        final_err.insert(shots, exact_err);
        let mut row = final_row(&ctx, i, &o);
        row[0] = shots.to_string();
        rows.push(row);
        series.push(Series::line(
            format!("{shots} shots"),
            o.trace
                .records
                .iter()
                .filter_map(|r| Some((r.iteration as f64, r.e_exact? - ctx.ground)))
                .collect(),
        ));
    }
    let mut header = FINAL_HEADER[..11].to_vec();
    header[0] = "shots";
    ctx.write_csv("shots_sweep.csv", &header, &rows)?;
    for (s, e) in &final_err {
        ctx.metric(&format!("final_exact_error_{s}"), *e);
    }
    if let (Some(a), Some(b)) = (final_err.get(&1_000), final_err.get(&10_000)) {
        ctx.metric("diff_1000_vs_10000", (a - b).abs());
        ctx.metric("shots_1000_matches_10000", f64::from(u8::from((a - b).abs() <= 0.05)));
    }
    let svg = xy_plot_svg("SPSA by shot count", "iteration", "exact error at params", &series);
    ctx.write("shots_sweep.svg", svg.as_bytes())?;
    ctx.finish(Command::ShotsSweep, pairs)
}

/// SPSA and MGD finals for a list of pair counts.
pub fn cmd_optimizer_compare(cfg: &ExperimentConfig) -> Result<RunRecord> {
    let mut ctx = Context::new(cfg)?;
    let shots = cfg.shots.unwrap_or(1_000);
    let max_p = *cfg.pair_counts.iter().max().expect("validated non-empty");
    let pairs = ctx.selection(cfg.cap).take(max_p)?;
    let spsa_iters = cfg.iterations.unwrap_or(20);
    let mgd_iters = cfg.iterations.unwrap_or(10);
    let spsa_repeats = cfg.repeats.unwrap_or(4);
    let mgd_repeats = cfg.repeats.unwrap_or(5);
    ctx.resolve("shots", shots);
    ctx.resolve("spsa_iterations", spsa_iters);
    ctx.resolve("mgd_iterations", mgd_iters);
    ctx.resolve("spsa_repeats", spsa_repeats);
    ctx.resolve("mgd_repeats", mgd_repeats);
    let confusions = ctx.confusions(&pairs)?;
    let plan_cfg = ExperimentConfig {
        mode: None,
        ..cfg.clone()
    };

    let mut rows = Vec::new();
    let mut summary_rows = Vec::new();
    let mut medians: BTreeMap<(usize, OptimizerKind), (f64, f64, f64)> = BTreeMap::new();
    for (pi, &p) in cfg.pair_counts.iter().enumerate() {
        for (oi, (opt, iterations, repeats, lab)) in [
            (OptimizerKind::Spsa, spsa_iters, spsa_repeats, label::SPSA),
            (OptimizerKind::Mgd, mgd_iters, mgd_repeats, label::MGD),
        ]
        .into_iter()
        .enumerate()
        {
            let plan = OptimizerPlan::new(&plan_cfg, opt, p, iterations, shots)?;
            let mut errs = Vec::with_capacity(repeats);
            for r in 0..repeats {
                let key = [pi as u64, oi as u64, r as u64];
                let o = optimize(
                    &ctx,
                    &plan,
                    &pairs[..p],
                    confusions.as_ref(),
                    derive_seed(cfg.seed, &[label::EXPERIMENT, 8, key[0], key[1], key[2]]),
                    &[lab, label::REPEAT, key[0], key[2]],
                    derive_seed(cfg.seed, &[label::EXPERIMENT, 9, key[0], key[1], key[2]]),
                )?;
                let err = (o.finals.pick(cfg.mitigation).value - ctx.ground).abs();
                errs.push(err);
                let mut row = vec![p.to_string(), opt.to_string()];
                row.extend(final_row(&ctx, r, &o));
                rows.push(row);
            }
            let (lo, hi) = min_max(&errs);
            let med = median(&errs);
            medians.insert((p, opt), (med, lo, hi));
            summary_rows.push(vec![
                p.to_string(),
                opt.to_string(),
                med.to_string(),
                lo.to_string(),
                hi.to_string(),
                (hi - lo).to_string(),
            ]);
        }
    }
    let mut header = vec!["p", "optimizer"];
    header.extend(&FINAL_HEADER[..11]);
    ctx.write_csv("compare.csv", &header, &rows)?;
    ctx.write_csv("compare_summary.csv", &["p", "optimizer", "median_err", "min_err", "max_err", "spread"], &summary_rows)?;

    let large: Vec<usize> = cfg.pair_counts.iter().copied().filter(|&p| p >= 9).collect();
    if !large.is_empty() {
        let wins = large
            .iter()
            .filter(|&&p| medians[&(p, OptimizerKind::Mgd)].0 <= medians[&(p, OptimizerKind::Spsa)].0)
            .count();
        ctx.metric("mgd_wins_p_ge_9", wins as f64);
        ctx.metric("tested_p_ge_9", large.len() as f64);
    }
    if let Some(&(_, lo12, hi12)) = medians.get(&(12, OptimizerKind::Mgd)) {
        let small: Vec<usize> = cfg.pair_counts.iter().copied().filter(|&p| p < 8).collect();
        let wider = small
            .iter()
            .filter(|&&p| {
                let (_, lo, hi) = medians[&(p, OptimizerKind::Mgd)];
                hi - lo > hi12 - lo12
            })
            .count();
        ctx.metric("mgd_small_p_wider_than_p12", wider as f64);
        ctx.metric("tested_p_lt_8", small.len() as f64);
    }

    let series: Vec<Series> = [OptimizerKind::Spsa, OptimizerKind::Mgd]
        .into_iter()
        .map(|opt| {
            let pts = cfg.pair_counts.iter().map(|&p| (p as f64, medians[&(p, opt)].0)).collect();
            let band = cfg
                .pair_counts
                .iter()
                .map(|&p| {
                    let (_, lo, hi) = medians[&(p, opt)];
                    (p as f64, lo, hi)
                })
                .collect();
            Series::line(opt.to_string(), pts).with_band(band)
        })
        .collect();
    let svg = xy_plot_svg("Final error by pair count", "pairs", "|final error|", &series);
    ctx.write("compare.svg", svg.as_bytes())?;
    ctx.finish(Command::OptimizerCompare, pairs)
}
