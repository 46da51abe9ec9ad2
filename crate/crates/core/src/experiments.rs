//! Sweeps over the experiment grids, the power-law fit, and the summary tables
//! behind each figure.
//!
//! A sweep expands into cells; each cell is one reproducible run
//! (datagen → train → probe/eval) keyed by the SHA-256 of its configuration.
//! Finished cells are stored under `cells/{hash}/` and skipped on re-runs.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::codec::{KEPLER_HALF_RANGE, SINE_HALF_RANGE};
use crate::datagen::{build_dataset, Dataset, DatasetKind};
use crate::eval::{self, ModelPredictor, RolloutResult};
use crate::model::{save_checkpoint, ModelConfig, Provenance};
use crate::probing::{probe_sweep, SweepOptions, Target};
use crate::training::{train, TrainConfig, TrainError};

/// Bumped whenever a change alters cell results, so stale caches miss.
const CELL_FORMAT: u32 = 1;

/// Seed of the shared held-out rollout set.
pub const EVAL_SEED: u64 = 0x5EED_0E7A;
/// Seed of the shared probe set.
pub const PROBE_SEED: u64 = 0x5EED_0B0E;
/// Held-out trajectories rolled out per cell.
pub const EVAL_TRAJECTORIES: usize = 256;
/// Minimum probe trajectories and the row target per fit.
pub const PROBE_TRAJECTORIES: usize = 512;
pub const PROBE_ROWS: usize = 20_000;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid sweep spec: {0}")]
    Spec(String),
    #[error("need at least 3 records with 0 < 1-R² <= 1, got {0}")]
    TooFewRecords(usize),
    #[error("1-R² value {0} outside (0, 1]")]
    BadRecord(f64),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for ExperimentError {
    fn from(e: std::io::Error) -> Self {
        ExperimentError::Io(e.to_string())
    }
}

impl From<csv::Error> for ExperimentError {
    fn from(e: csv::Error) -> Self {
        ExperimentError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for ExperimentError {
    fn from(e: serde_json::Error) -> Self {
        ExperimentError::Io(e.to_string())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    SpatialMap,
    ScalingGrid,
    NCritical,
    NoiseSweep,
    RegVsCls,
    PhaseTransition,
    Custom,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::SpatialMap => "spatial_map",
            Experiment::ScalingGrid => "scaling_grid",
            Experiment::NCritical => "n_critical",
            Experiment::NoiseSweep => "noise_sweep",
            Experiment::RegVsCls => "reg_vs_cls",
            Experiment::PhaseTransition => "phase_transition",
            Experiment::Custom => "custom",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadChoice {
    Cls,
    Reg,
}

impl std::str::FromStr for HeadChoice {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "cls" => Ok(HeadChoice::Cls),
            "reg" => Ok(HeadChoice::Reg),
            other => Err(format!("unknown head '{other}' (cls|reg)")),
        }
    }
}

/// Compute profile for the preset sweeps.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Budget {
    /// Single-CPU scale: 1200 steps and one seed.
    Desk,
    /// Full scale: 2×10⁴ steps and three seeds.
    Paper,
}

impl Budget {
    /// `LAB_BUDGET=paper` selects [`Budget::Paper`]; anything else is desk.
    pub fn from_env() -> Budget {
        match std::env::var("LAB_BUDGET").as_deref() {
            Ok("paper") => Budget::Paper,
            _ => Budget::Desk,
        }
    }
}

/// A grid of runs. Every list is one axis of the Cartesian product;
/// `vocab` only applies to classification and `noise` only to regression.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepSpec {
    pub experiment: Experiment,
    pub kind: DatasetKind,
    pub head: Vec<HeadChoice>,
    pub vocab: Vec<usize>,
    pub d_traj: Vec<usize>,
    pub width: Vec<usize>,
    pub noise: Vec<f64>,
    pub ctx: Vec<usize>,
    pub seeds: Vec<u64>,
    pub layers: usize,
    pub heads: usize,
    pub steps: u64,
    pub batch: usize,
    pub log_every: u64,
    /// When set, a cell trains for `min(steps, ceil(matched_positions /
    /// (batch × window)))` steps so that every context length sees the same
    /// number of input positions.
    pub matched_positions: Option<u64>,
    pub data_seed: u64,
    pub rollout: bool,
    pub probe: bool,
    /// Held-out trajectories rolled out at each training record.
    pub train_rollouts: usize,
    pub save_checkpoints: bool,
}

impl Default for SweepSpec {
    fn default() -> Self {
        SweepSpec {
            experiment: Experiment::Custom,
            kind: DatasetKind::Sine,
            head: vec![HeadChoice::Cls],
            vocab: vec![128],
            d_traj: vec![1000],
            width: vec![32],
            noise: vec![0.0],
            ctx: vec![100],
            seeds: vec![0],
            layers: 2,
            heads: 1,
            steps: 20_000,
            batch: 64,
            log_every: 500,
            matched_positions: None,
            data_seed: 1,
            rollout: false,
            probe: false,
            train_rollouts: 0,
            save_checkpoints: true,
        }
    }
}

/// Everything that determines one run. Hashing this gives the cell key.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellConfig {
    pub kind: DatasetKind,
    pub head: HeadChoice,
    /// 0 for regression.
    pub vocab: usize,
    pub half_range: f64,
    pub d_traj: usize,
    pub data_seed: u64,
    pub width: usize,
    pub layers: usize,
    pub heads: usize,
    pub ctx: usize,
    pub noise: f64,
    pub steps: u64,
    pub batch: usize,
    pub seed: u64,
    pub log_every: u64,
    pub rollout: bool,
    pub probe: bool,
    pub train_rollouts: usize,
}

impl CellConfig {
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(CELL_FORMAT.to_le_bytes());
        h.update(serde_json::to_vec(self).expect("cell config serializes"));
        h.finalize().iter().map(|b| format!("{b:02x}")).collect::<String>()[..16].to_string()
    }

    pub fn model_config(&self) -> ModelConfig {
        let dim = self.kind.dim();
        let mut m = match self.head {
            HeadChoice::Cls => ModelConfig::classification(dim, self.vocab, self.half_range, self.width, self.ctx),
            HeadChoice::Reg => ModelConfig::regression(dim, self.width, self.ctx),
        };
        m.n_layer = self.layers;
        m.n_head = self.heads;
        m
    }

    pub fn train_config(&self) -> TrainConfig {
        let mut t = TrainConfig::new(self.steps, self.seed);
        t.batch = self.batch;
        t.noise = self.noise;
        t.log_every = self.log_every;
        t.rollout_trajectories = self.train_rollouts;
        t
    }
}

/// Input positions per training window for context `ctx` on trajectories of
/// `N_STEPS` states.
fn window_inputs(ctx: usize) -> usize {
    ctx.min(crate::datagen::N_STEPS - 1)
}

impl SweepSpec {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: &str| Err(ExperimentError::Spec(m.into()));
        if self.head.contains(&HeadChoice::Cls) && self.vocab.is_empty() {
            return bad("classification cells need at least one vocab");
        }
        if self.head.contains(&HeadChoice::Reg) && self.noise.is_empty() {
            return bad("regression cells need at least one noise level");
        }
        if self.batch == 0 || self.log_every == 0 || self.layers == 0 || self.heads == 0 {
            return bad("batch, log_every, layers and heads must be positive");
        }
        Ok(())
    }

    /// All distinct cells, in grid order.
    pub fn expand(&self) -> Vec<CellConfig> {
        let half_range = match self.kind {
            DatasetKind::Sine => SINE_HALF_RANGE,
            DatasetKind::Kepler => KEPLER_HALF_RANGE,
        };
        let mut out: Vec<CellConfig> = Vec::new();
        let mut seen = std::collections::HashSet::new();
        for &head in &self.head {
            let vocabs: Vec<usize> = match head {
                HeadChoice::Cls => self.vocab.clone(),
                HeadChoice::Reg => vec![0],
            };
            let noises: Vec<f64> = match head {
                HeadChoice::Cls => vec![0.0],
                HeadChoice::Reg => self.noise.clone(),
            };
            for &d_traj in &self.d_traj {
                for &vocab in &vocabs {
                    for &width in &self.width {
                        for &noise in &noises {
                            for &ctx in &self.ctx {
                                let steps = match self.matched_positions {
                                    Some(p) => self
                                        .steps
                                        .min(p.div_ceil((self.batch * window_inputs(ctx)) as u64)),
                                    None => self.steps,
                                };
                                for &seed in &self.seeds {
                                    let cell = CellConfig {
                                        kind: self.kind,
                                        head,
                                        vocab,
                                        half_range: if head == HeadChoice::Cls { half_range } else { 0.0 },
                                        d_traj,
                                        data_seed: self.data_seed,
                                        width,
                                        layers: self.layers,
                                        heads: self.heads,
                                        ctx,
                                        noise,
                                        steps,
                                        batch: self.batch,
                                        seed,
                                        log_every: self.log_every,
                                        rollout: self.rollout,
                                        // probes are only run on regression models
                                        probe: self.probe && head == HeadChoice::Reg,
                                        train_rollouts: self.train_rollouts,
                                    };
                                    if seen.insert(cell.hash()) {
                                        out.push(cell);
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

/// Metrics of one finished cell.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CellMetrics {
    /// Best spatial-map R² over training records (classification).
    pub best_r2: Option<f64>,
    pub final_test_loss: Option<f64>,
    /// Mean distance error over the shared held-out rollout set.
    pub rollout_mde: Option<f64>,
    pub horizon_curve: Option<Vec<f64>>,
    pub rollouts_truncated: usize,
    pub newtonian: Option<f64>,
    pub keplerian: Option<f64>,
    /// Best R² of the force magnitude F.
    pub force_r2: Option<f64>,
    pub parameters: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub hash: String,
    pub config: CellConfig,
    pub metrics: CellMetrics,
    pub error: Option<String>,
}

/// Flat results-table row (`results.csv`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub experiment: Experiment,
    pub hash: String,
    pub kind: DatasetKind,
    pub head: HeadChoice,
    pub vocab: usize,
    pub half_range: f64,
    pub d_traj: usize,
    pub tokens: usize,
    pub width: usize,
    pub layers: usize,
    pub heads: usize,
    pub ctx: usize,
    pub noise: f64,
    pub steps: u64,
    pub batch: usize,
    pub seed: u64,
    pub data_seed: u64,
    pub best_r2: Option<f64>,
    pub one_minus_r2: Option<f64>,
    pub test_loss: Option<f64>,
    pub rollout_mde: Option<f64>,
    pub newtonian: Option<f64>,
    pub keplerian: Option<f64>,
    pub force_r2: Option<f64>,
    pub error: Option<String>,
}

impl ResultRow {
    pub fn from_result(experiment: Experiment, r: &CellResult) -> Self {
        let c = &r.config;
        let m = &r.metrics;
        ResultRow {
            experiment,
            hash: r.hash.clone(),
            kind: c.kind,
            head: c.head,
            vocab: c.vocab,
            half_range: c.half_range,
            d_traj: c.d_traj,
            tokens: c.d_traj * crate::datagen::N_STEPS,
            width: c.width,
            layers: c.layers,
            heads: c.heads,
            ctx: c.ctx,
            noise: c.noise,
            steps: c.steps,
            batch: c.batch,
            seed: c.seed,
            data_seed: c.data_seed,
            best_r2: m.best_r2,
            one_minus_r2: m.best_r2.map(|r| 1.0 - r),
            test_loss: m.final_test_loss,
            rollout_mde: m.rollout_mde,
            newtonian: m.newtonian,
            keplerian: m.keplerian,
            force_r2: m.force_r2,
            error: r.error.clone(),
        }
    }
}

/// Held-out rollouts in chunks of 64 trajectories.
pub fn rollout_set(predictor: &ModelPredictor, ds: &Dataset) -> Result<Vec<RolloutResult>, TrainError> {
    let trajs: Vec<&[f64]> = ds.trajectories.iter().map(|t| t.positions.as_slice()).collect();
    let mut out = Vec::with_capacity(trajs.len());
    for chunk in trajs.chunks(64) {
        out.extend(eval::rollout_batch(predictor, chunk, eval::CONDITION, eval::HORIZON)?);
    }
    Ok(out)
}

/// Probe trajectories so that the sweep has at least [`PROBE_ROWS`] windows.
pub fn probe_trajectory_count(ctx: usize) -> usize {
    let windows = crate::datagen::N_STEPS - window_inputs(ctx) + 1;
    PROBE_TRAJECTORIES.max(PROBE_ROWS.div_ceil(windows))
}

/// Runs one cell from scratch. With `dir`, writes its artifacts there.
pub fn run_cell(cell: &CellConfig, dir: Option<&Path>) -> Result<CellMetrics, ExperimentError> {
    let ds = build_dataset(cell.kind, cell.d_traj, cell.data_seed).map_err(|e| ExperimentError::Spec(e.to_string()))?;
    let model = cell.model_config();
    let tc = cell.train_config();
    let out = train(&ds, &model, &tc, None)?;
    let mut m = CellMetrics {
        best_r2: out.log.best_spatial_r2(),
        final_test_loss: out.log.last().map(|r| r.test_loss),
        parameters: out.weights.parameter_count(),
        ..Default::default()
    };
    if let Some(d) = dir {
        fs::create_dir_all(d)?;
        out.log.write_csv(&d.join("train_log.csv"))?;
    }
    if cell.rollout {
        let eval_ds = build_dataset(cell.kind, EVAL_TRAJECTORIES, EVAL_SEED).map_err(|e| ExperimentError::Spec(e.to_string()))?;
        let results = rollout_set(&out.predictor(), &eval_ds)?;
        let s = eval::summarize(&results);
        m.rollout_mde = Some(s.mean_distance_error);
        m.horizon_curve = Some(s.horizon_curve);
        m.rollouts_truncated = s.truncated;
        if let Some(d) = dir {
            eval::write_rollout_csv(&d.join("rollout.csv"), &results[..results.len().min(16)])
                .map_err(TrainError::from)?;
        }
    }
    if cell.probe {
        let probe_ds = build_dataset(cell.kind, probe_trajectory_count(cell.ctx), PROBE_SEED)
            .map_err(|e| ExperimentError::Spec(e.to_string()))?;
        let targets = match cell.kind {
            DatasetKind::Kepler => Target::all(),
            DatasetKind::Sine => vec![Target::X],
        };
        let opts = SweepOptions {
            seed: cell.seed,
            ..Default::default()
        };
        let rep = probe_sweep(&model, &out.weights, &probe_ds.trajectories, &targets, &opts).map_err(TrainError::from)?;
        m.newtonian = rep.newtonian_score();
        m.keplerian = rep.keplerian_score();
        m.force_r2 = rep.best(Target::Force).map(|b| b.1);
        if let Some(d) = dir {
            rep.write_csv(&d.join("probe.csv")).map_err(TrainError::from)?;
        }
    }
    if let Some(d) = dir {
        let prov = Provenance {
            seed: cell.seed,
            step: cell.steps,
            loss: m.final_test_loss,
            extra: serde_json::json!({ "cell": cell, "hash": cell.hash() }),
        };
        save_checkpoint(&d.join(format!("ckpt_{}.bin", cell.steps)), &model, &out.weights, &prov)
            .map_err(TrainError::from)?;
    }
    Ok(m)
}

fn cell_dir(out: &Path, hash: &str) -> PathBuf {
    out.join("cells").join(hash)
}

/// Loads a finished cell, if present and intact.
pub fn load_cell(out: &Path, cell: &CellConfig) -> Option<CellResult> {
    let hash = cell.hash();
    let text = fs::read_to_string(cell_dir(out, &hash).join("result.json")).ok()?;
    let r: CellResult = serde_json::from_str(&text).ok()?;
    (r.config == *cell && r.error.is_none()).then_some(r)
}

/// Parallelism for sweeps: `LAB_THREADS`, else 1.
pub fn default_jobs() -> usize {
    std::env::var("LAB_THREADS")
        .ok()
        .and_then(|s| s.parse().ok())
        .filter(|&j: &usize| j > 0)
        .unwrap_or(1)
}

/// Runs every cell of `spec` not already finished under `out`, up to `jobs`
/// at a time, and writes `results.csv`. Failed cells are recorded and the
/// sweep continues.
pub fn run_sweep(spec: &SweepSpec, out: &Path, jobs: usize) -> Result<Vec<ResultRow>, ExperimentError> {
    run_sweep_with(spec, out, jobs, &[])
}

/// [`run_sweep`], additionally reusing cells finished under any of the
/// `shared` sweep directories. Reused cells are copied into `out`.
pub fn run_sweep_with(
    spec: &SweepSpec,
    out: &Path,
    jobs: usize,
    shared: &[PathBuf],
) -> Result<Vec<ResultRow>, ExperimentError> {
    spec.validate()?;
    fs::create_dir_all(out)?;
    let cells = spec.expand();
    let run = |cell: &CellConfig| -> CellResult {
        if let Some(done) = load_cell(out, cell) {
            return done;
        }
        let hash = cell.hash();
        let dir = cell_dir(out, &hash);
        for other in shared.iter().filter(|o| o.as_path() != out) {
            if let Some(done) = load_cell(other, cell) {
                if copy_dir(&cell_dir(other, &hash), &dir).is_ok() {
                    return done;
                }
            }
        }
        let dir_ref = spec.save_checkpoints.then_some(dir.as_path());
        let (metrics, error) = match run_cell(cell, dir_ref) {
            Ok(m) => (m, None),
            Err(e) => (CellMetrics::default(), Some(e.to_string())),
        };
        let result = CellResult {
            hash,
            config: cell.clone(),
            metrics,
            error,
        };
        let _ = fs::create_dir_all(&dir).and_then(|_| {
            fs::write(
                dir.join("result.json"),
                serde_json::to_string_pretty(&result).expect("result serializes"),
            )
        });
        result
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| ExperimentError::Io(e.to_string()))?;
    let results: Vec<CellResult> = pool.install(|| cells.par_iter().map(run).collect());
    let rows: Vec<ResultRow> = results
        .iter()
        .map(|r| ResultRow::from_result(spec.experiment, r))
        .collect();
    write_results(&out.join("results.csv"), &rows)?;
    Ok(rows)
}

fn copy_dir(from: &Path, to: &Path) -> std::io::Result<()> {
    fs::create_dir_all(to)?;
    for entry in fs::read_dir(from)? {
        let entry = entry?;
        if entry.file_type()?.is_file() {
            fs::copy(entry.path(), to.join(entry.file_name()))?;
        }
    }
    Ok(())
}

pub fn write_results(path: &Path, rows: &[ResultRow]) -> Result<(), ExperimentError> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_results(path: &Path) -> Result<Vec<ResultRow>, ExperimentError> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(ExperimentError::from)).collect()
}

/// Median of `values`; `None` when empty.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

/// Median of `metric` over seeds, per cell with the seed removed.
pub fn aggregate<F: Fn(&ResultRow) -> Option<f64>>(rows: &[ResultRow], metric: F) -> Vec<(ResultRow, f64)> {
    let mut groups: BTreeMap<String, (ResultRow, Vec<f64>)> = BTreeMap::new();
    let mut order = Vec::new();
    for r in rows.iter().filter(|r| r.error.is_none()) {
        let Some(v) = metric(r) else { continue };
        let mut key = r.clone();
        key.seed = 0;
        key.hash.clear();
        let k = serde_json::to_string(&(
            key.kind, key.head, key.vocab, key.d_traj, key.width, key.layers, key.heads, key.ctx, key.noise.to_bits(),
            key.steps, key.batch, key.data_seed,
        ))
        .expect("key serializes");
        groups
            .entry(k.clone())
            .or_insert_with(|| {
                order.push(k.clone());
                (r.clone(), Vec::new())
            })
            .1
            .push(v);
    }
    order
        .into_iter()
        .map(|k| {
            let (row, vals) = groups.remove(&k).expect("group");
            (row, median(&vals).expect("non-empty group"))
        })
        .collect()
}

/// `1 - R² ≈ A · D^(-α_D) · V^(α_V)` fitted in log space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub a: f64,
    /// `None` when every record shares one D.
    pub alpha_d: Option<f64>,
    /// `None` when every record shares one V.
    pub alpha_v: Option<f64>,
    pub r2_fit: f64,
    pub records: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingRecord {
    pub d: f64,
    pub v: f64,
    pub one_minus_r2: f64,
}

pub fn fit_scaling_law(records: &[ScalingRecord]) -> Result<ScalingFit, ExperimentError> {
    if records.len() < 3 {
        return Err(ExperimentError::TooFewRecords(records.len()));
    }
    if let Some(r) = records.iter().find(|r| !(r.one_minus_r2 > 0.0 && r.one_minus_r2 <= 1.0)) {
        return Err(ExperimentError::BadRecord(r.one_minus_r2));
    }
    let varies = |f: &dyn Fn(&ScalingRecord) -> f64| records.iter().any(|r| f(r) != f(&records[0]));
    let fit_d = varies(&|r| r.d);
    let fit_v = varies(&|r| r.v);
    let cols = 1 + fit_d as usize + fit_v as usize;
    let n = records.len();
    let mut x = nalgebra::DMatrix::<f64>::zeros(n, cols);
    let y = nalgebra::DVector::from_iterator(n, records.iter().map(|r| r.one_minus_r2.ln()));
    for (i, r) in records.iter().enumerate() {
        x[(i, 0)] = 1.0;
        let mut j = 1;
        if fit_d {
            x[(i, j)] = -r.d.ln();
            j += 1;
        }
        if fit_v {
            x[(i, j)] = r.v.ln();
        }
    }
    let beta = x
        .clone()
        .svd(true, true)
        .solve(&y, 1e-14)
        .map_err(|e| ExperimentError::Spec(e.to_string()))?;
    let pred = &x * &beta;
    let mean = y.mean();
    let ss_tot: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    let ss_res: f64 = y.iter().zip(pred.iter()).map(|(a, b)| (a - b).powi(2)).sum();
    let r2_fit = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    let mut j = 1;
    let alpha_d = fit_d.then(|| {
        j += 1;
        beta[j - 1]
    });
    let alpha_v = fit_v.then(|| beta[j]);
    Ok(ScalingFit {
        a: beta[0].exp(),
        alpha_d,
        alpha_v,
        r2_fit,
        records: n,
    })
}

/// Scaling records from sine classification rows (median over seeds).
pub fn scaling_records(rows: &[ResultRow]) -> Vec<ScalingRecord> {
    aggregate(rows, |r| r.one_minus_r2)
        .into_iter()
        .filter(|(r, _)| r.head == HeadChoice::Cls)
        .map(|(r, y)| ScalingRecord {
            d: r.d_traj as f64,
            v: r.vocab as f64,
            one_minus_r2: y,
        })
        .collect()
}

/// Spearman rank correlation (average ranks for ties).
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let ranks = |v: &[f64]| {
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
    };
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    (vx > 0.0 && vy > 0.0).then(|| cov / (vx * vy).sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub d_traj: usize,
    pub tokens: usize,
    pub best_reg_noise: Option<f64>,
    pub best_reg_mde: Option<f64>,
    pub reg_noise0_mde: Option<f64>,
    pub best_cls_vocab: Option<usize>,
    pub best_cls_mde: Option<f64>,
}

/// Per D: best-σ regression error, σ=0 regression error and best-V
/// classification error (medians over seeds).
pub fn compare_regression_classification(rows: &[ResultRow]) -> Vec<ComparisonRow> {
    let agg = aggregate(rows, |r| r.rollout_mde);
    let mut by_d: BTreeMap<usize, ComparisonRow> = BTreeMap::new();
    for (r, mde) in agg.into_iter().filter(|(r, _)| r.kind == DatasetKind::Kepler) {
        let row = by_d.entry(r.d_traj).or_insert(ComparisonRow {
            d_traj: r.d_traj,
            tokens: r.tokens,
            best_reg_noise: None,
            best_reg_mde: None,
            reg_noise0_mde: None,
            best_cls_vocab: None,
            best_cls_mde: None,
        });
        match r.head {
            HeadChoice::Reg => {
                if row.best_reg_mde.is_none_or(|b| mde < b) {
                    row.best_reg_mde = Some(mde);
                    row.best_reg_noise = Some(r.noise);
                }
                if r.noise == 0.0 {
                    row.reg_noise0_mde = Some(mde);
                }
            }
            HeadChoice::Cls => {
                if row.best_cls_mde.is_none_or(|b| mde < b) {
                    row.best_cls_mde = Some(mde);
                    row.best_cls_vocab = Some(r.vocab);
                }
            }
        }
    }
    by_d.into_values().collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseRow {
    pub ctx: usize,
    pub newtonian: Option<f64>,
    pub keplerian: Option<f64>,
    pub force_r2: Option<f64>,
    pub rollout_mde: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseSummary {
    pub rows: Vec<PhaseRow>,
    pub keplerian_spearman: Option<f64>,
    pub newtonian_spearman: Option<f64>,
}

/// Per context length: median Newtonian/Keplerian scores, force R² and
/// rollout error, plus rank correlations of the scores with c.
pub fn phase_transition_study(rows: &[ResultRow]) -> PhaseSummary {
    let kepler: Vec<ResultRow> = rows
        .iter()
        .filter(|r| r.kind == DatasetKind::Kepler && r.head == HeadChoice::Reg && r.newtonian.is_some())
        .cloned()
        .collect();
    let mut ctxs: Vec<usize> = kepler.iter().map(|r| r.ctx).collect();
    ctxs.sort_unstable();
    ctxs.dedup();
    let med = |c: usize, f: fn(&ResultRow) -> Option<f64>| {
        median(&kepler.iter().filter(|r| r.ctx == c).filter_map(f).collect::<Vec<_>>())
    };
    let out: Vec<PhaseRow> = ctxs
        .iter()
        .map(|&c| PhaseRow {
            ctx: c,
            newtonian: med(c, |r| r.newtonian),
            keplerian: med(c, |r| r.keplerian),
            force_r2: med(c, |r| r.force_r2),
            rollout_mde: med(c, |r| r.rollout_mde),
        })
        .collect();
    let corr = |f: fn(&PhaseRow) -> Option<f64>| {
        let pts: Vec<(f64, f64)> = out.iter().filter_map(|r| f(r).map(|v| (r.ctx as f64, v))).collect();
        let (x, y): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
        spearman(&x, &y)
    };
    PhaseSummary {
        keplerian_spearman: corr(|r| r.keplerian),
        newtonian_spearman: corr(|r| r.newtonian),
        rows: out,
    }
}

/// The grids behind each experiment at the given budget.
pub fn preset(experiment: Experiment, budget: Budget) -> SweepSpec {
    let desk = budget == Budget::Desk;
    let sine = SweepSpec {
        experiment,
        kind: DatasetKind::Sine,
        head: vec![HeadChoice::Cls],
        width: vec![32],
        ctx: vec![100],
        seeds: if desk { vec![0] } else { vec![0, 1, 2] },
        steps: if desk { 1200 } else { 20_000 },
        batch: if desk { 32 } else { 64 },
        log_every: if desk { 100 } else { 500 },
        ..Default::default()
    };
    let kepler = SweepSpec {
        kind: DatasetKind::Kepler,
        head: vec![HeadChoice::Reg],
        width: vec![64],
        d_traj: vec![10_000],
        rollout: true,
        probe: true,
        steps: 20_000,
        matched_positions: desk.then_some(1200 * 32 * 99),
        ..sine.clone()
    };
    match experiment {
        Experiment::SpatialMap => SweepSpec {
            vocab: vec![128, 1024, 7000],
            d_traj: vec![10_000],
            ..sine
        },
        Experiment::ScalingGrid => SweepSpec {
            vocab: vec![64, 128, 256, 512, 1024],
            d_traj: vec![64, 128, 256, 512, 1024],
            ..sine
        },
        Experiment::NCritical => SweepSpec {
            vocab: vec![1024],
            d_traj: vec![256],
            width: vec![2, 4, 8, 16, 32, 64],
            ..sine
        },
        Experiment::NoiseSweep => SweepSpec {
            noise: vec![0.0, 0.01, 0.03, 0.1, 0.3, 1.0],
            ..kepler
        },
        Experiment::RegVsCls => SweepSpec {
            head: vec![HeadChoice::Reg, HeadChoice::Cls],
            d_traj: vec![100, 1000, 10_000],
            noise: vec![0.0, 0.01, 0.03, 0.1, 0.3, 1.0],
            vocab: vec![64, 128, 256, 512, 1024],
            ..kepler
        },
        Experiment::PhaseTransition => SweepSpec {
            ctx: vec![2, 5, 10, 25, 50, 100],
            ..kepler
        },
        Experiment::Custom => SweepSpec::default(),
    }
}

fn write_csv_rows<S: Serialize>(path: &Path, rows: &[S]) -> Result<(), ExperimentError> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Collects `results.csv` files under `input` (recursively), each row with
/// the sweep directory it came from.
pub fn collect_results(input: &Path) -> Result<Vec<(PathBuf, ResultRow)>, ExperimentError> {
    let mut rows = Vec::new();
    let mut stack = vec![input.to_path_buf()];
    while let Some(dir) = stack.pop() {
        let mut entries: Vec<_> = fs::read_dir(&dir)?.filter_map(Result::ok).map(|e| e.path()).collect();
        entries.sort();
        for p in entries {
            if p.is_dir() && p.file_name().is_some_and(|n| n != "cells") {
                stack.push(p);
            } else if p.file_name().is_some_and(|n| n == "results.csv") {
                rows.extend(read_results(&p)?.into_iter().map(|r| (dir.clone(), r)));
            }
        }
    }
    Ok(rows)
}

/// Writes `all_results.csv` and one plot-data CSV per figure from the sweep
/// results under `input`. Returns the files written.
pub fn report(input: &Path, out: &Path) -> Result<Vec<PathBuf>, ExperimentError> {
    let located = collect_results(input)?;
    let rows: Vec<ResultRow> = located.iter().map(|(_, r)| r.clone()).collect();
    fs::create_dir_all(out)?;
    let mut written = Vec::new();
    if !rows.is_empty() {
        let p = out.join("all_results.csv");
        write_results(&p, &rows)?;
        written.push(p);
    }
    let of = |e: Experiment| rows.iter().filter(|r| r.experiment == e).cloned().collect::<Vec<_>>();

    #[derive(Serialize)]
    struct R2Row {
        vocab: usize,
        d_traj: usize,
        width: usize,
        best_r2: f64,
        one_minus_r2: f64,
    }
    let r2_rows = |rs: &[ResultRow]| -> Vec<R2Row> {
        aggregate(rs, |r| r.best_r2)
            .into_iter()
            .map(|(r, v)| R2Row {
                vocab: r.vocab,
                d_traj: r.d_traj,
                width: r.width,
                best_r2: v,
                one_minus_r2: 1.0 - v,
            })
            .collect()
    };
    for (e, file) in [
        (Experiment::SpatialMap, "spatial_map.csv"),
        (Experiment::ScalingGrid, "scaling_grid.csv"),
        (Experiment::NCritical, "n_critical.csv"),
    ] {
        let rs = of(e);
        if !rs.is_empty() {
            let p = out.join(file);
            write_csv_rows(&p, &r2_rows(&rs))?;
            written.push(p);
        }
    }
    let grid = of(Experiment::ScalingGrid);
    if let Ok(fit) = fit_scaling_law(&scaling_records(&grid)) {
        let p = out.join("scaling_fit.json");
        fs::write(&p, serde_json::to_string_pretty(&fit)?)?;
        written.push(p);
    }

    let noise = of(Experiment::NoiseSweep);
    if !noise.is_empty() {
        #[derive(Serialize)]
        struct NoiseRow {
            d_traj: usize,
            noise: f64,
            rollout_mde: f64,
        }
        let table: Vec<NoiseRow> = aggregate(&noise, |r| r.rollout_mde)
            .into_iter()
            .map(|(r, v)| NoiseRow {
                d_traj: r.d_traj,
                noise: r.noise,
                rollout_mde: v,
            })
            .collect();
        let p = out.join("noise_sweep.csv");
        write_csv_rows(&p, &table)?;
        written.push(p);

        let mut w = csv::Writer::from_path(out.join("horizon_curves.csv"))?;
        w.write_record(["hash", "noise", "seed", "step", "dist_err"])?;
        for (dir, r) in located.iter().filter(|(_, r)| r.experiment == Experiment::NoiseSweep) {
            let cells = cell_dir(dir, &r.hash).join("result.json");
            let Ok(text) = fs::read_to_string(&cells) else { continue };
            let Ok(res) = serde_json::from_str::<CellResult>(&text) else { continue };
            for (i, e) in res.metrics.horizon_curve.unwrap_or_default().iter().enumerate() {
                w.write_record([r.hash.clone(), r.noise.to_string(), r.seed.to_string(), (i + 1).to_string(), e.to_string()])?;
            }
        }
        w.flush()?;
        written.push(out.join("horizon_curves.csv"));
    }

    let mut kepler_rows = of(Experiment::RegVsCls);
    kepler_rows.extend(noise);
    if !kepler_rows.is_empty() {
        let p = out.join("reg_vs_cls.csv");
        write_csv_rows(&p, &compare_regression_classification(&kepler_rows))?;
        written.push(p);
    }

    let phase = of(Experiment::PhaseTransition);
    if !phase.is_empty() {
        let s = phase_transition_study(&phase);
        let p = out.join("phase_transition.csv");
        write_csv_rows(&p, &s.rows)?;
        written.push(p);
        let p = out.join("phase_summary.json");
        fs::write(&p, serde_json::to_string_pretty(&s)?)?;
        written.push(p);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_power_law_is_recovered() {
        let mut recs = Vec::new();
        for d in [64.0, 128.0, 256.0, 512.0, 1024.0] {
            for v in [64.0, 128.0, 256.0, 512.0, 1024.0] {
                let y: f64 = 0.52 * f64::powf(d, -1.15) * f64::powf(v, 1.33);
                recs.push(ScalingRecord {
                    d,
                    v,
                    one_minus_r2: y.min(1.0),
                });
            }
        }
        // keep only records inside (0, 1]; all of them are for this grid except the largest V/smallest D
        let recs: Vec<_> = recs.into_iter().filter(|r| r.one_minus_r2 < 1.0).collect();
        let fit = fit_scaling_law(&recs).unwrap();
        assert!((fit.a - 0.52).abs() < 1e-10);
        assert!((fit.alpha_d.unwrap() - 1.15).abs() < 1e-10);
        assert!((fit.alpha_v.unwrap() - 1.33).abs() < 1e-10);
        assert!((fit.r2_fit - 1.0).abs() < 1e-10);

        let scaled: Vec<_> = recs.iter().map(|r| ScalingRecord { d: r.d * 10.0, ..*r }).collect();
        let f2 = fit_scaling_law(&scaled).unwrap();
        assert!((f2.alpha_d.unwrap() - 1.15).abs() < 1e-10);
        assert!((f2.a / fit.a - 10f64.powf(1.15)).abs() < 1e-6);
    }

    #[test]
    fn degenerate_grid_flags_exponent() {
        let recs: Vec<_> = [64.0, 128.0, 256.0]
            .iter()
            .map(|&v: &f64| ScalingRecord {
                d: 100.0,
                v,
                one_minus_r2: 1e-3 * v.powf(0.5),
            })
            .collect();
        let fit = fit_scaling_law(&recs).unwrap();
        assert_eq!(fit.alpha_d, None);
        assert!((fit.alpha_v.unwrap() - 0.5).abs() < 1e-10);
        assert!(matches!(fit_scaling_law(&recs[..2]), Err(ExperimentError::TooFewRecords(2))));
        let mut bad = recs.clone();
        bad[0].one_minus_r2 = 0.0;
        assert!(matches!(fit_scaling_law(&bad), Err(ExperimentError::BadRecord(_))));
    }

    #[test]
    fn spearman_examples() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]), Some(1.0));
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 1.0, 0.0]), Some(-1.0));
        let r = spearman(&[1.0, 2.0, 3.0, 4.0], &[1.0, 1.0, 2.0, 2.0]).unwrap();
        assert!((r - 0.894427190999916).abs() < 1e-12);
        assert_eq!(spearman(&[1.0, 1.0], &[1.0, 2.0]), None);
    }

    #[test]
    fn expansion_dedups_and_matches_steps() {
        let spec = preset(Experiment::PhaseTransition, Budget::Desk);
        let cells = spec.expand();
        assert_eq!(cells.len(), 6);
        assert_eq!(cells[0].steps, 20_000);
        assert_eq!(cells[0].ctx, 2);
        assert_eq!(cells.last().unwrap().steps, 1200);
        assert_eq!(cells[3].steps, (1200u64 * 32 * 99).div_ceil(32 * 25));

        let rv = preset(Experiment::RegVsCls, Budget::Desk);
        assert_eq!(rv.expand().len(), 3 * (6 + 5));
        // the σ=0, D=10⁴ regression cell is shared with the noise sweep
        let shared = preset(Experiment::NoiseSweep, Budget::Desk).expand()[0].clone();
        let pt = cells.last().unwrap();
        assert_eq!(shared.hash(), pt.hash());
    }

    #[test]
    fn empty_grid_is_empty_table() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SweepSpec {
            d_traj: vec![],
            ..Default::default()
        };
        let rows = run_sweep(&spec, dir.path(), 1).unwrap();
        assert!(rows.is_empty());
        assert!(read_results(&dir.path().join("results.csv")).unwrap().is_empty());
    }

    #[test]
    fn median_examples() {
        assert_eq!(median(&[]), None);
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
    }
}
