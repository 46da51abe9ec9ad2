//! Losses, the two-phase Adam training loop, checkpoints and the training log.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{CodecError, TokenCodec};
use crate::datagen::{Dataset, Trajectory};
use crate::eval::{self, EvalError, ModelPredictor, Predictor};
use crate::model::{
    build_graph, save_checkpoint, Graph, Input, ModelConfig, ModelError, Provenance, Weights,
};
use crate::numerics::{adam_step, AdamConfig, AdamState, NumericsError, Scalar, Tape, Tensor, Var};
use crate::probing::{spatial_map_r2, ProbeError, ProbeOptions};
use crate::rng::{stream, LabRng, Stream};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: u64 },
    #[error("trajectory {index} has {len} states; at least 2 are needed")]
    TrajectoryTooShort { index: usize, len: usize },
    #[error("target token {token} out of range for vocabulary {vocab}")]
    TargetOutOfRange { token: usize, vocab: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Probe(#[from] ProbeError),
    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for TrainError {
    fn from(e: std::io::Error) -> Self {
        TrainError::Io(e.to_string())
    }
}

/// A constant-learning-rate stretch of training.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Phase {
    pub steps: u64,
    pub lr: f64,
}

/// Hyperparameters of one run. JSON keys mirror the `lab train` flags.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub steps: u64,
    pub schedule: Vec<Phase>,
    pub batch: usize,
    /// Context-noise scale σ.
    pub noise: f64,
    pub seed: u64,
    /// Steps between log records (and checkpoints when enabled).
    pub log_every: u64,
    pub checkpoints: bool,
    pub test_fraction: f64,
    /// Fixed held-out windows scored at every record.
    pub test_windows: usize,
    /// Held-out trajectories rolled out at every record; 0 disables.
    pub rollout_trajectories: usize,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig::new(20_000, 0)
    }
}

impl TrainConfig {
    /// `steps` split evenly between η=1e-3 and η=1e-4.
    pub fn new(steps: u64, seed: u64) -> Self {
        TrainConfig {
            steps,
            schedule: two_phase(steps),
            batch: 64,
            noise: 0.0,
            seed,
            log_every: 500,
            checkpoints: false,
            test_fraction: 0.1,
            test_windows: 256,
            rollout_trajectories: 16,
            adam: AdamConfig::default(),
        }
    }

    /// Changes the step count and rebuilds the default schedule.
    pub fn with_steps(mut self, steps: u64) -> Self {
        self.steps = steps;
        self.schedule = two_phase(steps);
        self
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        let total: u64 = self.schedule.iter().map(|p| p.steps).sum();
        if total != self.steps {
            return bad(format!("schedule covers {total} steps, config says {}", self.steps));
        }
        if let Some(p) = self.schedule.iter().find(|p| !(p.lr > 0.0 && p.lr.is_finite())) {
            return bad(format!("learning rate {} must be positive", p.lr));
        }
        if self.batch == 0 {
            return bad("batch must be positive".into());
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return bad(format!("noise {} must be finite and non-negative", self.noise));
        }
        if self.log_every == 0 {
            return bad("log_every must be positive".into());
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return bad(format!("test_fraction {} must lie in (0, 1)", self.test_fraction));
        }
        Ok(())
    }

    /// Learning rate in effect at 0-based step `step`.
    pub fn lr_at(&self, step: u64) -> f64 {
        let mut end = 0;
        for p in &self.schedule {
            end += p.steps;
            if step < end {
                return p.lr;
            }
        }
        self.schedule.last().map_or(0.0, |p| p.lr)
    }
}

fn two_phase(steps: u64) -> Vec<Phase> {
    vec![
        Phase {
            steps: steps / 2,
            lr: 1e-3,
        },
        Phase {
            steps: steps - steps / 2,
            lr: 1e-4,
        },
    ]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub step: u64,
    /// Mean training loss since the previous record.
    pub train_loss: f64,
    /// Loss on the fixed held-out windows, without context noise.
    pub test_loss: f64,
    pub effective_mse: Option<f64>,
    pub spatial_r2: Option<f64>,
    pub rollout_mde: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub records: Vec<LogRecord>,
}

impl TrainLog {
    /// Highest logged spatial-map R² (mean over axes).
    pub fn best_spatial_r2(&self) -> Option<f64> {
        self.records.iter().filter_map(|r| r.spatial_r2).reduce(f64::max)
    }

    pub fn best_rollout_mde(&self) -> Option<f64> {
        self.records.iter().filter_map(|r| r.rollout_mde).reduce(f64::min)
    }

    pub fn last(&self) -> Option<&LogRecord> {
        self.records.last()
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), TrainError> {
        let io = |e: csv::Error| TrainError::Io(e.to_string());
        let mut w = csv::Writer::from_path(path).map_err(io)?;
        w.write_record(["step", "train_loss", "test_loss", "effective_mse", "spatial_r2", "rollout_mde"])
            .map_err(io)?;
        let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        for r in &self.records {
            w.write_record([
                r.step.to_string(),
                r.train_loss.to_string(),
                r.test_loss.to_string(),
                opt(r.effective_mse),
                opt(r.spatial_r2),
                opt(r.rollout_mde),
            ])
            .map_err(io)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Dual-head next-token cross-entropy: per axis, mean over positions of
/// `-log softmax(logits)[target]`, summed over axes.
pub fn ntp_loss<T: Scalar>(tape: &mut Tape<T>, logits: &[Var], targets: &[Vec<usize>]) -> Result<Var, TrainError> {
    if logits.len() != targets.len() || logits.is_empty() {
        return Err(TrainError::Config(format!(
            "{} logit heads for {} target axes",
            logits.len(),
            targets.len()
        )));
    }
    let mut total = None;
    for (&l, t) in logits.iter().zip(targets) {
        let vocab = tape.value(l).cols();
        if let Some(&token) = t.iter().find(|&&k| k >= vocab) {
            return Err(TrainError::TargetOutOfRange { token, vocab });
        }
        let ce = tape.cross_entropy(l, t)?;
        let m = tape.mean(ce)?;
        total = Some(match total {
            Some(acc) => tape.add(acc, m)?,
            None => m,
        });
    }
    Ok(total.expect("at least one head"))
}

/// `σ·ε` for `n` context values. No draws are made when `σ = 0`.
pub fn context_noise<R: Rng>(rng: &mut R, n: usize, sigma: f64) -> Vec<f64> {
    if sigma == 0.0 {
        return vec![0.0; n];
    }
    (0..n).map(|_| sigma * rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Splits `[batch, len, dim]` windows into noised inputs (first `len - 1`
/// states) and clean targets (last `len - 1` states).
fn split_window(windows: &[f64], batch: usize, len: usize, dim: usize, noise: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let ctx = len - 1;
    let mut inputs = Vec::with_capacity(batch * ctx * dim);
    let mut targets = Vec::with_capacity(batch * ctx * dim);
    for b in 0..batch {
        let w = &windows[b * len * dim..(b + 1) * len * dim];
        inputs.extend_from_slice(&w[..ctx * dim]);
        targets.extend_from_slice(&w[dim..]);
    }
    for (x, e) in inputs.iter_mut().zip(noise) {
        *x += e;
    }
    (inputs, targets)
}

fn check_windows(windows: &[f64], batch: usize, len: usize, dim: usize) -> Result<(), TrainError> {
    if len < 2 {
        return Err(TrainError::Config(format!("window of {len} states has no target")));
    }
    if windows.len() != batch * len * dim {
        return Err(TrainError::Model(ModelError::InputShape(format!(
            "{} values for {batch}×{len}×{dim} windows",
            windows.len()
        ))));
    }
    Ok(())
}

/// Noisy-context regression loss on the tape. `windows` holds `batch`
/// windows of `len` states; the first `len - 1` states, each perturbed by
/// `σ·ε`, predict the clean next states. The loss is the squared Euclidean
/// error averaged over positions and batch.
#[allow(clippy::too_many_arguments)]
pub fn regression_loss_ncl<T: Scalar, R: Rng>(
    tape: &mut Tape<T>,
    config: &ModelConfig,
    weights: &Weights<T>,
    windows: &[f64],
    batch: usize,
    len: usize,
    sigma: f64,
    rng: &mut R,
    trainable: bool,
) -> Result<(Var, Graph), TrainError> {
    let dim = config.input_dim;
    check_windows(windows, batch, len, dim)?;
    let noise = context_noise(rng, batch * (len - 1) * dim, sigma);
    let (inputs, targets) = split_window(windows, batch, len, dim, &noise);
    let inputs: Vec<T> = inputs.into_iter().map(T::from_f64_lossy).collect();
    let graph = build_graph(tape, config, weights, Input::States(&inputs), batch, len - 1, trainable)?;
    let target = tape.constant(Tensor::new(
        vec![batch * (len - 1), dim],
        targets.into_iter().map(T::from_f64_lossy).collect(),
    )?)?;
    let diff = tape.sub(graph.outputs[0], target)?;
    let sq = tape.mul(diff, diff)?;
    let total = tape.sum(sq)?;
    let loss = tape.scale(total, 1.0 / (batch * (len - 1)) as f64)?;
    Ok((loss, graph))
}

/// The same objective evaluated through any [`Predictor`], one prefix at a
/// time. With equal `rng` state it draws the same noise as
/// [`regression_loss_ncl`].
pub fn ncl_objective<P: Predictor + ?Sized, R: Rng>(
    predictor: &P,
    windows: &[f64],
    batch: usize,
    len: usize,
    sigma: f64,
    rng: &mut R,
) -> Result<f64, TrainError> {
    let dim = predictor.dim();
    check_windows(windows, batch, len, dim)?;
    let noise = context_noise(rng, batch * (len - 1) * dim, sigma);
    let (inputs, targets) = split_window(windows, batch, len, dim, &noise);
    let ctx = len - 1;
    let mut total = 0.0;
    for b in 0..batch {
        let seq = &inputs[b * ctx * dim..(b + 1) * ctx * dim];
        for i in 0..ctx {
            let start = (i + 1).saturating_sub(predictor.context_len());
            let pred = predictor.predict_next(&seq[start * dim..(i + 1) * dim], 1, i + 1 - start)?;
            let truth = &targets[(b * ctx + i) * dim..(b * ctx + i + 1) * dim];
            total += pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum::<f64>();
        }
    }
    Ok(total / (batch * ctx) as f64)
}

/// Next-token loss for classification windows (no noise).
fn classification_loss<T: Scalar>(
    tape: &mut Tape<T>,
    config: &ModelConfig,
    weights: &Weights<T>,
    codec: &TokenCodec,
    windows: &[f64],
    noise: &[f64],
    batch: usize,
    len: usize,
    trainable: bool,
) -> Result<(Var, Graph), TrainError> {
    let dim = config.input_dim;
    check_windows(windows, batch, len, dim)?;
    let (inputs, targets) = split_window(windows, batch, len, dim, noise);
    let tokens = inputs.iter().map(|&x| codec.encode(x)).collect::<Result<Vec<_>, _>>()?;
    let graph = build_graph(tape, config, weights, Input::Tokens(&tokens), batch, len - 1, trainable)?;
    let mut per_axis = vec![Vec::with_capacity(batch * (len - 1)); dim];
    for chunk in targets.chunks(dim) {
        for (axis, &x) in chunk.iter().enumerate() {
            per_axis[axis].push(codec.encode(x)?);
        }
    }
    let loss = ntp_loss(tape, &graph.outputs, &per_axis)?;
    Ok((loss, graph))
}

/// Result of [`train`].
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub config: ModelConfig,
    pub weights: Weights<f32>,
    pub log: TrainLog,
    /// Trajectory indices held out from training.
    pub test_indices: Vec<usize>,
}

impl TrainOutcome {
    pub fn predictor(&self) -> ModelPredictor {
        ModelPredictor::new(self.config.clone(), self.weights.clone())
    }

    pub fn best_spatial_r2(&self) -> Option<f64> {
        self.log.best_spatial_r2()
    }
}

/// Deterministic 90/10-style split of trajectory indices: `(train, test)`.
pub fn split_indices(n: usize, test_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    if n < 2 {
        return (idx.clone(), idx);
    }
    use rand::seq::SliceRandom;
    idx.shuffle(&mut stream(seed, Stream::Split));
    let n_test = ((n as f64 * test_fraction).round() as usize).clamp(1, n - 1);
    let test = idx.split_off(n - n_test);
    (idx, test)
}

/// Window length in states (inputs plus one target) for a context of `c`.
pub fn window_states(context_len: usize, traj_len: usize) -> usize {
    (context_len + 1).min(traj_len)
}

/// Uniform sampler over all `(trajectory, start)` pairs.
struct WindowSampler {
    trajs: Vec<usize>,
    cumulative: Vec<usize>,
}

impl WindowSampler {
    fn new(trajectories: &[Trajectory], indices: &[usize], len: usize) -> Self {
        let mut cumulative = Vec::with_capacity(indices.len());
        let mut total = 0;
        for &i in indices {
            total += trajectories[i].len() + 1 - len;
            cumulative.push(total);
        }
        WindowSampler {
            trajs: indices.to_vec(),
            cumulative,
        }
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> (usize, usize) {
        let total = *self.cumulative.last().expect("non-empty sampler");
        let k = rng.random_range(0..total);
        let slot = self.cumulative.partition_point(|&c| c <= k);
        let before = if slot == 0 { 0 } else { self.cumulative[slot - 1] };
        (self.trajs[slot], k - before)
    }
}

fn gather(trajectories: &[Trajectory], picks: &[(usize, usize)], len: usize) -> Vec<f64> {
    let dim = trajectories[picks[0].0].dim;
    let mut out = Vec::with_capacity(picks.len() * len * dim);
    for &(t, s) in picks {
        out.extend_from_slice(&trajectories[t].positions[s * dim..(s + len) * dim]);
    }
    out
}

/// One loss evaluation (and optionally an update) on a batch of windows.
fn loss_on(
    config: &ModelConfig,
    weights: &Weights<f32>,
    windows: &[f64],
    batch: usize,
    len: usize,
    sigma: f64,
    rng: &mut LabRng,
    trainable: bool,
) -> Result<(f64, Option<Vec<Tensor<f32>>>), TrainError> {
    let mut tape = Tape::<f32>::new();
    let (loss, graph) = match config.codec() {
        None => regression_loss_ncl(&mut tape, config, weights, windows, batch, len, sigma, rng, trainable)?,
        Some(codec) => {
            let noise = context_noise(rng, batch * (len - 1) * config.input_dim, sigma);
            classification_loss(&mut tape, config, weights, &codec, windows, &noise, batch, len, trainable)?
        }
    };
    let value = tape.value(loss).data()[0] as f64;
    if !trainable {
        return Ok((value, None));
    }
    let mut grads = tape.backward(loss)?;
    Ok((value, Some(graph.params.iter().map(|&p| grads.take(p)).collect())))
}

struct Evaluator {
    windows: Vec<f64>,
    count: usize,
    len: usize,
    rollout: Vec<usize>,
}

impl Evaluator {
    fn new(ds: &Dataset, test: &[usize], len: usize, cfg: &TrainConfig) -> Self {
        let sampler = WindowSampler::new(&ds.trajectories, test, len);
        let mut rng = stream(cfg.seed, Stream::Eval);
        let picks: Vec<_> = (0..cfg.test_windows).map(|_| sampler.sample(&mut rng)).collect();
        let windows = if picks.is_empty() {
            Vec::new()
        } else {
            gather(&ds.trajectories, &picks, len)
        };
        let rollout = test
            .iter()
            .copied()
            .filter(|&i| ds.trajectories[i].len() >= eval::CONDITION + eval::HORIZON)
            .take(cfg.rollout_trajectories)
            .collect();
        Evaluator {
            windows,
            count: picks.len(),
            len,
            rollout,
        }
    }

    fn record(
        &self,
        ds: &Dataset,
        config: &ModelConfig,
        weights: &Weights<f32>,
        step: u64,
        train_loss: f64,
    ) -> Result<LogRecord, TrainError> {
        let dim = config.input_dim;
        let per = self.len * dim;
        let mut test_loss = 0.0;
        let mut eff = 0.0;
        let mut dummy = stream(0, Stream::ContextNoise);
        let pred = ModelPredictor::new(config.clone(), weights.clone());
        for chunk in self.windows.chunks(64 * per) {
            let b = chunk.len() / per;
            let (l, _) = loss_on(config, weights, chunk, b, self.len, 0.0, &mut dummy, false)?;
            test_loss += l * b as f64;
            if let Some(codec) = config.codec() {
                let (inputs, targets) = split_window(chunk, b, self.len, dim, &[]);
                let tokens = inputs.iter().map(|&x| codec.encode(x)).collect::<Result<Vec<_>, _>>()?;
                let predicted = pred.predict_tokens(&tokens, b, self.len - 1)?;
                eff += eval::effective_mse(&predicted, &targets, dim, &codec)? * b as f64;
            }
        }
        let n = self.count.max(1) as f64;
        let (effective_mse, spatial_r2) = if config.is_classification() {
            // With V ≤ N the table has too few rows and any embedding fits; leave R² unset.
            let r2 = match spatial_map_r2(config, weights, ProbeOptions::default()) {
                Ok(r2) => Some(r2.iter().sum::<f64>() / r2.len() as f64),
                Err(ProbeError::InsufficientSamples { .. }) => None,
                Err(e) => return Err(e.into()),
            };
            (Some(eff / n), r2)
        } else {
            (None, None)
        };
        let rollout_mde = if self.rollout.is_empty() {
            None
        } else {
            let trajs: Vec<&[f64]> = self.rollout.iter().map(|&i| ds.trajectories[i].positions.as_slice()).collect();
            let results = eval::rollout_batch(&pred, &trajs, eval::CONDITION, eval::HORIZON)?;
            Some(eval::summarize(&results).mean_distance_error)
        };
        Ok(LogRecord {
            step,
            train_loss,
            test_loss: test_loss / n,
            effective_mse,
            spatial_r2,
            rollout_mde,
        })
    }
}

/// Trains a fresh model. With `out_dir`, writes `train_log.csv`, the final
/// `ckpt_{steps}.bin`, and intermediate checkpoints when enabled.
pub fn train(
    dataset: &Dataset,
    model: &ModelConfig,
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    model.validate()?;
    if dataset.trajectories.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    if dataset.dim() != model.input_dim {
        return Err(TrainError::Config(format!(
            "dataset dim {} vs model input dim {}",
            dataset.dim(),
            model.input_dim
        )));
    }
    let min_len = dataset.trajectories.iter().map(Trajectory::len).min().unwrap_or(0);
    if let Some((index, t)) = dataset.trajectories.iter().enumerate().find(|(_, t)| t.len() < 2) {
        return Err(TrainError::TrajectoryTooShort { index, len: t.len() });
    }
    let len = window_states(model.context_len, min_len);
    let (train_idx, test_idx) = split_indices(dataset.d_traj(), cfg.test_fraction, cfg.seed);

    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
    }
    let provenance = |step: u64, loss: Option<f64>| Provenance {
        seed: cfg.seed,
        step,
        loss,
        extra: serde_json::json!({
            "train": cfg,
            "dataset": {"kind": dataset.kind, "seed": dataset.seed, "d_traj": dataset.d_traj()},
            "window_states": len,
            "heads_per_position": model.input_dim,
        }),
    };
    let ckpt_path = |dir: &Path, step: u64| -> PathBuf { dir.join(format!("ckpt_{step}.bin")) };

    let mut weights: Weights<f32> = Weights::init(model, &mut stream(cfg.seed, Stream::Init))?;
    let mut adam = {
        let refs: Vec<&Tensor<f32>> = weights.tensors().iter().collect();
        AdamState::new(&refs, cfg.lr_at(0), cfg.adam.clone())
    };
    let sampler = WindowSampler::new(&dataset.trajectories, &train_idx, len);
    let evaluator = Evaluator::new(dataset, &test_idx, len, cfg);
    let mut batch_rng = stream(cfg.seed, Stream::Batches);
    let mut noise_rng = stream(cfg.seed, Stream::ContextNoise);
    let mut log = TrainLog::default();
    let (mut acc, mut acc_n) = (0.0, 0u64);

    for step in 0..cfg.steps {
        let picks: Vec<_> = (0..cfg.batch).map(|_| sampler.sample(&mut batch_rng)).collect();
        let windows = gather(&dataset.trajectories, &picks, len);
        let (loss, grads) = match loss_on(model, &weights, &windows, cfg.batch, len, cfg.noise, &mut noise_rng, true) {
            Err(TrainError::Numerics(NumericsError::NonFinite { .. })) => {
                return Err(TrainError::NonFiniteLoss { step: step + 1 })
            }
            other => other?,
        };
        if !loss.is_finite() {
            return Err(TrainError::NonFiniteLoss { step: step + 1 });
        }
        adam.lr = cfg.lr_at(step);
        let mut params: Vec<&mut Tensor<f32>> = weights.tensors_mut().iter_mut().collect();
        adam_step(&mut params, &grads.expect("gradients"), &mut adam)?;
        acc += loss;
        acc_n += 1;

        let done = step + 1;
        if done % cfg.log_every == 0 || done == cfg.steps {
            let rec = evaluator.record(dataset, model, &weights, done, acc / acc_n as f64)?;
            if let (Some(dir), true) = (out_dir, cfg.checkpoints && done != cfg.steps) {
                save_checkpoint(&ckpt_path(dir, done), model, &weights, &provenance(done, Some(rec.test_loss)))?;
            }
            log.records.push(rec);
            acc = 0.0;
            acc_n = 0;
        }
    }

    if let Some(dir) = out_dir {
        let loss = log.last().map(|r| r.test_loss);
        save_checkpoint(&ckpt_path(dir, cfg.steps), model, &weights, &provenance(cfg.steps, loss))?;
        log.write_csv(&dir.join("train_log.csv"))?;
    }
    Ok(TrainOutcome {
        config: model.clone(),
        weights,
        log,
        test_indices: test_idx,
    })
}
