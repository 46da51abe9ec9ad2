//! Autoregressive rollouts and predictive metrics.

use std::path::Path;

use thiserror::Error;

use crate::codec::{CodecError, TokenCodec};
use crate::model::{forward_classification, forward_regression, HeadKind, ModelConfig, ModelError, Weights};

/// Conditioning states and generated horizon for rollout comparisons.
pub const CONDITION: usize = 50;
pub const HORIZON: usize = 50;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("trajectory of {len} states cannot hold {condition} conditioning + {horizon} generated")]
    TrajectoryTooShort { len: usize, condition: usize, horizon: usize },
    #[error("need at least one conditioning state")]
    EmptyContext,
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("io: {0}")]
    Io(String),
}

/// Anything that maps a batch of state windows to next-state predictions.
pub trait Predictor: Sync {
    fn dim(&self) -> usize;

    /// Longest window the predictor accepts.
    fn context_len(&self) -> usize;

    /// `windows` is `[batch, len, dim]`; returns the prediction of the state
    /// following each window's last position, `[batch, dim]`.
    fn predict_next(&self, windows: &[f64], batch: usize, len: usize) -> Result<Vec<f64>, EvalError>;
}

/// A trained transformer. Classification predictions are the argmax token
/// per axis, decoded to the bin center.
#[derive(Clone, Debug)]
pub struct ModelPredictor {
    pub config: ModelConfig,
    pub weights: Weights<f32>,
}

impl ModelPredictor {
    pub fn new(config: ModelConfig, weights: Weights<f32>) -> Self {
        ModelPredictor { config, weights }
    }

    /// Argmax tokens at every position, `[batch, len, dim]`.
    pub fn predict_tokens(&self, tokens: &[usize], batch: usize, len: usize) -> Result<Vec<usize>, EvalError> {
        let logits = forward_classification(&self.config, &self.weights, tokens, batch, len)?;
        let dim = self.config.input_dim;
        let mut out = vec![0usize; batch * len * dim];
        for (axis, l) in logits.iter().enumerate() {
            let v = l.cols();
            for (row, chunk) in l.data().chunks(v).enumerate() {
                out[row * dim + axis] = argmax(chunk);
            }
        }
        Ok(out)
    }
}

pub(crate) fn argmax(v: &[f32]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

impl Predictor for ModelPredictor {
    fn dim(&self) -> usize {
        self.config.input_dim
    }

    fn context_len(&self) -> usize {
        self.config.context_len
    }

    fn predict_next(&self, windows: &[f64], batch: usize, len: usize) -> Result<Vec<f64>, EvalError> {
        let dim = self.config.input_dim;
        match self.config.head {
            HeadKind::Regression => {
                let x: Vec<f32> = windows.iter().map(|&v| v as f32).collect();
                let y = forward_regression(&self.config, &self.weights, &x, batch, len)?;
                Ok(y.data()
                    .chunks(len * dim)
                    .flat_map(|seq| seq[(len - 1) * dim..].iter().map(|&v| v as f64))
                    .collect())
            }
            HeadKind::Classification { vocab, half_range } => {
                let codec = TokenCodec::new(half_range, vocab)?;
                let tokens = windows.iter().map(|&v| codec.encode(v)).collect::<Result<Vec<_>, _>>()?;
                let pred = self.predict_tokens(&tokens, batch, len)?;
                pred.chunks(len * dim)
                    .flat_map(|seq| seq[(len - 1) * dim..].iter().map(|&k| codec.decode(k)))
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(EvalError::from)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RolloutResult {
    pub dim: usize,
    /// `condition × dim`.
    pub conditioning: Vec<f64>,
    /// `generated_len × dim`; shorter than the horizon only when truncated.
    pub generated: Vec<f64>,
    /// `horizon × dim`.
    pub truth: Vec<f64>,
    /// Euclidean error per generated step.
    pub errors: Vec<f64>,
    pub mean_distance_error: f64,
    /// Step index (within the horizon) of the first non-finite prediction.
    pub truncated_at: Option<usize>,
}

impl RolloutResult {
    pub fn generated_len(&self) -> usize {
        self.generated.len() / self.dim
    }
}

/// `(1/H) Σ ||g_i - t_i||₂` over `dim`-dimensional points.
pub fn mean_distance_error(generated: &[f64], truth: &[f64], dim: usize) -> Result<f64, EvalError> {
    let errs = distance_errors(generated, truth, dim)?;
    if errs.is_empty() {
        return Ok(0.0);
    }
    Ok(errs.iter().sum::<f64>() / errs.len() as f64)
}

fn distance_errors(generated: &[f64], truth: &[f64], dim: usize) -> Result<Vec<f64>, EvalError> {
    if generated.len() != truth.len() || generated.len() % dim != 0 {
        return Err(EvalError::LengthMismatch(generated.len(), truth.len()));
    }
    Ok(generated
        .chunks(dim)
        .zip(truth.chunks(dim))
        .map(|(g, t)| g.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
        .collect())
}

/// Mean squared distance between decoded predicted tokens and the true
/// states; both laid out `n × dim`.
pub fn effective_mse(tokens: &[usize], truth: &[f64], dim: usize, codec: &TokenCodec) -> Result<f64, EvalError> {
    if tokens.len() != truth.len() || tokens.len() % dim != 0 {
        return Err(EvalError::LengthMismatch(tokens.len(), truth.len()));
    }
    if tokens.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (k, t) in tokens.chunks(dim).zip(truth.chunks(dim)) {
        for (&ki, &ti) in k.iter().zip(t) {
            let d = codec.decode(ki)? - ti;
            total += d * d;
        }
    }
    Ok(total / (tokens.len() / dim) as f64)
}

/// Conditions on the first `condition` states of each trajectory and generates
/// `horizon` more, feeding back at most `context_len` of the most recent states.
/// `trajectories` hold `n × dim` positions each. All trajectories advance in
/// one batched prediction per step.
pub fn rollout_batch<P: Predictor + ?Sized>(
    predictor: &P,
    trajectories: &[&[f64]],
    condition: usize,
    horizon: usize,
) -> Result<Vec<RolloutResult>, EvalError> {
    let dim = predictor.dim();
    if condition == 0 {
        return Err(EvalError::EmptyContext);
    }
    for t in trajectories {
        let len = t.len() / dim;
        if len < condition + horizon {
            return Err(EvalError::TrajectoryTooShort {
                len,
                condition,
                horizon,
            });
        }
    }
    let n = trajectories.len();
    let mut history: Vec<Vec<f64>> = trajectories.iter().map(|t| t[..condition * dim].to_vec()).collect();
    let mut truncated: Vec<Option<usize>> = vec![None; n];
    let ctx = predictor.context_len();

    for step in 0..horizon {
        let live: Vec<usize> = (0..n).filter(|&i| truncated[i].is_none()).collect();
        if live.is_empty() {
            break;
        }
        let avail = condition + step;
        let len = avail.min(ctx);
        let mut windows = Vec::with_capacity(live.len() * len * dim);
        for &i in &live {
            windows.extend_from_slice(&history[i][(avail - len) * dim..]);
        }
        let pred = predictor.predict_next(&windows, live.len(), len)?;
        for (&i, p) in live.iter().zip(pred.chunks(dim)) {
            if p.iter().all(|v| v.is_finite()) {
                history[i].extend_from_slice(p);
            } else {
                truncated[i] = Some(step);
            }
        }
    }

    trajectories
        .iter()
        .zip(history)
        .zip(truncated)
        .map(|((t, hist), truncated_at)| {
            let generated = hist[condition * dim..].to_vec();
            let truth = t[condition * dim..(condition + horizon) * dim].to_vec();
            let errors = distance_errors(&generated, &truth[..generated.len()], dim)?;
            let mean_distance_error = if errors.is_empty() {
                f64::INFINITY
            } else {
                errors.iter().sum::<f64>() / errors.len() as f64
            };
            Ok(RolloutResult {
                dim,
                conditioning: hist[..condition * dim].to_vec(),
                generated,
                truth,
                errors,
                mean_distance_error,
                truncated_at,
            })
        })
        .collect()
}

pub fn rollout<P: Predictor + ?Sized>(
    predictor: &P,
    trajectory: &[f64],
    condition: usize,
    horizon: usize,
) -> Result<RolloutResult, EvalError> {
    Ok(rollout_batch(predictor, &[trajectory], condition, horizon)?.remove(0))
}

/// Aggregate over many rollouts.
#[derive(Clone, Debug, PartialEq)]
pub struct RolloutSummary {
    /// Mean over completed rollouts of their mean distance error.
    pub mean_distance_error: f64,
    /// Mean error at each horizon step over completed rollouts.
    pub horizon_curve: Vec<f64>,
    pub completed: usize,
    pub truncated: usize,
}

pub fn summarize(results: &[RolloutResult]) -> RolloutSummary {
    let done: Vec<&RolloutResult> = results.iter().filter(|r| r.truncated_at.is_none()).collect();
    let horizon = done.first().map_or(0, |r| r.errors.len());
    let mut curve = vec![0.0; horizon];
    for r in &done {
        for (c, e) in curve.iter_mut().zip(&r.errors) {
            *c += e;
        }
    }
    let k = done.len().max(1) as f64;
    curve.iter_mut().for_each(|c| *c /= k);
    let mde = if done.is_empty() {
        f64::INFINITY
    } else {
        done.iter().map(|r| r.mean_distance_error).sum::<f64>() / k
    };
    RolloutSummary {
        mean_distance_error: mde,
        horizon_curve: curve,
        completed: done.len(),
        truncated: results.len() - done.len(),
    }
}

/// Columns `traj_id,step,x_true,y_true,x_gen,y_gen,dist_err`; `step` is the
/// absolute time index. `y_*` are empty for 1-D data.
pub fn write_rollout_csv(path: &Path, results: &[RolloutResult]) -> Result<(), EvalError> {
    let io = |e: csv::Error| EvalError::Io(e.to_string());
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    w.write_record(["traj_id", "step", "x_true", "y_true", "x_gen", "y_gen", "dist_err"])
        .map_err(io)?;
    for (id, r) in results.iter().enumerate() {
        let start = r.conditioning.len() / r.dim;
        for (i, ((g, t), e)) in r
            .generated
            .chunks(r.dim)
            .zip(r.truth.chunks(r.dim))
            .zip(&r.errors)
            .enumerate()
        {
            let y = |v: &[f64]| v.get(1).map(|y| y.to_string()).unwrap_or_default();
            w.write_record([
                id.to_string(),
                (start + i).to_string(),
                t[0].to_string(),
                y(t),
                g[0].to_string(),
                y(g),
                e.to_string(),
            ])
            .map_err(io)?;
        }
    }
    w.flush().map_err(|e| EvalError::Io(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Predicts the last state again.
    struct Persistence(usize, usize);

    impl Predictor for Persistence {
        fn dim(&self) -> usize {
            self.0
        }
        fn context_len(&self) -> usize {
            self.1
        }
        fn predict_next(&self, w: &[f64], batch: usize, len: usize) -> Result<Vec<f64>, EvalError> {
            let d = self.0;
            Ok((0..batch)
                .flat_map(|b| w[(b * len + len - 1) * d..(b * len + len) * d].to_vec())
                .collect())
        }
    }

    #[test]
    fn distance_error_examples() {
        assert_eq!(mean_distance_error(&[1.0, 2.0], &[1.0, 2.0], 2).unwrap(), 0.0);
        let g = [0.3, 0.4, 1.3, 1.4];
        let t = [0.0, 0.0, 1.0, 1.0];
        assert!((mean_distance_error(&g, &t, 2).unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(mean_distance_error(&[3.0, 4.0], &[0.0, 0.0], 2).unwrap(), 5.0);
        assert!(matches!(
            mean_distance_error(&[1.0], &[1.0, 2.0], 1),
            Err(EvalError::LengthMismatch(1, 2))
        ));
    }

    #[test]
    fn effective_mse_examples() {
        let codec = TokenCodec::new(1.0, 20).unwrap();
        // bin 11 is centered at 0.15; the truth 0.05 sits 0.1 away
        let k = codec.encode(0.15).unwrap();
        let mse = effective_mse(&[k, codec.encode(0.0).unwrap()], &[0.05, 0.05], 2, &codec).unwrap();
        assert!((mse - 0.01).abs() < 1e-12);
        assert!(effective_mse(&[20, 0], &[0.0, 0.0], 2, &codec).is_err());
    }

    #[test]
    fn persistence_rollout_is_constant() {
        let traj: Vec<f64> = (0..100).flat_map(|i| [i as f64, -(i as f64)]).collect();
        let r = rollout(&Persistence(2, 3), &traj, 50, 50).unwrap();
        assert_eq!(r.generated_len(), 50);
        for p in r.generated.chunks(2) {
            assert_eq!(p, &[49.0, -49.0]);
        }
        let mean: f64 = r.errors.iter().sum::<f64>() / 50.0;
        assert_eq!(r.mean_distance_error, mean);
    }

    #[test]
    fn too_short_rejected() {
        let traj = vec![0.0; 60];
        assert!(matches!(
            rollout(&Persistence(1, 5), &traj, 50, 50),
            Err(EvalError::TrajectoryTooShort { .. })
        ));
    }

    #[test]
    fn csv_rows() {
        let dir = tempfile::tempdir().unwrap();
        let traj: Vec<f64> = (0..100).flat_map(|i| [i as f64, 0.0]).collect();
        let r = rollout(&Persistence(2, 4), &traj, 50, 50).unwrap();
        let p = dir.path().join("r.csv");
        write_rollout_csv(&p, &[r]).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().count(), 51);
        assert!(text.lines().nth(1).unwrap().starts_with("0,50,50,0,49,0,1"));
    }
}
