use orbit_lab::datagen::{build_dataset, build_dataset_with, Dataset, DatasetKind, SamplingRanges, DT};
use orbit_lab::eval::{EvalError, ModelPredictor, Predictor};
use orbit_lab::model::{ModelConfig, Weights};
use orbit_lab::numerics::Tape;
use orbit_lab::rng::{stream, Stream};
use orbit_lab::training::{ncl_objective, regression_loss_ncl, train, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `batch` windows of `len` consecutive states, `[batch, len, dim]`.
fn windows(ds: &Dataset, batch: usize, len: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = ds.dim();
    let mut out = Vec::with_capacity(batch * len * dim);
    for _ in 0..batch {
        let t = &ds.trajectories[rng.random_range(0..ds.d_traj())];
        let s = rng.random_range(0..=t.len() - len);
        out.extend_from_slice(&t.positions[s * dim..(s + len) * dim]);
    }
    out
}

/// Looks the last state up in the dataset and returns its successor, plus a
/// fixed offset.
struct Lookup<'a> {
    ds: &'a Dataset,
    offset: [f64; 2],
}

impl Predictor for Lookup<'_> {
    fn dim(&self) -> usize {
        self.ds.dim()
    }
    fn context_len(&self) -> usize {
        100
    }
    fn predict_next(&self, w: &[f64], batch: usize, len: usize) -> Result<Vec<f64>, EvalError> {
        let dim = self.dim();
        let mut out = Vec::new();
        for b in 0..batch {
            let last = &w[(b * len + len - 1) * dim..(b * len + len) * dim];
            let next = self
                .ds
                .trajectories
                .iter()
                .find_map(|t| (0..t.len() - 1).find(|&i| t.position(i) == last).map(|i| t.position(i + 1)))
                .expect("state from the dataset");
            out.extend(next.iter().zip(self.offset).map(|(x, d)| x + d));
        }
        Ok(out)
    }
}

/// `x_{i+1} = 2 cos(ω dt) x_i - x_{i-1}`, exact for a sine of frequency ω;
/// predicts 0 from a single state.
struct Recurrence {
    c: f64,
}

impl Predictor for Recurrence {
    fn dim(&self) -> usize {
        1
    }
    fn context_len(&self) -> usize {
        1000
    }
    fn predict_next(&self, w: &[f64], batch: usize, len: usize) -> Result<Vec<f64>, EvalError> {
        Ok((0..batch)
            .map(|b| {
                let s = &w[b * len..(b + 1) * len];
                if len < 2 {
                    0.0
                } else {
                    2.0 * self.c * s[len - 1] - s[len - 2]
                }
            })
            .collect())
    }
}

#[test]
fn exact_oracle_has_zero_loss_and_offset_costs_d_squared() {
    let ds = build_dataset(DatasetKind::Kepler, 8, 3).unwrap();
    let w = windows(&ds, 6, 12, 0);
    let mut rng = stream(0, Stream::ContextNoise);
    let exact = Lookup { ds: &ds, offset: [0.0, 0.0] };
    assert_eq!(ncl_objective(&exact, &w, 6, 12, 0.0, &mut rng).unwrap(), 0.0);
    for d in [0.1, 0.5, 2.0] {
        let shifted = Lookup { ds: &ds, offset: [d, 0.0] };
        let l = ncl_objective(&shifted, &w, 6, 12, 0.0, &mut rng).unwrap();
        assert!((l - d * d).abs() < 1e-12, "{l} vs {}", d * d);
    }
}

#[test]
fn noise_through_exact_dynamics_matches_closed_form() {
    let omega = 1.3;
    let ranges = SamplingRanges {
        omega: (omega, omega),
        ..Default::default()
    };
    let ds = build_dataset_with(DatasetKind::Sine, 32, 5, ranges).unwrap();
    let (batch, len) = (64, 11);
    let ctx = (len - 1) as f64;
    let w = windows(&ds, batch, len, 1);
    let c = (omega * DT).cos();
    let p = Recurrence { c };
    let first: f64 = (0..batch).map(|b| w[b * len + 1].powi(2)).sum::<f64>() / batch as f64;

    let mut rng = stream(7, Stream::ContextNoise);
    let clean = ncl_objective(&p, &w, batch, len, 0.0, &mut rng).unwrap();
    assert!((clean - first / ctx).abs() < 1e-12);

    let sigma = 0.1;
    let reps = 400;
    let mut rng = stream(7, Stream::ContextNoise);
    let mc: f64 = (0..reps)
        .map(|_| ncl_objective(&p, &w, batch, len, sigma, &mut rng).unwrap())
        .sum::<f64>()
        / reps as f64;
    let expected = (first + (ctx - 1.0) * sigma * sigma * (4.0 * c * c + 1.0)) / ctx;
    assert!(mc > clean);
    assert!((mc - expected).abs() / expected < 0.03, "{mc} vs {expected}");
}

#[test]
fn tape_loss_equals_predictor_route() {
    let ds = build_dataset(DatasetKind::Kepler, 16, 2).unwrap();
    let config = ModelConfig::regression(2, 16, 12);
    let weights = Weights::<f32>::init(&config, &mut stream(4, Stream::Init)).unwrap();
    let predictor = ModelPredictor::new(config.clone(), weights.clone());
    let (batch, len) = (5, 13);
    let w = windows(&ds, batch, len, 9);
    for sigma in [0.0, 0.1, 1.0] {
        let mut tape = Tape::<f32>::new();
        let mut r1 = stream(11, Stream::ContextNoise);
        let (loss, _) = regression_loss_ncl(&mut tape, &config, &weights, &w, batch, len, sigma, &mut r1, false).unwrap();
        let a = tape.value(loss).data()[0] as f64;
        let mut r2 = stream(11, Stream::ContextNoise);
        let b = ncl_objective(&predictor, &w, batch, len, sigma, &mut r2).unwrap();
        assert!((a - b).abs() / b.abs().max(1e-6) < 1e-4, "σ={sigma}: {a} vs {b}");
        assert_eq!(r1.random::<u64>(), r2.random::<u64>(), "same noise draws");
    }
}

#[test]
fn zero_noise_loss_is_deterministic_in_weights_and_window() {
    let ds = build_dataset(DatasetKind::Kepler, 4, 2).unwrap();
    let config = ModelConfig::regression(2, 16, 8);
    let weights = Weights::<f32>::init(&config, &mut stream(4, Stream::Init)).unwrap();
    let w = windows(&ds, 3, 9, 1);
    let eval = |seed| {
        let mut tape = Tape::<f32>::new();
        let mut rng = stream(seed, Stream::ContextNoise);
        let (l, _) = regression_loss_ncl(&mut tape, &config, &weights, &w, 3, 9, 0.0, &mut rng, true).unwrap();
        tape.value(l).data()[0]
    };
    assert_eq!(eval(1).to_bits(), eval(2).to_bits());
}

fn small_run(kind: DatasetKind, config: ModelConfig, noise: f64) -> orbit_lab::training::TrainOutcome {
    let ds = build_dataset(kind, 64, 1).unwrap();
    let mut cfg = TrainConfig::new(400, 3);
    cfg.batch = 16;
    cfg.log_every = 10;
    cfg.noise = noise;
    cfg.test_windows = 32;
    cfg.rollout_trajectories = 2;
    train(&ds, &config, &cfg, None).unwrap()
}

fn phase_one_trend(out: &orbit_lab::training::TrainOutcome) {
    let phase1: Vec<f64> = out.log.records.iter().filter(|r| r.step <= 200).map(|r| r.train_loss).collect();
    let k = (phase1.len() / 10).max(1);
    let head = phase1[..k].iter().sum::<f64>() / k as f64;
    let tail = phase1[phase1.len() - k..].iter().sum::<f64>() / k as f64;
    assert!(tail < head, "phase-1 loss {head} -> {tail}");
}

#[test]
fn phase_one_loss_decreases_for_each_default_config() {
    phase_one_trend(&small_run(DatasetKind::Sine, ModelConfig::classification(1, 128, 1.0, 16, 20), 0.0));
    phase_one_trend(&small_run(DatasetKind::Sine, ModelConfig::regression(1, 16, 20), 0.0));
    phase_one_trend(&small_run(DatasetKind::Kepler, ModelConfig::classification(2, 64, 4.0, 16, 20), 0.0));
    phase_one_trend(&small_run(DatasetKind::Kepler, ModelConfig::regression(2, 16, 20), 0.1));
}

#[test]
fn training_is_deterministic_and_best_r2_is_the_logged_max() {
    let config = ModelConfig::classification(1, 64, 1.0, 16, 20);
    let a = small_run(DatasetKind::Sine, config.clone(), 0.0);
    let b = small_run(DatasetKind::Sine, config, 0.0);
    assert_eq!(a.log, b.log);
    assert_eq!(a.weights.tensors(), b.weights.tensors());

    let steps: Vec<u64> = a.log.records.iter().map(|r| r.step).collect();
    assert!(steps.windows(2).all(|s| s[0] < s[1]));
    let max = a
        .log
        .records
        .iter()
        .filter_map(|r| r.spatial_r2)
        .fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(a.best_spatial_r2(), Some(max));
}

#[test]
fn spatial_r2_is_unset_when_vocab_does_not_exceed_width() {
    let out = small_run(DatasetKind::Kepler, ModelConfig::classification(2, 16, 4.0, 16, 20), 0.0);
    assert!(out.log.records.iter().all(|r| r.spatial_r2.is_none() && r.effective_mse.is_some()));
    assert_eq!(out.best_spatial_r2(), None);
}
