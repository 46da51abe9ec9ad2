//! Sine-wave and Kepler-orbit trajectory generation, with the exact physics
//! metadata used as probe ground truth.

mod io;
mod kepler;
pub mod ode;

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{self, Stream};

pub use io::{read_dataset, write_csv, write_dataset, DATASET_MAGIC};
pub use kepler::{
    ellipse_observables, force_at, integrate_orbit, lrl_vector, kepler_trajectory, perihelion_state, Force,
    KeplerTargets, StepTargets,
};

/// Gravitational parameter of the central body.
pub const GM: f64 = 1.0;
/// Sampling interval between consecutive states.
pub const DT: f64 = 0.2;
/// States per trajectory.
pub const N_STEPS: usize = 100;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DatagenError {
    #[error("integrator step size underflow at t = {time}")]
    StepUnderflow { time: f64 },
    #[error("unbound orbit: eccentricity {0} >= 1")]
    Unbound(f64),
    #[error("zero radius")]
    ZeroRadius,
    #[error("inconsistent trajectory metadata: {0}")]
    Inconsistent(String),
    #[error("dataset needs at least one trajectory")]
    Empty,
    #[error("io: {0}")]
    Io(String),
    #[error("malformed dataset file: {0}")]
    Format(String),
}

impl From<std::io::Error> for DatagenError {
    fn from(e: std::io::Error) -> Self {
        DatagenError::Io(e.to_string())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Sine,
    Kepler,
}

impl DatasetKind {
    pub fn dim(self) -> usize {
        match self {
            DatasetKind::Sine => 1,
            DatasetKind::Kepler => 2,
        }
    }
}

impl std::str::FromStr for DatasetKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "sine" => Ok(DatasetKind::Sine),
            "kepler" => Ok(DatasetKind::Kepler),
            other => Err(format!("unknown dataset kind '{other}'")),
        }
    }
}

/// `x(t) = A sin(ωt + φ)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SineParams {
    pub amplitude: f64,
    pub omega: f64,
    pub phase: f64,
}

/// Bound two-body orbit, initialized at perihelion and rotated by `theta`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrbitParams {
    pub eccentricity: f64,
    pub semi_major: f64,
    pub theta: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum SourceParams {
    Sine(SineParams),
    Kepler(OrbitParams),
}

/// Closed sampling intervals for the generative parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplingRanges {
    pub amplitude: (f64, f64),
    pub omega: (f64, f64),
    pub phase: (f64, f64),
    pub eccentricity: (f64, f64),
    pub semi_major: (f64, f64),
    pub theta: (f64, f64),
}

impl Default for SamplingRanges {
    fn default() -> Self {
        SamplingRanges {
            amplitude: (0.5, 1.0),
            omega: (0.5, 2.0),
            phase: (0.0, 2.0 * PI),
            eccentricity: (0.0, 0.8),
            semi_major: (0.5, 2.0),
            theta: (0.0, 2.0 * PI),
        }
    }
}

impl SamplingRanges {
    pub fn sample_sine<R: Rng>(&self, rng: &mut R) -> SineParams {
        SineParams {
            amplitude: rng.random_range(self.amplitude.0..=self.amplitude.1),
            omega: rng.random_range(self.omega.0..=self.omega.1),
            // half-open: φ = 2π duplicates φ = 0
            phase: rng.random_range(self.phase.0..self.phase.1),
        }
    }

    pub fn sample_orbit<R: Rng>(&self, rng: &mut R) -> OrbitParams {
        OrbitParams {
            eccentricity: rng.random_range(self.eccentricity.0..=self.eccentricity.1),
            semi_major: rng.random_range(self.semi_major.0..=self.semi_major.1),
            theta: rng.random_range(self.theta.0..=self.theta.1),
        }
    }
}

/// A sampled trajectory: `n` states at `t_i = i·dt`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub dt: f64,
    pub dim: usize,
    /// Row-major `n × dim`.
    pub positions: Vec<f64>,
    /// Row-major `n × dim`; empty for 1-D trajectories.
    pub velocities: Vec<f64>,
    pub params: SourceParams,
    pub targets: Option<KeplerTargets>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.positions.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn position(&self, i: usize) -> &[f64] {
        &self.positions[i * self.dim..(i + 1) * self.dim]
    }

    pub fn velocity(&self, i: usize) -> &[f64] {
        &self.velocities[i * self.dim..(i + 1) * self.dim]
    }

    pub fn states(&self) -> Vec<Vec<f64>> {
        self.positions.chunks(self.dim).map(|c| c.to_vec()).collect()
    }

    /// Specific orbital energy `|v|²/2 - GM/|r|` at step `i` (2-D only).
    pub fn energy(&self, i: usize) -> f64 {
        let r = self.position(i);
        let v = self.velocity(i);
        0.5 * (v[0] * v[0] + v[1] * v[1]) - GM / r[0].hypot(r[1])
    }

    /// `x v_y - y v_x` at step `i` (2-D only).
    pub fn angular_momentum(&self, i: usize) -> f64 {
        let r = self.position(i);
        let v = self.velocity(i);
        r[0] * v[1] - r[1] * v[0]
    }
}

pub fn gen_sine_trajectory(params: SineParams) -> Trajectory {
    let positions = (0..N_STEPS)
        .map(|i| params.amplitude * (params.omega * i as f64 * DT + params.phase).sin())
        .collect();
    Trajectory {
        dt: DT,
        dim: 1,
        positions,
        velocities: Vec::new(),
        params: SourceParams::Sine(params),
        targets: None,
    }
}

/// A reproducible collection of trajectories.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub kind: DatasetKind,
    pub seed: u64,
    pub ranges: SamplingRanges,
    pub trajectories: Vec<Trajectory>,
}

impl Dataset {
    pub fn d_traj(&self) -> usize {
        self.trajectories.len()
    }

    /// Training tokens, one per state.
    pub fn token_count(&self) -> usize {
        self.trajectories.iter().map(Trajectory::len).sum()
    }

    pub fn dim(&self) -> usize {
        self.kind.dim()
    }
}

/// Samples `d_traj` trajectories i.i.d. from the default ranges.
pub fn build_dataset(kind: DatasetKind, d_traj: usize, seed: u64) -> Result<Dataset, DatagenError> {
    build_dataset_with(kind, d_traj, seed, SamplingRanges::default())
}

pub fn build_dataset_with(
    kind: DatasetKind,
    d_traj: usize,
    seed: u64,
    ranges: SamplingRanges,
) -> Result<Dataset, DatagenError> {
    if d_traj == 0 {
        return Err(DatagenError::Empty);
    }
    let mut rng = rng::stream(seed, Stream::Dataset);
    let trajectories = match kind {
        DatasetKind::Sine => (0..d_traj)
            .map(|_| gen_sine_trajectory(ranges.sample_sine(&mut rng)))
            .collect(),
        DatasetKind::Kepler => {
            let params: Vec<OrbitParams> = (0..d_traj).map(|_| ranges.sample_orbit(&mut rng)).collect();
            params
                .into_iter()
                .map(kepler_trajectory)
                .collect::<Result<Vec<_>, _>>()?
        }
    };
    Ok(Dataset {
        kind,
        seed,
        ranges,
        trajectories,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sine_closed_form() {
        let t = gen_sine_trajectory(SineParams {
            amplitude: 1.0,
            omega: 1.0,
            phase: 0.0,
        });
        assert_eq!(t.positions[0], 0.0);
        let t = gen_sine_trajectory(SineParams {
            amplitude: 1.0,
            omega: 1.0,
            phase: PI / 2.0,
        });
        assert_eq!(t.positions[0], 1.0);
        let t = gen_sine_trajectory(SineParams {
            amplitude: 0.5,
            omega: 2.0,
            phase: 0.0,
        });
        assert!((t.positions[1] - 0.194709).abs() < 1e-6);
        assert_eq!(t.len(), N_STEPS);
    }

    #[test]
    fn sine_bounded_by_amplitude() {
        let ds = build_dataset(DatasetKind::Sine, 200, 3).unwrap();
        for tr in &ds.trajectories {
            let SourceParams::Sine(p) = tr.params else { panic!() };
            assert!(tr.positions.iter().all(|x| x.abs() <= p.amplitude));
            assert!((0.5..=1.0).contains(&p.amplitude));
            assert!((0.5..=2.0).contains(&p.omega));
            assert!((0.0..2.0 * PI).contains(&p.phase));
        }
    }

    #[test]
    fn token_count_is_hundred_per_trajectory() {
        let ds = build_dataset(DatasetKind::Sine, 64, 0).unwrap();
        assert_eq!(ds.token_count(), 6400);
    }

    #[test]
    fn same_seed_same_dataset() {
        let a = build_dataset(DatasetKind::Kepler, 8, 11).unwrap();
        let b = build_dataset(DatasetKind::Kepler, 8, 11).unwrap();
        assert_eq!(a, b);
        let c = build_dataset(DatasetKind::Kepler, 8, 12).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn eccentricity_mean() {
        let ranges = SamplingRanges::default();
        let mut rng = rng::stream(5, Stream::Dataset);
        let n = 100_000;
        let mean: f64 = (0..n).map(|_| ranges.sample_orbit(&mut rng).eccentricity).sum::<f64>() / n as f64;
        assert!((mean - 0.4).abs() < 0.01, "mean e = {mean}");
    }

    #[test]
    fn empty_dataset_rejected() {
        assert_eq!(build_dataset(DatasetKind::Sine, 0, 0), Err(DatagenError::Empty));
    }
}
