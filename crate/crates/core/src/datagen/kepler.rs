use serde::{Deserialize, Serialize};

use super::ode::{dopri5, Tolerances};
use super::{DatagenError, OrbitParams, SourceParams, Trajectory, DT, GM, N_STEPS};

/// Tolerance for the conservation cross-check of the Laplace–Runge–Lenz vector.
const LRL_TOL: f64 = 1e-6;

/// Gravitational acceleration on a unit-mass body.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Force {
    pub x: f64,
    pub y: f64,
    pub magnitude: f64,
}

/// `F = -GM r / |r|³`.
pub fn force_at(position: [f64; 2]) -> Result<Force, DatagenError> {
    let r = position[0].hypot(position[1]);
    if r == 0.0 {
        return Err(DatagenError::ZeroRadius);
    }
    let r3 = r * r * r;
    Ok(Force {
        x: -GM * position[0] / r3,
        y: -GM * position[1] / r3,
        magnitude: GM / (r * r),
    })
}

/// Position and velocity at perihelion, rotated by `theta`.
pub fn perihelion_state(params: OrbitParams) -> Result<([f64; 2], [f64; 2]), DatagenError> {
    let OrbitParams {
        eccentricity: e,
        semi_major: a,
        theta,
    } = params;
    if !(0.0..1.0).contains(&e) {
        return Err(DatagenError::Unbound(e));
    }
    let rp = a * (1.0 - e);
    let vp = (GM * (1.0 + e) / rp).sqrt();
    let (s, c) = theta.sin_cos();
    Ok(([rp * c, rp * s], [-vp * s, vp * c]))
}

/// Integrates `r'' = -GM r/|r|³` and samples `N_STEPS` states `DT` apart.
pub fn integrate_orbit(
    position: [f64; 2],
    velocity: [f64; 2],
    params: OrbitParams,
    tol: Tolerances,
) -> Result<Trajectory, DatagenError> {
    if position[0] == 0.0 && position[1] == 0.0 {
        return Err(DatagenError::ZeroRadius);
    }
    let times: Vec<f64> = (0..N_STEPS).map(|i| i as f64 * DT).collect();
    let states = dopri5(
        |_, y: &[f64; 4]| {
            let r = y[0].hypot(y[1]);
            let r3 = r * r * r;
            [y[2], y[3], -GM * y[0] / r3, -GM * y[1] / r3]
        },
        [position[0], position[1], velocity[0], velocity[1]],
        &times,
        tol,
    )?;
    let mut positions = Vec::with_capacity(2 * N_STEPS);
    let mut velocities = Vec::with_capacity(2 * N_STEPS);
    for s in &states {
        positions.extend_from_slice(&s[..2]);
        velocities.extend_from_slice(&s[2..]);
    }
    Ok(Trajectory {
        dt: DT,
        dim: 2,
        positions,
        velocities,
        params: SourceParams::Kepler(params),
        targets: None,
    })
}

/// Per-step Newtonian quantities.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepTargets {
    pub force_x: f64,
    pub force_y: f64,
    pub force_mag: f64,
    pub n_x: f64,
    pub n_y: f64,
    pub r: f64,
    pub r2: f64,
    pub inv_r: f64,
    pub inv_r2: f64,
    pub inv_r3: f64,
}

impl StepTargets {
    pub fn at(position: &[f64]) -> Result<StepTargets, DatagenError> {
        let f = force_at([position[0], position[1]])?;
        let r = position[0].hypot(position[1]);
        Ok(StepTargets {
            force_x: f.x,
            force_y: f.y,
            force_mag: f.magnitude,
            n_x: position[0] / r,
            n_y: position[1] / r,
            r,
            r2: r * r,
            inv_r: 1.0 / r,
            inv_r2: 1.0 / (r * r),
            inv_r3: 1.0 / (r * r * r),
        })
    }

    pub const FIELD_COUNT: usize = 10;

    pub fn to_array(&self) -> [f64; Self::FIELD_COUNT] {
        [
            self.force_x,
            self.force_y,
            self.force_mag,
            self.n_x,
            self.n_y,
            self.r,
            self.r2,
            self.inv_r,
            self.inv_r2,
            self.inv_r3,
        ]
    }

    pub fn from_array(v: &[f64]) -> StepTargets {
        StepTargets {
            force_x: v[0],
            force_y: v[1],
            force_mag: v[2],
            n_x: v[3],
            n_y: v[4],
            r: v[5],
            r2: v[6],
            inv_r: v[7],
            inv_r2: v[8],
            inv_r3: v[9],
        }
    }
}

/// Orbit geometry plus per-step Newtonian quantities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KeplerTargets {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub e: f64,
    pub mean_radius: f64,
    pub inv_a: f64,
    pub inv_a2: f64,
    pub inv_b: f64,
    pub inv_b2: f64,
    pub lrl_x: f64,
    pub lrl_y: f64,
    pub lrl_mag: f64,
    pub steps: Vec<StepTargets>,
}

impl KeplerTargets {
    pub const CONSTANT_COUNT: usize = 12;

    pub fn constants(&self) -> [f64; Self::CONSTANT_COUNT] {
        [
            self.a,
            self.b,
            self.c,
            self.e,
            self.mean_radius,
            self.inv_a,
            self.inv_a2,
            self.inv_b,
            self.inv_b2,
            self.lrl_x,
            self.lrl_y,
            self.lrl_mag,
        ]
    }

    pub fn from_parts(c: &[f64], steps: Vec<StepTargets>) -> KeplerTargets {
        KeplerTargets {
            a: c[0],
            b: c[1],
            c: c[2],
            e: c[3],
            mean_radius: c[4],
            inv_a: c[5],
            inv_a2: c[6],
            inv_b: c[7],
            inv_b2: c[8],
            lrl_x: c[9],
            lrl_y: c[10],
            lrl_mag: c[11],
            steps,
        }
    }
}

/// Laplace–Runge–Lenz vector `v × L - GM r̂` of one state.
pub fn lrl_vector(r: &[f64], v: &[f64]) -> [f64; 2] {
    let lz = r[0] * v[1] - r[1] * v[0];
    let rn = r[0].hypot(r[1]);
    [lz * v[1] - GM * r[0] / rn, -lz * v[0] - GM * r[1] / rn]
}

/// Analytic orbit geometry, with the LRL vector taken from the trajectory and
/// checked for conservation over every state.
pub fn ellipse_observables(params: OrbitParams, trajectory: &Trajectory) -> Result<KeplerTargets, DatagenError> {
    let OrbitParams {
        eccentricity: e,
        semi_major: a,
        ..
    } = params;
    if !(0.0..1.0).contains(&e) {
        return Err(DatagenError::Unbound(e));
    }
    if trajectory.dim != 2 || trajectory.velocities.len() != trajectory.positions.len() {
        return Err(DatagenError::Inconsistent("ellipse observables need a 2-D trajectory with velocities".into()));
    }
    if trajectory.params != SourceParams::Kepler(params) {
        return Err(DatagenError::Inconsistent("trajectory was generated from different orbit parameters".into()));
    }
    let b = a * (1.0 - e * e).sqrt();
    let c = (a * a - b * b).max(0.0).sqrt();

    let lrl0 = lrl_vector(trajectory.position(0), trajectory.velocity(0));
    for i in 1..trajectory.len() {
        let l = lrl_vector(trajectory.position(i), trajectory.velocity(i));
        if (l[0] - lrl0[0]).abs() > LRL_TOL || (l[1] - lrl0[1]).abs() > LRL_TOL {
            return Err(DatagenError::Inconsistent(format!(
                "LRL vector drifts at step {i}: {l:?} vs {lrl0:?}"
            )));
        }
    }
    let lrl_mag = lrl0[0].hypot(lrl0[1]);
    if (lrl_mag - GM * e).abs() > LRL_TOL {
        return Err(DatagenError::Inconsistent(format!("|A| = {lrl_mag} but GM·e = {}", GM * e)));
    }
    let steps = (0..trajectory.len())
        .map(|i| StepTargets::at(trajectory.position(i)))
        .collect::<Result<Vec<_>, _>>()?;

    Ok(KeplerTargets {
        a,
        b,
        c,
        e,
        mean_radius: (a * b).sqrt(),
        inv_a: 1.0 / a,
        inv_a2: 1.0 / (a * a),
        inv_b: 1.0 / b,
        inv_b2: 1.0 / (b * b),
        lrl_x: lrl0[0],
        lrl_y: lrl0[1],
        lrl_mag,
        steps,
    })
}

/// Perihelion start, integration, and observables in one call.
pub fn kepler_trajectory(params: OrbitParams) -> Result<Trajectory, DatagenError> {
    let (r0, v0) = perihelion_state(params)?;
    let mut traj = integrate_orbit(r0, v0, params, Tolerances::default())?;
    traj.targets = Some(ellipse_observables(params, &traj)?);
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn orbit(e: f64, a: f64, theta: f64) -> OrbitParams {
        OrbitParams {
            eccentricity: e,
            semi_major: a,
            theta,
        }
    }

    fn close(a: [f64; 2], b: [f64; 2], tol: f64) -> bool {
        (a[0] - b[0]).abs() < tol && (a[1] - b[1]).abs() < tol
    }

    #[test]
    fn perihelion_examples() {
        let (r, v) = perihelion_state(orbit(0.0, 1.0, 0.0)).unwrap();
        assert!(close(r, [1.0, 0.0], 1e-15) && close(v, [0.0, 1.0], 1e-15));
        let (r, v) = perihelion_state(orbit(0.5, 1.0, 0.0)).unwrap();
        assert!(close(r, [0.5, 0.0], 1e-15) && close(v, [0.0, 3f64.sqrt()], 1e-15));
        let (r, v) = perihelion_state(orbit(0.0, 1.0, PI / 2.0)).unwrap();
        assert!(close(r, [0.0, 1.0], 1e-15) && close(v, [-1.0, 0.0], 1e-15));
        assert_eq!(perihelion_state(orbit(1.0, 1.0, 0.0)), Err(DatagenError::Unbound(1.0)));
    }

    #[test]
    fn force_examples() {
        let f = force_at([1.0, 0.0]).unwrap();
        assert_eq!((f.x, f.y, f.magnitude), (-1.0, 0.0, 1.0));
        let f = force_at([0.0, 2.0]).unwrap();
        assert!(f.x.abs() < 1e-18 && (f.y + 0.25).abs() < 1e-15);
        let f = force_at([0.3, -1.7]).unwrap();
        assert!((f.magnitude * (0.3f64.powi(2) + 1.7f64.powi(2)) - GM).abs() < 1e-14);
        assert_eq!(force_at([0.0, 0.0]), Err(DatagenError::ZeroRadius));
    }

    #[test]
    fn circular_orbit_keeps_unit_radius() {
        let t = kepler_trajectory(orbit(0.0, 1.0, 0.3)).unwrap();
        for i in 0..t.len() {
            let r = t.position(i);
            assert!((r[0].hypot(r[1]) - 1.0).abs() < 1e-6);
        }
        let k = t.targets.unwrap();
        assert!(k.lrl_x.abs() < 1e-6 && k.lrl_y.abs() < 1e-6);
        assert_eq!((k.b, k.c), (1.0, 0.0));
    }

    #[test]
    fn observables_for_half_eccentricity() {
        let k = kepler_trajectory(orbit(0.5, 1.0, 0.0)).unwrap().targets.unwrap();
        assert!((k.b - 0.75f64.sqrt()).abs() < 1e-12);
        assert!((k.c - 0.5).abs() < 1e-12);
        assert!((k.mean_radius - 0.930605).abs() < 1e-6);
        assert!((k.lrl_mag - 0.5).abs() < 1e-6);
        assert!((k.e - k.c / k.a).abs() < 1e-12);
    }

    #[test]
    fn mismatched_metadata_rejected() {
        let t = kepler_trajectory(orbit(0.2, 1.0, 0.0)).unwrap();
        assert!(matches!(
            ellipse_observables(orbit(0.3, 1.0, 0.0), &t),
            Err(DatagenError::Inconsistent(_))
        ));
    }
}
