use orbit_lab::codec::TokenCodec;
use orbit_lab::datagen::{build_dataset, kepler_trajectory, DatasetKind, OrbitParams, StepTargets};
use orbit_lab::model::{ModelConfig, Site, Weights};
use orbit_lab::probing::{
    compute_probe_targets, fit_linear_probe, probe_spatial_map, probe_sweep, ProbeOptions, SweepOptions, Target,
};
use orbit_lab::rng::{stream, Stream};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn target(traj: &orbit_lab::datagen::Trajectory, i: usize, t: Target) -> f64 {
    compute_probe_targets(traj, i).unwrap().into_iter().find(|(k, _)| *k == t).unwrap().1
}

#[test]
fn input_projection_recovers_the_inputs() {
    let config = ModelConfig::regression(2, 32, 20);
    let weights = Weights::<f32>::init(&config, &mut stream(1, Stream::Init)).unwrap();
    let ds = build_dataset(DatasetKind::Kepler, 40, 8).unwrap();
    let rep = probe_sweep(&config, &weights, &ds.trajectories, &[Target::X, Target::Y], &SweepOptions::default()).unwrap();
    for t in [Target::X, Target::Y] {
        let r2 = rep
            .entries
            .iter()
            .find(|e| e.target == t && e.site == Site::embedding())
            .unwrap()
            .fit
            .r2;
        assert!((1.0 - r2).abs() < 1e-6, "{t:?}: {r2}");
        assert!(rep.best(t).unwrap().1 >= r2);
    }
}

#[test]
fn best_over_sites_grows_with_the_site_set() {
    let config = ModelConfig::regression(2, 16, 10);
    let weights = Weights::<f32>::init(&config, &mut stream(2, Stream::Init)).unwrap();
    let ds = build_dataset(DatasetKind::Kepler, 20, 8).unwrap();
    let rep = probe_sweep(&config, &weights, &ds.trajectories, &[Target::Force, Target::A], &SweepOptions::default()).unwrap();
    for t in [Target::Force, Target::A] {
        let prefix_best: Vec<f64> = Site::all(config.n_layer)
            .iter()
            .scan(f64::NEG_INFINITY, |best, s| {
                let r2 = rep.entries.iter().find(|e| e.target == t && e.site == *s).unwrap().fit.r2;
                *best = best.max(r2);
                Some(*best)
            })
            .collect();
        assert!(prefix_best.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(rep.best(t).unwrap().1, *prefix_best.last().unwrap());
    }
}

#[test]
fn fresh_embeddings_sit_at_the_noise_baseline() {
    let config = ModelConfig::classification(1, 7000, 1.0, 768, 8);
    let weights = Weights::<f32>::init(&config, &mut stream(0, Stream::Init)).unwrap();
    let codec = TokenCodec::new(1.0, 7000).unwrap();
    let r2 = probe_spatial_map(weights.get("wte.0").unwrap(), &codec, ProbeOptions::default()).unwrap();
    assert!(r2 < 0.15, "{r2}");
    assert!(r2 > 0.05, "{r2}");
}

#[test]
fn circular_unit_orbit_targets() {
    let t = kepler_trajectory(OrbitParams {
        eccentricity: 0.0,
        semi_major: 1.0,
        theta: 0.7,
    })
    .unwrap();
    for i in [0, 17, 63, 99] {
        assert!((target(&t, i, Target::Force) - 1.0).abs() < 1e-8);
        assert!((target(&t, i, Target::R) - 1.0).abs() < 1e-8);
        assert!((target(&t, i, Target::InvR3) - 1.0).abs() < 1e-8);
        assert!(target(&t, i, Target::LrlX).abs() < 1e-8);
        assert!(target(&t, i, Target::LrlY).abs() < 1e-8);
    }
}

#[test]
fn half_eccentricity_minor_axis() {
    let t = kepler_trajectory(OrbitParams {
        eccentricity: 0.5,
        semi_major: 1.0,
        theta: 0.0,
    })
    .unwrap();
    for i in 0..t.len() {
        assert!((target(&t, i, Target::B) - 0.866025).abs() < 1e-6);
    }
}

#[test]
fn radial_unit_vector() {
    let s = StepTargets::at(&[0.0, 2.0]).unwrap();
    assert!(s.n_x.abs() < 1e-15);
    assert!((s.n_y - 1.0).abs() < 1e-15);
}

fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn r2_invariant_under_affine_feature_maps(seed in any::<u64>(), cols in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows = 60;
        let x = random_matrix(rows, cols, &mut rng);
        let y: Vec<f64> = (0..rows).map(|r| x[r * cols] * 0.7 + rng.sample::<f64, _>(StandardNormal)).collect();
        // Diagonally dominant, hence invertible.
        let mut m = random_matrix(cols, cols, &mut rng);
        for i in 0..cols {
            m[i * cols + i] += 3.0 * cols as f64;
        }
        let shift: Vec<f64> = (0..cols).map(|_| rng.random_range(-5.0..5.0)).collect();
        let mut z = vec![0.0; rows * cols];
        for r in 0..rows {
            for j in 0..cols {
                z[r * cols + j] = (0..cols).map(|k| x[r * cols + k] * m[k * cols + j]).sum::<f64>() + shift[j];
            }
        }
        let opts = ProbeOptions { lambda: 0.0, intercept: true };
        let a = fit_linear_probe(&x, rows, cols, &y, opts).unwrap().r2;
        let b = fit_linear_probe(&z, rows, cols, &y, opts).unwrap().r2;
        prop_assert!((a - b).abs() < 1e-9, "{a} vs {b}");
    }

    #[test]
    fn joint_row_permutation_leaves_r2_unchanged(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (v, n) = (64, 8);
        let table = random_matrix(v, n, &mut rng);
        let codec = TokenCodec::new(1.0, v).unwrap();
        let y = codec.centers();
        let mut perm: Vec<usize> = (0..v).collect();
        perm.shuffle(&mut rng);
        let pt: Vec<f64> = perm.iter().flat_map(|&p| table[p * n..(p + 1) * n].iter().copied()).collect();
        let py: Vec<f64> = perm.iter().map(|&p| y[p]).collect();
        let opts = ProbeOptions::default();
        let a = fit_linear_probe(&table, v, n, &y, opts).unwrap().r2;
        let b = fit_linear_probe(&pt, v, n, &py, opts).unwrap().r2;
        prop_assert!((a - b).abs() < 1e-10);
    }
}
