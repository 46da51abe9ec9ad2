use std::fs;

use orbit_lab::datagen::DatasetKind;
use orbit_lab::experiments::{
    fit_scaling_law, load_cell, run_cell, run_sweep, run_sweep_with, Experiment, HeadChoice, ScalingRecord, SweepSpec,
};

fn tiny_spec() -> SweepSpec {
    SweepSpec {
        experiment: Experiment::Custom,
        kind: DatasetKind::Sine,
        head: vec![HeadChoice::Cls, HeadChoice::Reg],
        vocab: vec![16, 32],
        d_traj: vec![24],
        width: vec![8],
        noise: vec![0.0, 0.1],
        ctx: vec![12],
        seeds: vec![0],
        steps: 30,
        batch: 8,
        log_every: 10,
        rollout: true,
        ..Default::default()
    }
}

#[test]
fn resumed_sweep_matches_uninterrupted_sweep() {
    let spec = tiny_spec();
    let full = tempfile::tempdir().unwrap();
    let rows = run_sweep(&spec, full.path(), 2).unwrap();
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|r| r.error.is_none()));
    let reference = fs::read(full.path().join("results.csv")).unwrap();

    // Interrupted after a subset of cells, then resumed with the full spec.
    let resumed = tempfile::tempdir().unwrap();
    let partial = SweepSpec {
        head: vec![HeadChoice::Cls],
        vocab: vec![32],
        ..spec.clone()
    };
    run_sweep(&partial, resumed.path(), 1).unwrap();
    run_sweep(&spec, resumed.path(), 1).unwrap();
    assert_eq!(fs::read(resumed.path().join("results.csv")).unwrap(), reference);

    // A lost result file is recomputed to the same row.
    let victim = &rows[1].hash;
    fs::remove_file(full.path().join("cells").join(victim).join("result.json")).unwrap();
    run_sweep(&spec, full.path(), 1).unwrap();
    assert_eq!(fs::read(full.path().join("results.csv")).unwrap(), reference);
}

#[test]
fn rerunning_a_cell_reproduces_its_metrics_bit_exactly() {
    let spec = tiny_spec();
    let dir = tempfile::tempdir().unwrap();
    run_sweep(&spec, dir.path(), 1).unwrap();
    for cell in spec.expand() {
        let stored = load_cell(dir.path(), &cell).expect("finished cell");
        let again = run_cell(&cell, None).unwrap();
        assert_eq!(stored.metrics, again, "cell {}", cell.hash());
    }
}

#[test]
fn finished_cells_are_shared_between_sweeps() {
    let root = tempfile::tempdir().unwrap();
    let (a, b) = (root.path().join("a"), root.path().join("b"));
    let first = SweepSpec {
        head: vec![HeadChoice::Reg],
        noise: vec![0.1],
        ..tiny_spec()
    };
    let rows_a = run_sweep(&first, &a, 1).unwrap();
    let second = SweepSpec {
        experiment: Experiment::NoiseSweep,
        ..first.clone()
    };
    let stamp = fs::metadata(a.join("cells").join(&rows_a[0].hash).join("result.json")).unwrap().modified().unwrap();
    let rows_b = run_sweep_with(&second, &b, 1, &[a.clone(), b.clone()]).unwrap();
    assert_eq!(rows_a[0].hash, rows_b[0].hash);
    assert_eq!(rows_a[0].rollout_mde, rows_b[0].rollout_mde);
    assert!(b.join("cells").join(&rows_b[0].hash).join("result.json").exists());
    let after = fs::metadata(a.join("cells").join(&rows_a[0].hash).join("result.json")).unwrap().modified().unwrap();
    assert_eq!(stamp, after);
}

#[test]
fn empty_grid_gives_an_empty_table() {
    let spec = SweepSpec {
        d_traj: vec![],
        ..tiny_spec()
    };
    let dir = tempfile::tempdir().unwrap();
    assert!(run_sweep(&spec, dir.path(), 1).unwrap().is_empty());
    assert!(dir.path().join("results.csv").exists());
}

#[test]
fn scaling_fit_is_scale_covariant_in_d() {
    let records: Vec<ScalingRecord> = [64.0, 128.0, 256.0, 512.0]
        .iter()
        .flat_map(|&d: &f64| {
            [64.0, 256.0, 1024.0].map(|v: f64| ScalingRecord {
                d,
                v,
                one_minus_r2: 5e-4 * d.powf(-1.15) * v.powf(1.33) * (1.0 + 0.05 * (d * v).ln().sin()),
            })
        })
        .collect();
    let base = fit_scaling_law(&records).unwrap();
    let scaled: Vec<ScalingRecord> = records
        .iter()
        .map(|r| ScalingRecord { d: r.d * 10.0, ..*r })
        .collect();
    let moved = fit_scaling_law(&scaled).unwrap();
    assert!((base.alpha_d.unwrap() - moved.alpha_d.unwrap()).abs() < 1e-10);
    assert!((base.alpha_v.unwrap() - moved.alpha_v.unwrap()).abs() < 1e-10);
    let expected_a = base.a * 10f64.powf(base.alpha_d.unwrap());
    assert!((moved.a - expected_a).abs() / expected_a < 1e-9);
}
