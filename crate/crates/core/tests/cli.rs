use std::fs;
use std::path::Path;
use std::process::Command;

fn lab(args: &[&str]) -> String {
    let out = Command::new(env!("CARGO_BIN_EXE_lab")).args(args).output().unwrap();
    let stdout = String::from_utf8_lossy(&out.stdout).into_owned();
    assert!(
        out.status.success(),
        "lab {args:?} failed:\n{stdout}\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    stdout
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn every_subcommand_runs_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let sine = d.join("sine.bin");
    let kepler = d.join("kepler.bin");
    lab(&["gen-data", "--kind", "sine", "--traj", "40", "--seed", "1", "--out", s(&sine)]);
    lab(&["gen-data", "--kind", "kepler", "--traj", "40", "--seed", "2", "--out", s(&kepler)]);
    lab(&["gen-data", "--kind", "kepler", "--traj", "3", "--out", s(&d.join("k.csv")), "--format", "csv"]);
    let csv = fs::read_to_string(d.join("k.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 3 * 100);

    let cls = d.join("cls");
    let config = d.join("train.json");
    fs::write(&config, r#"{ "head": "cls", "vocab": 32, "ctx": 12, "width": 8, "batch": 8 }"#).unwrap();
    let out = lab(&[
        "train", "--config", s(&config), "--data", s(&sine), "--steps", "20", "--log-every", "10", "--seed", "3",
        "--out", s(&cls),
    ]);
    assert!(out.contains("best spatial R²"));
    assert!(cls.join("ckpt_10.bin").exists() && cls.join("ckpt_20.bin").exists());
    let log = fs::read_to_string(cls.join("train_log.csv")).unwrap();
    assert!(log.starts_with("step,train_loss,test_loss,effective_mse,spatial_r2,rollout_mde"));

    let reg = d.join("reg");
    lab(&[
        "train", "--data", s(&kepler), "--head", "reg", "--noise", "0.1", "--ctx", "12", "--layers", "2", "--heads",
        "1", "--width", "8", "--steps", "20", "--seed", "0", "--batch", "8", "--log-every", "10", "--out", s(&reg),
    ]);

    let roll = d.join("roll.csv");
    let out = lab(&[
        "rollout", "--ckpt", s(&reg.join("ckpt_20.bin")), "--data", s(&kepler), "--condition", "50", "--horizon", "50",
        "--out", s(&roll),
    ]);
    assert!(out.contains("mean distance error"));
    let rows = fs::read_to_string(&roll).unwrap();
    assert!(rows.starts_with("traj_id,step,x_true,y_true,x_gen,y_gen,dist_err"));
    assert_eq!(rows.lines().count(), 1 + 40 * 50);

    let spatial = d.join("spatial.csv");
    lab(&["probe", "--ckpt", s(&cls.join("ckpt_20.bin")), "--data", s(&sine), "--targets", "spatial", "--out", s(&spatial)]);
    assert!(fs::read_to_string(&spatial).unwrap().contains("wte.0"));
    let newton = d.join("newton.csv");
    let out = lab(&["probe", "--ckpt", s(&reg.join("ckpt_20.bin")), "--data", s(&kepler), "--targets", "newton", "--out", s(&newton)]);
    assert!(out.contains("F "));
    let text = fs::read_to_string(&newton).unwrap();
    assert!(text.starts_with("target,site,layer,r2"));
    assert!(text.contains("best_F,"));

    let spec = d.join("spec.json");
    fs::write(
        &spec,
        r#"{ "experiment": "custom", "kind": "sine", "head": ["cls"], "vocab": [16, 32], "d_traj": [24, 48],
             "width": [8], "ctx": [12], "seeds": [0], "steps": 20, "batch": 8, "log_every": 10 }"#,
    )
    .unwrap();
    let sweep = d.join("sweep");
    let out = lab(&["sweep", "--spec", s(&spec), "--jobs", "2", "--out", s(&sweep)]);
    assert!(out.contains("4 cells, 0 failed"));
    let fit = d.join("fit.json");
    lab(&["fit-scaling", "--in", s(&sweep.join("results.csv")), "--out", s(&fit)]);
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&fit).unwrap()).unwrap();
    assert!(json["alpha_d"].is_number() && json["alpha_v"].is_number());

    let report = d.join("report");
    lab(&["report", "--in", s(d), "--out", s(&report)]);
    let all = fs::read_to_string(report.join("all_results.csv")).unwrap();
    assert_eq!(all.lines().count(), 1 + 4);
}

#[test]
fn bad_arguments_fail_cleanly() {
    let out = Command::new(env!("CARGO_BIN_EXE_lab"))
        .args(["gen-data", "--kind", "comet", "--traj", "1", "--out", "/dev/null"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    let out = Command::new(env!("CARGO_BIN_EXE_lab"))
        .args(["train", "--head", "reg"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("--data is required"));
}
