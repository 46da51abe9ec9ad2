//! Kepler regression with and without context noise, compared on
//! autoregressive rollouts (50 conditioning states, 50 generated).
//!
//! ```text
//! cargo run --release --example noisy_context -- [STEPS] [OUT_DIR]
//! ```

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

use std::path::PathBuf;

use orbit_lab::datagen::{build_dataset, DatasetKind};
use orbit_lab::eval::{rollout_batch, summarize, write_rollout_csv, CONDITION, HORIZON};
use orbit_lab::model::ModelConfig;
use orbit_lab::training::{train, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let steps: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(800);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "ncl".into()));
    std::fs::create_dir_all(&out)?;
    let ds = build_dataset(DatasetKind::Kepler, 2000, 1)?;
    let held_out = build_dataset(DatasetKind::Kepler, 64, 99)?;
    let trajs: Vec<&[f64]> = held_out.trajectories.iter().map(|t| t.positions.as_slice()).collect();

    for sigma in [0.0, 0.1, 1.0] {
        let mut cfg = TrainConfig::new(steps, 0);
        cfg.batch = 32;
        cfg.log_every = steps;
        cfg.noise = sigma;
        let trained = train(&ds, &ModelConfig::regression(2, 64, 100), &cfg, None)?;
        let results = rollout_batch(&trained.predictor(), &trajs, CONDITION, HORIZON)?;
        let s = summarize(&results);
        let c = &s.horizon_curve;
        println!(
            "σ = {sigma:<4} mean distance error {:.4}  (step 1 {:.4}, step 25 {:.4}, step 50 {:.4})",
            s.mean_distance_error, c[0], c[24], c[49]
        );
        write_rollout_csv(&out.join(format!("rollout_sigma_{sigma}.csv")), &results[..8])?;
    }
    println!("rollout CSVs in {}", out.display());
    Ok(())
}
