//! Trains Kepler regression models at a short and a long context and probes
//! every activation site for Newtonian and Keplerian quantities.
//!
//! ```text
//! cargo run --release --example probe_world_model -- [STEPS]
//! ```

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

use orbit_lab::datagen::{build_dataset, DatasetKind};
use orbit_lab::model::ModelConfig;
use orbit_lab::probing::{probe_sweep, SweepOptions, Target};
use orbit_lab::training::{train, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let steps: u64 = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(1500);
    let ds = build_dataset(DatasetKind::Kepler, 4000, 1)?;
    let probe_set = build_dataset(DatasetKind::Kepler, 512, 7)?;
    for ctx in [2, 100] {
        let mut cfg = TrainConfig::new(steps, 0);
        cfg.batch = 32;
        cfg.log_every = steps;
        let trained = train(&ds, &ModelConfig::regression(2, 64, ctx), &cfg, None)?;
        let rep = probe_sweep(&trained.config, &trained.weights, &probe_set.trajectories, &Target::all(), &SweepOptions::default())?;
        println!("context {ctx}: {} probe rows", rep.samples);
        for t in [Target::Force, Target::ForceX, Target::A, Target::B, Target::LrlX, Target::E] {
            if let Some((site, r2)) = rep.best(t) {
                println!("  {:<4} best R² {r2:.4} at {site}", t.name());
            }
        }
        println!(
            "  Newtonian score {:.4}, Keplerian score {:.4}",
            rep.newtonian_score().unwrap_or(f64::NAN),
            rep.keplerian_score().unwrap_or(f64::NAN)
        );
    }
    Ok(())
}
