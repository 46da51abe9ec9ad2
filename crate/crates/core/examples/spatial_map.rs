//! Trains sine-wave next-token models at two vocabulary sizes and tracks how
//! linearly the token embeddings encode position (the spatial map).
//!
//! ```text
//! cargo run --release --example spatial_map -- [STEPS]
//! ```

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

use orbit_lab::codec::SINE_HALF_RANGE;
use orbit_lab::datagen::{build_dataset, DatasetKind};
use orbit_lab::model::ModelConfig;
use orbit_lab::training::{train, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let steps: u64 = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(600);
    let ds = build_dataset(DatasetKind::Sine, 2000, 1)?;
    for vocab in [128, 2048] {
        let model = ModelConfig::classification(1, vocab, SINE_HALF_RANGE, 32, 100);
        let mut cfg = TrainConfig::new(steps, 0);
        cfg.batch = 32;
        cfg.log_every = (steps / 6).max(1);
        let out = train(&ds, &model, &cfg, None)?;
        println!("V = {vocab}");
        for r in &out.log.records {
            println!(
                "  step {:>5}  test loss {:.4}  effective MSE {:.2e}  spatial R² {:.4}",
                r.step,
                r.test_loss,
                r.effective_mse.unwrap_or(f64::NAN),
                r.spatial_r2.unwrap_or(f64::NAN)
            );
        }
        println!("  best spatial R² {:.4}", out.best_spatial_r2().unwrap_or(f64::NAN));
    }
    Ok(())
}
