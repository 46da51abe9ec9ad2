//! Runs a small vocabulary × data grid of sine models and fits
//! `1 - R² ≈ A · D^(-α_D) · V^(α_V)` to the best spatial-map R² of each cell.
//! Given a `results.csv`, fits that instead.
//!
//! ```text
//! cargo run --release --example scaling_fit -- [RESULTS_CSV]
//! ```

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

use orbit_lab::datagen::DatasetKind;
use orbit_lab::experiments::{
    default_jobs, fit_scaling_law, read_results, run_sweep, scaling_records, Experiment, HeadChoice, SweepSpec,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let rows = match std::env::args().nth(1) {
        Some(path) => read_results(path.as_ref())?,
        None => {
            let spec = SweepSpec {
                experiment: Experiment::ScalingGrid,
                kind: DatasetKind::Sine,
                head: vec![HeadChoice::Cls],
                vocab: vec![64, 256, 1024],
                d_traj: vec![64, 256, 1024],
                steps: 600,
                batch: 32,
                log_every: 100,
                ..Default::default()
            };
            run_sweep(&spec, "scaling_fit_runs".as_ref(), default_jobs())?
        }
    };
    for r in scaling_records(&rows) {
        println!("D = {:>5}  V = {:>5}  1 - R² = {:.4}", r.d, r.v, r.one_minus_r2);
    }
    let fit = fit_scaling_law(&scaling_records(&rows))?;
    println!(
        "A = {:.3e}, α_D = {:.3}, α_V = {:.3}, R²_fit = {:.3}",
        fit.a,
        fit.alpha_d.unwrap_or(f64::NAN),
        fit.alpha_v.unwrap_or(f64::NAN),
        fit.r2_fit
    );
    Ok(())
}
