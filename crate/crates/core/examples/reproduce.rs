//! Runs the preset sweeps behind every figure and writes the plot-data CSVs.
//!
//! ```text
//! cargo run --release --example reproduce -- OUT_DIR [experiment ...]
//! ```
//!
//! Experiments: spatial_map scaling_grid n_critical noise_sweep reg_vs_cls
//! phase_transition (default: all). `LAB_BUDGET=paper` selects the full
//! budget, `LAB_THREADS` the number of concurrent cells. Finished cells are
//! reused, so an interrupted run can simply be restarted.

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

use std::path::PathBuf;
use std::time::Instant;

use orbit_lab::experiments::{default_jobs, preset, report, run_sweep_with, Budget, Experiment};

const ALL: [Experiment; 6] = [
    Experiment::SpatialMap,
    Experiment::ScalingGrid,
    Experiment::NCritical,
    Experiment::NoiseSweep,
    Experiment::RegVsCls,
    Experiment::PhaseTransition,
];

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "runs".into()));
    let wanted: Vec<String> = args.collect();
    let budget = Budget::from_env();
    // Experiments share some cells (the c=100, σ=0 Kepler run appears in three).
    let shared: Vec<PathBuf> = ALL.iter().map(|e| out.join(e.name())).collect();
    for e in ALL {
        if !wanted.is_empty() && !wanted.iter().any(|w| w == e.name()) {
            continue;
        }
        let t = Instant::now();
        let rows = run_sweep_with(&preset(e, budget), &out.join(e.name()), default_jobs(), &shared)?;
        let failed = rows.iter().filter(|r| r.error.is_some()).count();
        println!("{:<17} {:>3} cells ({failed} failed) in {:.0}s", e.name(), rows.len(), t.elapsed().as_secs_f64());
    }
    for p in report(&out, &out.join("report"))? {
        println!("wrote {}", p.display());
    }
    Ok(())
}
