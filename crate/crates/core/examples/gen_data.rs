//! Samples sine and Kepler datasets, reports their conservation checks and
//! writes them to disk.
//!
//! ```text
//! cargo run --release --example gen_data -- [OUT_DIR] [TRAJECTORIES]
//! ```

use std::path::PathBuf;

use orbit_lab::datagen::{build_dataset, write_csv, write_dataset, DatasetKind, SourceParams};
use orbit_lab::probing::{compute_probe_targets, Target};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "data".into()));
    let n: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(1000);
    std::fs::create_dir_all(&out)?;

    let sine = build_dataset(DatasetKind::Sine, n, 0)?;
    write_dataset(&sine, &out.join("sine.bin"))?;
    println!("sine: {} trajectories, {} tokens", sine.d_traj(), sine.token_count());

    let kepler = build_dataset(DatasetKind::Kepler, n, 0)?;
    write_dataset(&kepler, &out.join("kepler.bin"))?;
    write_csv(&kepler, &out.join("kepler.csv"))?;
    let (mut de, mut dl) = (0.0f64, 0.0f64);
    for t in &kepler.trajectories {
        for i in 0..t.len() {
            de = de.max((t.energy(i) - t.energy(0)).abs());
            dl = dl.max((t.angular_momentum(i) - t.angular_momentum(0)).abs());
        }
    }
    println!("kepler: {} trajectories, max energy drift {de:.1e}, max angular-momentum drift {dl:.1e}", n);

    let t = &kepler.trajectories[0];
    if let SourceParams::Kepler(p) = t.params {
        println!("first orbit: e = {:.3}, a = {:.3}, θ = {:.3}", p.eccentricity, p.semi_major, p.theta);
    }
    for (target, value) in compute_probe_targets(t, 10)? {
        if matches!(target, Target::Force | Target::A | Target::B | Target::LrlMag) {
            println!("  {:<6} {value:.6}", target.name());
        }
    }
    println!("wrote {}", out.display());
    Ok(())
}
