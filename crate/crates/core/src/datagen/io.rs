//! Dataset files.
//!
//! Binary layout (all integers and floats little-endian):
//!
//! ```text
//! magic        8 bytes  "ORBLABDS"
//! header_len   u64
//! header       header_len bytes of UTF-8 JSON
//! records      f64 values, one record per trajectory
//! ```
//!
//! The JSON header carries `kind`, `d_traj`, `seed`, `dt`, `n_steps`, `dim`,
//! the sampling `ranges`, and a `record_layout` list naming the blocks below.
//!
//! A sine record is `[A, ω, φ]` followed by `positions[n]`.
//!
//! A Kepler record is `[e, a, θ]`, `positions[n×2]`, `velocities[n×2]`, the
//! twelve orbit constants `a, b, c, e, r̄, 1/a, 1/a², 1/b, 1/b², A_x, A_y, |A|`,
//! then per step `F_x, F_y, |F|, n_x, n_y, r, r², 1/r, 1/r², 1/r³` (`n×10`).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::kepler::{KeplerTargets, StepTargets};
use super::{
    DatagenError, Dataset, DatasetKind, OrbitParams, SamplingRanges, SineParams, SourceParams, Trajectory, DT,
    N_STEPS,
};

pub const DATASET_MAGIC: &[u8; 8] = b"ORBLABDS";

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    kind: DatasetKind,
    d_traj: usize,
    seed: u64,
    dt: f64,
    n_steps: usize,
    dim: usize,
    ranges: SamplingRanges,
    record_layout: Vec<String>,
}

fn layout(kind: DatasetKind) -> Vec<String> {
    let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();
    match kind {
        DatasetKind::Sine => s(&["params[A,omega,phi]", "positions[n]"]),
        DatasetKind::Kepler => s(&[
            "params[e,a,theta]",
            "positions[n*2]",
            "velocities[n*2]",
            "constants[a,b,c,e,r_mean,inv_a,inv_a2,inv_b,inv_b2,lrl_x,lrl_y,lrl_mag]",
            "steps[n*(F_x,F_y,F_mag,n_x,n_y,r,r2,inv_r,inv_r2,inv_r3)]",
        ]),
    }
}

pub fn write_dataset(ds: &Dataset, path: &Path) -> Result<(), DatagenError> {
    let header = Header {
        kind: ds.kind,
        d_traj: ds.d_traj(),
        seed: ds.seed,
        dt: DT,
        n_steps: N_STEPS,
        dim: ds.dim(),
        ranges: ds.ranges.clone(),
        record_layout: layout(ds.kind),
    };
    let json = serde_json::to_vec(&header).map_err(|e| DatagenError::Format(e.to_string()))?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(DATASET_MAGIC)?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    let mut put = |v: f64| w.write_all(&v.to_le_bytes());
    for t in &ds.trajectories {
        match (&t.params, &t.targets) {
            (SourceParams::Sine(p), _) => {
                for v in [p.amplitude, p.omega, p.phase].into_iter().chain(t.positions.iter().copied()) {
                    put(v)?;
                }
            }
            (SourceParams::Kepler(p), Some(k)) => {
                let head = [p.eccentricity, p.semi_major, p.theta];
                for &v in head
                    .iter()
                    .chain(&t.positions)
                    .chain(&t.velocities)
                    .chain(k.constants().iter())
                {
                    put(v)?;
                }
                for s in &k.steps {
                    for v in s.to_array() {
                        put(v)?;
                    }
                }
            }
            (SourceParams::Kepler(_), None) => {
                return Err(DatagenError::Inconsistent("Kepler trajectory without targets".into()))
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Dataset, DatagenError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != DATASET_MAGIC {
        return Err(DatagenError::Format("bad magic".into()));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len)?;
    let mut json = vec![0u8; u64::from_le_bytes(len) as usize];
    r.read_exact(&mut json)?;
    let header: Header = serde_json::from_slice(&json).map_err(|e| DatagenError::Format(e.to_string()))?;
    let mut body = Vec::new();
    r.read_to_end(&mut body)?;
    if body.len() % 8 != 0 {
        return Err(DatagenError::Format("trailing bytes".into()));
    }
    let values: Vec<f64> = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();

    let n = header.n_steps;
    let record = match header.kind {
        DatasetKind::Sine => 3 + n,
        DatasetKind::Kepler => 3 + 4 * n + KeplerTargets::CONSTANT_COUNT + n * StepTargets::FIELD_COUNT,
    };
    if values.len() != record * header.d_traj {
        return Err(DatagenError::Format(format!(
            "expected {} values for {} trajectories, found {}",
            record * header.d_traj,
            header.d_traj,
            values.len()
        )));
    }
    let trajectories = values
        .chunks_exact(record)
        .map(|rec| match header.kind {
            DatasetKind::Sine => Trajectory {
                dt: header.dt,
                dim: 1,
                positions: rec[3..].to_vec(),
                velocities: Vec::new(),
                params: SourceParams::Sine(SineParams {
                    amplitude: rec[0],
                    omega: rec[1],
                    phase: rec[2],
                }),
                targets: None,
            },
            DatasetKind::Kepler => {
                let pos_end = 3 + 2 * n;
                let vel_end = pos_end + 2 * n;
                let const_end = vel_end + KeplerTargets::CONSTANT_COUNT;
                let steps = rec[const_end..]
                    .chunks_exact(StepTargets::FIELD_COUNT)
                    .map(StepTargets::from_array)
                    .collect();
                Trajectory {
                    dt: header.dt,
                    dim: 2,
                    positions: rec[3..pos_end].to_vec(),
                    velocities: rec[pos_end..vel_end].to_vec(),
                    params: SourceParams::Kepler(OrbitParams {
                        eccentricity: rec[0],
                        semi_major: rec[1],
                        theta: rec[2],
                    }),
                    targets: Some(KeplerTargets::from_parts(&rec[vel_end..const_end], steps)),
                }
            }
        })
        .collect();
    Ok(Dataset {
        kind: header.kind,
        seed: header.seed,
        ranges: header.ranges,
        trajectories,
    })
}

/// One row per (trajectory, step).
pub fn write_csv(ds: &Dataset, path: &Path) -> Result<(), DatagenError> {
    let io = |e: csv::Error| DatagenError::Io(e.to_string());
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    match ds.kind {
        DatasetKind::Sine => {
            w.write_record(["traj_id", "step", "t", "x", "amplitude", "omega", "phase"])
                .map_err(io)?;
        }
        DatasetKind::Kepler => {
            w.write_record([
                "traj_id", "step", "t", "x", "y", "vx", "vy", "fx", "fy", "f_mag", "e", "a", "theta",
            ])
            .map_err(io)?;
        }
    }
    for (id, t) in ds.trajectories.iter().enumerate() {
        for i in 0..t.len() {
            let mut row = vec![id.to_string(), i.to_string(), format!("{}", i as f64 * t.dt)];
            row.extend(t.position(i).iter().map(|v| v.to_string()));
            match (&t.params, &t.targets) {
                (SourceParams::Sine(p), _) => {
                    row.extend([p.amplitude, p.omega, p.phase].iter().map(|v| v.to_string()));
                }
                (SourceParams::Kepler(p), Some(k)) => {
                    let s = &k.steps[i];
                    row.extend(
                        t.velocity(i)
                            .iter()
                            .chain(&[s.force_x, s.force_y, s.force_mag, p.eccentricity, p.semi_major, p.theta])
                            .map(|v| v.to_string()),
                    );
                }
                (SourceParams::Kepler(_), None) => {
                    return Err(DatagenError::Inconsistent("Kepler trajectory without targets".into()))
                }
            }
            w.write_record(&row).map_err(io)?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::build_dataset;

    #[test]
    fn binary_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        for kind in [DatasetKind::Sine, DatasetKind::Kepler] {
            let ds = build_dataset(kind, 5, 9).unwrap();
            let p = dir.path().join("ds.bin");
            write_dataset(&ds, &p).unwrap();
            assert_eq!(read_dataset(&p).unwrap(), ds);
        }
    }

    #[test]
    fn truncated_file_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let ds = build_dataset(DatasetKind::Sine, 2, 1).unwrap();
        let p = dir.path().join("ds.bin");
        write_dataset(&ds, &p).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() - 8]).unwrap();
        assert!(matches!(read_dataset(&p), Err(DatagenError::Format(_))));
    }

    #[test]
    fn csv_has_one_row_per_step() {
        let dir = tempfile::tempdir().unwrap();
        let ds = build_dataset(DatasetKind::Kepler, 3, 2).unwrap();
        let p = dir.path().join("ds.csv");
        write_csv(&ds, &p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().count(), 1 + 3 * N_STEPS);
        assert!(text.starts_with("traj_id,step,t,x,y,vx,vy,fx,fy,f_mag"));
    }
}
