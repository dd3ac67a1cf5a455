//! Trajectory directories: `manifest.json`, `states/NNNNNN.bin` and
//! `scalars.csv`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::integrate::Trajectory;
use crate::error::{Error, Result};
use crate::measure::io::{load_binary, save_binary};
use crate::measure::{psi2_norm, second_moment};

pub const PSI2_TOL: f64 = 1e-10;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScalarRow {
    pub t: f64,
    pub energy: f64,
    pub grad_norm: f64,
    pub psi2_norm: f64,
    pub second_moment: f64,
}

pub fn scalar_rows(traj: &Trajectory) -> Vec<ScalarRow> {
    traj.times
        .iter()
        .enumerate()
        .map(|(k, &t)| ScalarRow {
            t,
            energy: traj.energies[k],
            grad_norm: traj.grad_norms[k],
            psi2_norm: psi2_norm(&traj.states[k], PSI2_TOL),
            second_moment: second_moment(&traj.states[k]),
        })
        .collect()
}

/// Writes the trajectory under `dir`; `manifest` is stored verbatim as
/// `manifest.json`.
pub fn save_trajectory(dir: &Path, traj: &Trajectory, manifest: &serde_json::Value) -> Result<()> {
    let states = dir.join("states");
    fs::create_dir_all(&states)?;
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(manifest)?)?;
    for (k, s) in traj.states.iter().enumerate() {
        save_binary(s, &states.join(format!("{k:06}.bin")))?;
    }
    let mut w = csv::Writer::from_path(dir.join("scalars.csv"))?;
    for row in scalar_rows(traj) {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_scalars(dir: &Path) -> Result<Vec<ScalarRow>> {
    let mut r = csv::Reader::from_path(dir.join("scalars.csv"))?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

pub fn load_states(dir: &Path) -> Result<Vec<crate::measure::Ensemble>> {
    let mut paths: Vec<_> = fs::read_dir(dir.join("states"))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "bin"))
        .collect();
    paths.sort();
    paths.iter().map(|p| load_binary(p)).collect()
}
