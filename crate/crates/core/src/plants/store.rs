//! Dataset directories: `manifest.json` plus one text file per trajectory.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::scaler::Scaler;
use crate::data::{parse_trajectory_text, trajectory_text, Dataset};
use crate::error::{Error, Result};

const FORMAT: &str = "qlpv-dataset/1";
const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format: String,
    pub plant: String,
    pub seed: u64,
    pub n_u: usize,
    pub n_y: usize,
    pub horizon: usize,
    pub count: usize,
    pub violations: Vec<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scaler: Option<Scaler>,
    pub fingerprint: String,
}

fn file_name(i: usize) -> String {
    format!("traj_{i:05}.txt")
}

/// Writes `data` under `dir` (created if missing) and returns the manifest.
pub fn save_dataset(dir: &Path, data: &Dataset, plant: &str, seed: u64, scaler: Option<&Scaler>) -> Result<DatasetManifest> {
    std::fs::create_dir_all(dir)?;
    let (n_u, n_y, horizon) = match data.trajectories.first() {
        Some(t) => (t.n_u, t.n_y, data.horizon()?),
        None => (0, 0, 0),
    };
    for (i, t) in data.iter().enumerate() {
        std::fs::write(dir.join(file_name(i)), trajectory_text(t))?;
    }
    let manifest = DatasetManifest {
        format: FORMAT.into(),
        plant: plant.into(),
        seed,
        n_u,
        n_y,
        horizon,
        count: data.len(),
        violations: data.violations.clone(),
        scaler: scaler.cloned(),
        fingerprint: data.fingerprint(),
    };
    std::fs::write(dir.join(MANIFEST), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

/// Reads a dataset directory and checks its fingerprint.
pub fn load_dataset(dir: &Path) -> Result<(Dataset, DatasetManifest)> {
    let manifest: DatasetManifest = serde_json::from_str(&std::fs::read_to_string(dir.join(MANIFEST))?)?;
    if manifest.format != FORMAT {
        return Err(Error::Parse(format!("unknown dataset format '{}'", manifest.format)));
    }
    if manifest.violations.len() != manifest.count {
        return Err(Error::Parse("manifest violation flags do not match the count".into()));
    }
    let mut data = Dataset::new();
    for i in 0..manifest.count {
        let path = dir.join(file_name(i));
        let t = parse_trajectory_text(&std::fs::read_to_string(&path)?, &path.display().to_string())?;
        if t.n_u != manifest.n_u || t.n_y != manifest.n_y || t.horizon() != manifest.horizon {
            return Err(Error::Parse(format!("{} does not match the manifest dimensions", path.display())));
        }
        data.push(t, manifest.violations[i]);
    }
    let fp = data.fingerprint();
    if fp != manifest.fingerprint {
        return Err(Error::Parse(format!("dataset fingerprint mismatch: manifest {}, content {fp}", manifest.fingerprint)));
    }
    Ok((data, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::Trajectory;
    use crate::test_util::random_input;

    #[test]
    fn directory_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut d = Dataset::new();
        for i in 0..3 {
            d.push(Trajectory::new(2, 2, random_input(4, 2, i), random_input(4, 2, 10 + i)).unwrap(), i == 1);
        }
        let m = save_dataset(dir.path(), &d, "oscillator", 7, None).unwrap();
        let (back, m2) = load_dataset(dir.path()).unwrap();
        assert_eq!(back, d);
        assert_eq!(m, m2);
        std::fs::write(dir.path().join(file_name(2)), "u\n0 0\n0 0\n0 0\n0 0\ny\n0 0\n0 0\n0 0\n0 0\n").unwrap();
        assert!(load_dataset(dir.path()).is_err());
    }
}
