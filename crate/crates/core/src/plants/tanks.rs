//! Cascaded-tanks benchmark: measured data only, two-column `u,y` files.

use std::path::Path;

use super::scaler::{ChannelMap, Scaler};
use crate::error::{Error, Result};
use crate::io::{fmt_f64, parse_f64, sha256_hex};
use crate::sim::Trajectory;

pub const TANKS_LENGTH: usize = 1024;
pub const TRAIN_FILE: &str = "train.csv";
pub const TEST_FILE: &str = "test.csv";

#[derive(Debug, Clone, PartialEq)]
pub struct TanksData {
    /// Scaled training trajectory.
    pub train: Trajectory,
    /// Scaled test trajectory.
    pub test: Trajectory,
    /// Fitted on the raw training signal.
    pub scaler: Scaler,
    /// SHA-256 of the raw files, train then test.
    pub checksum: String,
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::Parse(format!("{}: {e}", path.display()))
}

/// Reads one `u,y` file; returns `(u, y)` in physical units.
pub fn read_signal(path: &Path) -> Result<(Vec<f64>, Vec<f64>, Vec<u8>)> {
    let raw = std::fs::read(path)?;
    let mut rd = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(raw.as_slice());
    let headers = rd.headers().map_err(|e| csv_err(path, e))?.clone();
    if headers.iter().collect::<Vec<_>>() != ["u", "y"] {
        return Err(Error::Parse(format!("{}: expected header 'u,y'", path.display())));
    }
    let (mut u, mut y) = (Vec::new(), Vec::new());
    for (i, rec) in rd.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        if rec.len() != 2 {
            return Err(Error::Parse(format!("{}: row {} has {} columns", path.display(), i + 1, rec.len())));
        }
        let ctx = format!("{} row {}", path.display(), i + 1);
        u.push(parse_f64(&rec[0], &ctx)?);
        y.push(parse_f64(&rec[1], &ctx)?);
    }
    if u.len() != TANKS_LENGTH {
        return Err(Error::Invalid(format!(
            "{}: expected {TANKS_LENGTH} rows, found {}",
            path.display(),
            u.len()
        )));
    }
    Ok((u, y, raw))
}

pub fn write_signal(path: &Path, u: &[f64], y: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(["u", "y"]).map_err(|e| csv_err(path, e))?;
    for (a, b) in u.iter().zip(y) {
        w.write_record([fmt_f64(*a), fmt_f64(*b)]).map_err(|e| csv_err(path, e))?;
    }
    w.flush()?;
    Ok(())
}

/// Loads `train.csv` and `test.csv` from `dir` and scales both with the
/// ranges of the training signal.
pub fn tanks_load(dir: &Path) -> Result<TanksData> {
    let (u_tr, y_tr, raw_tr) = read_signal(&dir.join(TRAIN_FILE))?;
    let (u_te, y_te, raw_te) = read_signal(&dir.join(TEST_FILE))?;
    let mut raw = raw_tr;
    raw.extend_from_slice(&raw_te);
    let checksum = sha256_hex(&raw);
    log::info!("cascaded tanks data checksum {checksum}");
    let scaler = Scaler {
        input: ChannelMap::range_fit(&[&u_tr], 1)?,
        output: ChannelMap::range_fit(&[&y_tr], 1)?,
    };
    let traj = |u: &[f64], y: &[f64]| Trajectory::new(1, 1, scaler.input.scale(u), scaler.output.scale(y));
    Ok(TanksData {
        train: traj(&u_tr, &y_tr)?,
        test: traj(&u_te, &y_te)?,
        scaler: scaler.clone(),
        checksum,
    })
}

/// Converts the benchmark's combined CSV (columns `uEst, uVal, yEst, yVal`,
/// extra columns ignored) into the two-file layout under `out_dir`.
pub fn import_benchmark_csv(src: &Path, out_dir: &Path) -> Result<()> {
    let mut rd = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(src).map_err(|e| csv_err(src, e))?;
    let headers = rd.headers().map_err(|e| csv_err(src, e))?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.eq_ignore_ascii_case(name))
            .ok_or_else(|| Error::Parse(format!("{}: missing column '{name}'", src.display())))
    };
    let idx = [col("uEst")?, col("uVal")?, col("yEst")?, col("yVal")?];
    let mut cols: [Vec<f64>; 4] = Default::default();
    for (i, rec) in rd.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(src, e))?;
        for (k, &c) in idx.iter().enumerate() {
            let field = rec.get(c).ok_or_else(|| Error::Parse(format!("{}: short row {}", src.display(), i + 1)))?;
            cols[k].push(parse_f64(field, &format!("{} row {}", src.display(), i + 1))?);
        }
    }
    if cols[0].len() != TANKS_LENGTH {
        return Err(Error::Invalid(format!("{}: expected {TANKS_LENGTH} rows, found {}", src.display(), cols[0].len())));
    }
    std::fs::create_dir_all(out_dir)?;
    write_signal(&out_dir.join(TRAIN_FILE), &cols[0], &cols[2])?;
    write_signal(&out_dir.join(TEST_FILE), &cols[1], &cols[3])?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::test_util::random_input;

    fn synthetic(dir: &Path, n: usize) -> (Vec<f64>, Vec<f64>) {
        let u: Vec<f64> = random_input(n, 1, 1).iter().map(|v| 5.0 + 3.0 * v).collect();
        let y: Vec<f64> = random_input(n, 1, 2).iter().map(|v| 7.0 * v.powi(3)).collect();
        write_signal(&dir.join(TRAIN_FILE), &u, &y).unwrap();
        write_signal(&dir.join(TEST_FILE), &y, &u).unwrap();
        (u, y)
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let (u, y) = synthetic(dir.path(), TANKS_LENGTH);
        let (u2, y2, _) = read_signal(&dir.path().join(TRAIN_FILE)).unwrap();
        assert_eq!(u, u2);
        assert_eq!(y, y2);
        let data = tanks_load(dir.path()).unwrap();
        assert_eq!(data.train.horizon(), TANKS_LENGTH);
        assert!(data.train.u.iter().chain(&data.train.y).all(|v| (-1.0 - 1e-15..=1.0 + 1e-15).contains(v)));
        assert_eq!(data.scaler.input.unscale(&data.train.u).len(), TANKS_LENGTH);
        assert_eq!(data.checksum.len(), 64);
    }

    #[test]
    fn wrong_length_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        synthetic(dir.path(), TANKS_LENGTH - 1);
        assert!(matches!(tanks_load(dir.path()), Err(Error::Invalid(_))));
    }

    #[test]
    fn malformed_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join(TRAIN_FILE), "u,z\n1,2\n").unwrap();
        assert!(matches!(tanks_load(dir.path()), Err(Error::Parse(_))));
        std::fs::write(dir.path().join(TRAIN_FILE), "u,y\n1,abc\n").unwrap();
        assert!(matches!(tanks_load(dir.path()), Err(Error::Parse(_))));
    }

    #[test]
    fn benchmark_import() {
        let dir = tempfile::tempdir().unwrap();
        let src = dir.path().join("bench.csv");
        let mut text = String::from("uEst,uVal,yEst,yVal,Ts\n");
        for i in 0..TANKS_LENGTH {
            text.push_str(&format!("{},{},{},{},4\n", i, i + 1, 2 * i, 3 * i));
        }
        std::fs::write(&src, text).unwrap();
        let out = dir.path().join("tanks");
        import_benchmark_csv(&src, &out).unwrap();
        let (u, y, _) = read_signal(&out.join(TEST_FILE)).unwrap();
        assert_eq!(u[10], 11.0);
        assert_eq!(y[10], 30.0);
        tanks_load(&out).unwrap();
    }
}
