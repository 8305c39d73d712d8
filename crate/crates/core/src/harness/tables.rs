//! Flat CSV tables for plotting with external tools.

use std::path::Path;

use super::compare::PathComparison;
use super::experiment::RunLog;
use super::tanks::TanksResult;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::io::fmt_f64;
use crate::model::QlpvModel;
use crate::sim::simulate;

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    csv::Writer::from_path(path).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

fn put<W: std::io::Write>(w: &mut csv::Writer<W>, row: Vec<String>) -> Result<()> {
    w.write_record(&row).map_err(|e| Error::Parse(e.to_string()))
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

/// Learning curve of one run.
pub fn write_curve(path: &Path, log: &RunLog) -> Result<()> {
    let mut w = writer(path)?;
    let head = [
        "n", "objective", "mu_e", "var_e", "unstable", "chosen", "acquisition_value", "violation", "train_s", "acquire_s",
        "experiment_s", "evaluate_s",
    ];
    put(&mut w, head.iter().map(|s| s.to_string()).collect())?;
    for r in &log.records {
        put(
            &mut w,
            vec![
                r.n.to_string(),
                fmt_f64(r.objective),
                opt(r.mu_e),
                opt(r.var_e),
                r.unstable.to_string(),
                r.chosen.map(|c| c.to_string()).unwrap_or_default(),
                opt(r.acquisition_value),
                r.violation.map(|v| v.to_string()).unwrap_or_default(),
                fmt_f64(r.wall.train),
                fmt_f64(r.wall.acquire),
                fmt_f64(r.wall.experiment),
                fmt_f64(r.wall.evaluate),
            ],
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Mean and spread of μ_e across runs at every dataset size.
pub fn write_error_bars(path: &Path, logs: &[RunLog]) -> Result<()> {
    let mut w = writer(path)?;
    put(&mut w, ["n", "runs", "mean_mu_e", "std_mu_e", "min_mu_e", "max_mu_e"].map(String::from).to_vec())?;
    let mut sizes: Vec<usize> = logs.iter().flat_map(|l| l.records.iter().map(|r| r.n)).collect();
    sizes.sort_unstable();
    sizes.dedup();
    for n in sizes {
        let v: Vec<f64> = logs
            .iter()
            .flat_map(|l| l.records.iter().filter(|r| r.n == n).filter_map(|r| r.mu_e))
            .collect();
        if v.is_empty() {
            continue;
        }
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let std = (v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / v.len() as f64).sqrt();
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        put(&mut w, vec![n.to_string(), v.len().to_string(), fmt_f64(mean), fmt_f64(std), fmt_f64(lo), fmt_f64(hi)])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_timing(path: &Path, rows: &[PathComparison]) -> Result<()> {
    let mut w = writer(path)?;
    let head = [
        "n", "qlpv_s", "ltv_s", "pct_time", "max_ape", "mean_ape", "qlpv_argmax", "ltv_argmax", "agree", "optimality_loss",
    ];
    put(&mut w, head.iter().map(|s| s.to_string()).collect())?;
    for r in rows {
        put(
            &mut w,
            vec![
                r.n.to_string(),
                fmt_f64(r.reference_secs),
                fmt_f64(r.approx_secs),
                fmt_f64(r.pct_time),
                fmt_f64(r.max_ape),
                fmt_f64(r.mean_ape),
                r.reference_argmax.to_string(),
                r.approx_argmax.to_string(),
                r.argmax_agree.to_string(),
                fmt_f64(r.optimality_loss),
            ],
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Scheduling sequences of the first `limit` test inputs, one row per
/// time step.
pub fn write_schedules(path: &Path, model: &QlpvModel, test: &Dataset, limit: usize) -> Result<()> {
    let n_p = model.dims().n_p;
    let mut w = writer(path)?;
    let mut head = vec!["trajectory".to_string(), "t".to_string()];
    head.extend((1..=n_p).map(|i| format!("p{i}")));
    put(&mut w, head)?;
    for (k, t) in test.iter().take(limit).enumerate() {
        let sim = match simulate(model, &t.u, t.x0.as_deref()) {
            Ok(s) => s,
            Err(Error::Unstable { .. }) => continue,
            Err(e) => return Err(e),
        };
        for step in 0..sim.p.horizon() {
            let mut row = vec![k.to_string(), step.to_string()];
            row.extend(sim.p.block(step).iter().map(|v| fmt_f64(*v)));
            put(&mut w, row)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_tanks(path: &Path, rows: &[TanksResult]) -> Result<()> {
    let mut w = writer(path)?;
    put(&mut w, ["kappa2", "objective", "train_rmse", "test_rmse", "x0_warning"].map(String::from).to_vec())?;
    for r in rows {
        put(
            &mut w,
            vec![
                fmt_f64(r.kappa2),
                fmt_f64(r.objective),
                fmt_f64(r.train_rmse),
                fmt_f64(r.test_rmse),
                r.x0_warning.to_string(),
            ],
        )?;
    }
    w.flush()?;
    Ok(())
}
