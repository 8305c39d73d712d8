//! Test-set error statistics, best-fit rates and the scheduling spread.

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, RegPool};
use crate::error::{Error, Result};
use crate::model::QlpvModel;
use crate::par;
use crate::sim::simulate;
use crate::training::manifold_penalty;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    /// Mean of `||Y - F(U)||²` over stable rollouts.
    pub mu_e: f64,
    /// Population variance of the same errors.
    pub var_e: f64,
    /// `None` where the model diverged.
    pub errors: Vec<Option<f64>>,
    pub unstable: usize,
}

/// Per-trajectory squared output errors, unstable rollouts excluded and
/// counted. Both statistics are NaN when no rollout is stable.
pub fn evaluate(model: &QlpvModel, test: &Dataset) -> Result<ErrorStats> {
    if test.is_empty() {
        return Err(Error::Invalid("empty test set".into()));
    }
    let errors: Vec<Option<f64>> = par::map(&test.trajectories, |t| match simulate(model, &t.u, t.x0.as_deref()) {
        Ok(s) => Ok(Some(s.y.iter().zip(&t.y).map(|(a, b)| (a - b) * (a - b)).sum())),
        Err(Error::Unstable { .. }) => Ok(None),
        Err(e) => Err(e),
    })
    .into_iter()
    .collect::<Result<_>>()?;
    let stable: Vec<f64> = errors.iter().flatten().copied().collect();
    let n = stable.len() as f64;
    let mu_e = stable.iter().sum::<f64>() / n;
    let var_e = stable.iter().map(|e| (e - mu_e) * (e - mu_e)).sum::<f64>() / n;
    Ok(ErrorStats { mu_e, var_e, unstable: errors.len() - stable.len(), errors })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BfrReport {
    /// Mean over trajectories and channels.
    pub mean: f64,
    /// Mean per output channel over the trajectories where it is defined.
    pub per_channel: Vec<f64>,
    /// (trajectory, channel) pairs with a constant reference output.
    pub skipped: usize,
    pub unstable: usize,
}

/// `100 (1 - ||y - ŷ|| / ||y - mean(y)||)`, clipped at 0, per trajectory and
/// channel.
pub fn bfr_score(model: &QlpvModel, test: &Dataset) -> Result<BfrReport> {
    if test.is_empty() {
        return Err(Error::Invalid("empty test set".into()));
    }
    let n_y = model.dims().n_y;
    let preds: Vec<Option<Vec<f64>>> = par::map(&test.trajectories, |t| match simulate(model, &t.u, t.x0.as_deref()) {
        Ok(s) => Ok(Some(s.y)),
        Err(Error::Unstable { .. }) => Ok(None),
        Err(e) => Err(e),
    })
    .into_iter()
    .collect::<Result<_>>()?;
    let mut sums = vec![0.0; n_y];
    let mut counts = vec![0usize; n_y];
    let mut skipped = 0;
    for (t, pred) in test.iter().zip(&preds) {
        let Some(pred) = pred else { continue };
        for c in 0..n_y {
            let y: Vec<f64> = t.y.iter().skip(c).step_by(n_y).copied().collect();
            let yh: Vec<f64> = pred.iter().skip(c).step_by(n_y).copied().collect();
            let mean = y.iter().sum::<f64>() / y.len() as f64;
            let den = y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>().sqrt();
            if den == 0.0 {
                skipped += 1;
                continue;
            }
            let num = y.iter().zip(&yh).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            sums[c] += (100.0 * (1.0 - num / den)).max(0.0);
            counts[c] += 1;
        }
    }
    let per_channel: Vec<f64> = sums.iter().zip(&counts).map(|(s, n)| s / *n as f64).collect();
    let mean = sums.iter().sum::<f64>() / counts.iter().sum::<usize>() as f64;
    Ok(BfrReport {
        mean,
        per_channel,
        skipped,
        unstable: preds.iter().filter(|p| p.is_none()).count(),
    })
}

/// Mean over pool pairs of `||P_k - P_l||² / ||U_k - U_l||²`.
pub fn schedule_spread(model: &QlpvModel, pool: &RegPool) -> Result<f64> {
    let n = pool.len();
    if n < 2 {
        return Err(Error::Invalid("the spread needs at least two inputs".into()));
    }
    // the penalty carries a 1/N_r factor in front of the pair sum
    let m = manifold_penalty(model, pool)?;
    Ok(m * n as f64 / (n * (n - 1) / 2) as f64)
}

/// Root mean square output error `sqrt(||Y - Ŷ||² / T)` per output sample.
pub fn rmse(y: &[f64], pred: &[f64], horizon: usize) -> f64 {
    (y.iter().zip(pred).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / horizon as f64).sqrt()
}
