//! Exact against LTV path-length acquisition: time, score error, argmax.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::{AcquisitionTag, ExperimentConfig};
use super::experiment::{bootstrap, Session};
use crate::acquisition::{select_input, AcquisitionKind, Aggregation, CandidatePool, Selection};
use crate::data::{BoxSet, Dataset};
use crate::error::Result;
use crate::model::QlpvModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathComparison {
    pub n: usize,
    pub reference_secs: f64,
    pub approx_secs: f64,
    /// `100 · approx / reference` wall time.
    pub pct_time: f64,
    /// Largest `100 |a - r| / |r|` over candidates with a nonzero finite
    /// reference score.
    pub max_ape: f64,
    pub mean_ape: f64,
    pub reference_argmax: usize,
    pub approx_argmax: usize,
    pub argmax_agree: bool,
    /// `100 (r* - r(approx argmax)) / r*`: reference score lost by taking the
    /// approximate choice.
    pub optimality_loss: f64,
}

fn timed(f: impl FnOnce() -> Result<Selection>) -> Result<(Selection, f64)> {
    let t = Instant::now();
    let s = f()?;
    Ok((s, t.elapsed().as_secs_f64()))
}

/// Scores the whole pool with `reference` and `approx` and compares.
pub fn compare_kinds(
    reference: &AcquisitionKind,
    approx: &AcquisitionKind,
    model: &QlpvModel,
    data: &Dataset,
    pool: &CandidatePool,
    output_box: &BoxSet,
    agg: Aggregation,
) -> Result<PathComparison> {
    let (r, reference_secs) = timed(|| select_input(pool, reference, model, data, output_box, agg))?;
    let (a, approx_secs) = timed(|| select_input(pool, approx, model, data, output_box, agg))?;
    let mut apes = Vec::new();
    for (x, y) in r.audit.iter().zip(&a.audit) {
        if x.score.is_finite() && y.score.is_finite() && x.score != 0.0 {
            apes.push(100.0 * (y.score - x.score).abs() / x.score.abs());
        }
    }
    let max_ape = apes.iter().copied().fold(0.0, f64::max);
    let mean_ape = if apes.is_empty() { 0.0 } else { apes.iter().sum::<f64>() / apes.len() as f64 };
    let lost = r.value - r.audit[a.index].score;
    Ok(PathComparison {
        n: data.len(),
        reference_secs,
        approx_secs,
        pct_time: 100.0 * approx_secs / reference_secs,
        max_ape,
        mean_ape,
        reference_argmax: r.index,
        approx_argmax: a.index,
        argmax_agree: r.index == a.index,
        optimality_loss: if r.value != 0.0 { 100.0 * lost / r.value.abs() } else { 0.0 },
    })
}

/// Exact (qLPV) against LTV path-length acquisition with grid `M` and the
/// configured metric weight.
pub fn compare_path_methods(
    cfg: &ExperimentConfig,
    model: &QlpvModel,
    data: &Dataset,
    pool: &CandidatePool,
    output_box: &BoxSet,
) -> Result<PathComparison> {
    let q = cfg.acquisition_kind(AcquisitionTag::Qlpv, 0)?;
    let l = cfg.acquisition_kind(AcquisitionTag::Ltv, 0)?;
    compare_kinds(&q, &l, model, data, pool, output_box, cfg.aggregation)
}

/// Runs the exact-path acquisition loop for `settings` dataset sizes and
/// compares both path methods on the whole pool at every size.
pub fn path_study(cfg: &ExperimentConfig, seed: u64, settings: usize) -> Result<Vec<PathComparison>> {
    let boot = bootstrap(cfg, seed)?;
    let output_box = crate::plants::Plant::output_box(&boot.plant);
    let mut s = Session::new(cfg, seed, boot);
    let mut rows = Vec::with_capacity(settings);
    for k in 0..settings {
        s.train()?;
        let cmp = compare_path_methods(cfg, &s.model, &s.data, &s.pool, &output_box)?;
        log::info!(
            "N = {}: ltv time {:.1}% of qlpv, max APE {:.3}%, argmax agree {}",
            cmp.n,
            cmp.pct_time,
            cmp.max_ape,
            cmp.argmax_agree
        );
        let next = cmp.reference_argmax;
        rows.push(cmp);
        if k + 1 < settings {
            s.experiment(next)?;
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::acquisition::PoolProvenance;
    use crate::model::{Dims, NetSpec};
    use crate::path::{MetricWeight, PathGrid, PathMode};
    use crate::sim::{predict, Trajectory};
    use crate::test_util::random_input;

    fn fixture(n_p: usize) -> (QlpvModel, Dataset, CandidatePool) {
        let m = QlpvModel::random(Dims::new(3, 2, 2, n_p).unwrap(), NetSpec::default(), 4).unwrap();
        let data = Dataset::from_trajectories(
            (0..3)
                .map(|i| {
                    let u = random_input(6, 2, 60 + i);
                    Trajectory::new(2, 2, u.clone(), predict(&m, &u).unwrap()).unwrap()
                })
                .collect(),
        );
        let pool = CandidatePool::new(
            (0..8).map(|i| random_input(6, 2, 90 + i)).collect(),
            PoolProvenance::Sampled,
            &BoxSet::unit(2),
        )
        .unwrap();
        (m, data, pool)
    }

    fn wide() -> BoxSet {
        BoxSet { lower: vec![-1e9; 2], upper: vec![1e9; 2] }
    }

    #[test]
    fn lti_models_give_identical_scores() {
        let (m, data, pool) = fixture(1);
        let cfg = ExperimentConfig::default();
        let c = compare_path_methods(&cfg, &m, &data, &pool, &wide()).unwrap();
        assert_eq!(c.max_ape, 0.0);
        assert!(c.argmax_agree);
        assert_eq!(c.optimality_loss, 0.0);
    }

    #[test]
    fn single_segment_ltv_is_the_ideal_kind() {
        let (m, data, pool) = fixture(3);
        let w = MetricWeight::blocks(1.0, 1.0).unwrap();
        let ltv = AcquisitionKind::Ltv { grid: PathGrid::uniform(1).unwrap(), weight: w.clone() };
        let ideal = AcquisitionKind::Ideal { weight: w };
        let c = compare_kinds(&ideal, &ltv, &m, &data, &pool, &wide(), Aggregation::Sum).unwrap();
        assert_eq!(c.max_ape, 0.0);
        assert!(c.argmax_agree);
    }

    #[test]
    fn percentage_errors_match_the_audit() {
        let (m, data, pool) = fixture(3);
        let w = MetricWeight::blocks(1.0, 1.0).unwrap();
        let q = AcquisitionKind::Qlpv { grid: PathGrid::uniform(4).unwrap(), weight: w.clone(), mode: PathMode::Chord };
        let l = AcquisitionKind::Ltv { grid: PathGrid::uniform(4).unwrap(), weight: w };
        let c = compare_kinds(&q, &l, &m, &data, &pool, &wide(), Aggregation::Sum).unwrap();
        let r = select_input(&pool, &q, &m, &data, &wide(), Aggregation::Sum).unwrap();
        let a = select_input(&pool, &l, &m, &data, &wide(), Aggregation::Sum).unwrap();
        let worst = r
            .audit
            .iter()
            .zip(&a.audit)
            .map(|(x, y)| 100.0 * (y.score - x.score).abs() / x.score)
            .fold(0.0, f64::max);
        assert_eq!(c.max_ape, worst);
        assert!(c.optimality_loss >= 0.0);
        assert_eq!(c.reference_argmax, r.index);
    }
}
