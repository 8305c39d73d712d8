//! Candidate scoring and pool-based selection of the next experiment.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adjoint::{backprop, Cotangents};
use crate::data::{BoxSet, Dataset};
use crate::error::{Error, Result};
use crate::model::QlpvModel;
use crate::par;
use crate::path::{ltv_path_between, qlpv_path_between, GraphPoint, LtvEndpoint, MetricWeight, PathGrid, PathMode};
use crate::scalar::sq_dist;
use crate::sim::{rollout, simulate};

/// Squared distance below which a candidate coincides with a dataset input.
const COINCIDENT_SQ: f64 = 1e-24;
/// Ridge added to the information matrix before the log-determinant.
pub const FISHER_RIDGE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub enum AcquisitionKind {
    /// IDW-weighted exact path length.
    Qlpv { grid: PathGrid, weight: MetricWeight, mode: PathMode },
    /// IDW-weighted LTV path length.
    Ltv { grid: PathGrid, weight: MetricWeight },
    /// LTV path length on a single segment.
    Ideal { weight: MetricWeight },
    /// Log-determinant of the Gauss-Newton information matrix.
    Fisher,
    /// Seeded pseudo-random score; ignores output constraints.
    Random { seed: u64 },
}

impl AcquisitionKind {
    pub fn label(&self) -> &'static str {
        match self {
            AcquisitionKind::Qlpv { .. } => "qlpv",
            AcquisitionKind::Ltv { .. } => "ltv",
            AcquisitionKind::Ideal { .. } => "ideal",
            AcquisitionKind::Fisher => "fisher",
            AcquisitionKind::Random { .. } => "random",
        }
    }
}

/// How per-point path lengths are combined.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    /// IDW-weighted sum.
    #[default]
    Sum,
    /// Shortest path to any dataset point.
    Min,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PoolProvenance {
    TestSet,
    Sampled,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidatePool {
    pub entries: Vec<Vec<f64>>,
    pub provenance: PoolProvenance,
}

impl CandidatePool {
    pub fn new(entries: Vec<Vec<f64>>, provenance: PoolProvenance, input_box: &BoxSet) -> Result<Self> {
        if let Some(i) = entries.iter().position(|u| !input_box.contains_seq(u)) {
            return Err(Error::Invalid(format!("pool candidate {i} violates the input constraints")));
        }
        Ok(CandidatePool { entries, provenance })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn remove(&mut self, index: usize) -> Vec<f64> {
        self.entries.remove(index)
    }
}

/// IDW weights `σ_i(U)`; the indicator of the nearest coincident input when
/// `U` coincides with a dataset input.
pub fn idw_weights(u: &[f64], inputs: &[&[f64]]) -> Result<Vec<f64>> {
    if inputs.is_empty() {
        return Err(Error::Invalid("IDW weights need at least one dataset input".into()));
    }
    let d2: Vec<f64> = inputs.iter().map(|v| sq_dist(u, v)).collect();
    let (nearest, dmin) = d2
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, &d)| if d < acc.1 { (i, d) } else { acc });
    if dmin < COINCIDENT_SQ {
        let mut w = vec![0.0; inputs.len()];
        w[nearest] = 1.0;
        return Ok(w);
    }
    let inv: Vec<f64> = d2.iter().map(|d| 1.0 / d).collect();
    let s: f64 = inv.iter().sum();
    Ok(inv.into_iter().map(|v| v / s).collect())
}

/// `∇_θ F(U|θ)` (rows `T n_y`, columns `n_θ`) by one reverse sweep per output.
pub fn output_parameter_jacobian(model: &QlpvModel, u: &[f64]) -> Result<DMatrix<f64>> {
    let l = model.layout();
    let d = l.dims;
    let zero = vec![0.0; d.n_x];
    let r = rollout(l, model.theta(), u, &zero)?;
    let rows = r.y.len();
    let n = l.n_theta();
    let mut jac = DMatrix::zeros(rows, n);
    let mut gy = vec![0.0; rows];
    let mut g = vec![0.0; n];
    for row in 0..rows {
        gy[row] = 1.0;
        g.iter_mut().for_each(|v| *v = 0.0);
        // only steps up to the output's own time matter
        let t_end = row / d.n_y + 1;
        backprop(
            l,
            model.theta(),
            &u[..t_end * d.n_u],
            &r.x[..t_end * d.n_x],
            &r.p[..t_end * d.n_p],
            Cotangents { gy: Some(&gy[..t_end * d.n_y]), ..Default::default() },
            &mut g,
        );
        gy[row] = 0.0;
        for (c, v) in g.iter().enumerate() {
            jac[(row, c)] = *v;
        }
    }
    if let Some(i) = jac.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { what: "parameter Jacobian", index: i });
    }
    Ok(jac)
}

/// `Σ_i ∇_θF(U_i)ᵀ ∇_θF(U_i)`.
pub fn fisher_information(model: &QlpvModel, inputs: &[&[f64]]) -> Result<DMatrix<f64>> {
    let n = model.layout().n_theta();
    let jacs: Result<Vec<DMatrix<f64>>> = par::map(inputs, |u| output_parameter_jacobian(model, u)).into_iter().collect();
    let mut g = DMatrix::zeros(n, n);
    for j in jacs? {
        g += j.transpose() * &j;
    }
    Ok(g)
}

fn logdet_spd(m: DMatrix<f64>) -> Option<f64> {
    let ch = m.cholesky()?;
    Some(2.0 * ch.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>())
}

/// Score of one candidate plus its output-box feasibility.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuditRow {
    pub index: usize,
    pub score: f64,
    pub feasible: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub index: usize,
    pub value: f64,
    pub audit: Vec<AuditRow>,
}

/// Data-dependent state shared by all candidates of one selection round.
pub struct Acquirer<'a> {
    kind: &'a AcquisitionKind,
    model: &'a QlpvModel,
    agg: Aggregation,
    inputs: Vec<&'a [f64]>,
    points: Vec<GraphPoint>,
    ltv: Vec<LtvEndpoint>,
    info: Option<DMatrix<f64>>,
}

impl<'a> Acquirer<'a> {
    pub fn new(kind: &'a AcquisitionKind, model: &'a QlpvModel, data: &'a Dataset, agg: Aggregation) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::Invalid("acquisition needs a nonempty dataset".into()));
        }
        let inputs = data.inputs();
        let points: Vec<GraphPoint> = data.iter().map(|t| GraphPoint::from_data(t.u.clone(), t.y.clone())).collect();
        let ltv = match kind {
            AcquisitionKind::Ltv { .. } | AcquisitionKind::Ideal { .. } => par::map(&points, |p| LtvEndpoint::new(model, p.clone()))
                .into_iter()
                .collect::<Result<Vec<_>>>()?,
            _ => Vec::new(),
        };
        let info = match kind {
            AcquisitionKind::Fisher => Some(fisher_information(model, &inputs)?),
            _ => None,
        };
        Ok(Acquirer { kind, model, agg, inputs, points, ltv, info })
    }

    fn combine(&self, u: &[f64], dists: impl Fn(usize) -> Result<f64>) -> Result<f64> {
        if self.inputs.iter().any(|v| sq_dist(u, v) < COINCIDENT_SQ) {
            // an experiment already in the dataset adds no new input
            return Ok(0.0);
        }
        let sigma = idw_weights(u, &self.inputs)?;
        match self.agg {
            Aggregation::Sum => {
                let mut total = 0.0;
                for (i, s) in sigma.iter().enumerate() {
                    total += s * dists(i)?;
                }
                Ok(total)
            }
            Aggregation::Min => {
                let mut best = f64::INFINITY;
                for i in 0..sigma.len() {
                    best = best.min(dists(i)?);
                }
                Ok(best)
            }
        }
    }

    /// Score and predicted output of candidate `index` with input `u`.
    /// Model instability yields `-∞` and no prediction.
    pub fn score(&self, index: usize, u: &[f64]) -> Result<(f64, Option<Vec<f64>>)> {
        let sim = match simulate(self.model, u, None) {
            Ok(s) => s,
            Err(Error::Unstable { .. }) => return Ok((f64::NEG_INFINITY, None)),
            Err(e) => return Err(e),
        };
        let cand = GraphPoint::from_data(u.to_vec(), sim.y.clone());
        let value = match self.kind {
            AcquisitionKind::Qlpv { grid, weight, mode } => {
                self.combine(u, |i| qlpv_path_between(self.model, &self.points[i], &cand, grid, weight, *mode, None))
            }
            AcquisitionKind::Ltv { grid, weight } => {
                let end = LtvEndpoint::new(self.model, cand)?;
                self.combine(u, |i| ltv_path_between(self.model, &self.ltv[i], &end, grid, weight, None))
            }
            AcquisitionKind::Ideal { weight } => {
                let end = LtvEndpoint::new(self.model, cand)?;
                let grid = PathGrid::uniform(1)?;
                self.combine(u, |i| ltv_path_between(self.model, &self.ltv[i], &end, &grid, weight, None))
            }
            AcquisitionKind::Fisher => {
                let j = output_parameter_jacobian(self.model, u)?;
                let n = j.ncols();
                let m = self.info.as_ref().unwrap() + j.transpose() * &j + DMatrix::identity(n, n) * FISHER_RIDGE;
                Ok(logdet_spd(m).unwrap_or(f64::NEG_INFINITY))
            }
            AcquisitionKind::Random { seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                rng.set_stream(index as u64);
                Ok(rng.gen::<f64>())
            }
        };
        match value {
            Ok(v) => Ok((v, Some(sim.y))),
            Err(Error::Unstable { .. }) | Err(Error::Knot { .. }) => Ok((f64::NEG_INFINITY, Some(sim.y))),
            Err(e) => Err(e),
        }
    }

    /// Scores every candidate (in parallel, results in pool order).
    pub fn score_all(&self, pool: &[Vec<f64>]) -> Result<Vec<(f64, Option<Vec<f64>>)>> {
        let idx: Vec<usize> = (0..pool.len()).collect();
        par::map(&idx, |&i| self.score(i, &pool[i])).into_iter().collect()
    }
}

/// Acquisition value of a single input.
pub fn acquisition_value(kind: &AcquisitionKind, u: &[f64], model: &QlpvModel, data: &Dataset) -> Result<f64> {
    Ok(Acquirer::new(kind, model, data, Aggregation::Sum)?.score(0, u)?.0)
}

/// Pool argmax over candidates whose predicted output lies in `output_box`
/// (all candidates for the random kind). Ties go to the lowest index.
pub fn select_input(
    pool: &CandidatePool,
    kind: &AcquisitionKind,
    model: &QlpvModel,
    data: &Dataset,
    output_box: &BoxSet,
    agg: Aggregation,
) -> Result<Selection> {
    if pool.is_empty() {
        return Err(Error::NoFeasibleCandidate(0));
    }
    let acq = Acquirer::new(kind, model, data, agg)?;
    let scored = acq.score_all(&pool.entries)?;
    let ignore_box = matches!(kind, AcquisitionKind::Random { .. });
    let audit: Vec<AuditRow> = scored
        .iter()
        .enumerate()
        .map(|(index, (score, y))| {
            let feasible = score.is_finite() && (ignore_box || y.as_deref().is_some_and(|y| output_box.contains_seq(y)));
            AuditRow { index, score: *score, feasible }
        })
        .collect();
    let mut best: Option<(usize, f64)> = None;
    for row in audit.iter().filter(|r| r.feasible) {
        if best.is_none_or(|(_, v)| row.score > v) {
            best = Some((row.index, row.score));
        }
    }
    let (index, value) = best.ok_or(Error::NoFeasibleCandidate(pool.len()))?;
    Ok(Selection { index, value, audit })
}
