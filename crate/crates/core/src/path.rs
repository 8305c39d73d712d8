//! Path lengths on the model graph `S = {(U, F(U|θ))}` along the straight
//! input segment between two experiments.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::QlpvModel;
use crate::sim::{forward_sensitivity, outputs_into, simulate, BlendedSchedule, SchedulingSequence, SIMPLEX_TOL};

/// Knots `0 = τ_0 < τ_1 < ... < τ_M = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct PathGrid {
    knots: Vec<f64>,
}

impl PathGrid {
    pub fn uniform(segments: usize) -> Result<Self> {
        if segments == 0 {
            return Err(Error::Invalid("a path grid needs at least one segment".into()));
        }
        let m = segments as f64;
        Ok(PathGrid { knots: (0..=segments).map(|k| k as f64 / m).collect() })
    }

    pub fn from_knots(knots: Vec<f64>) -> Result<Self> {
        if knots.len() < 2 || knots[0] != 0.0 || *knots.last().unwrap() != 1.0 {
            return Err(Error::Invalid("knots must start at 0 and end at 1".into()));
        }
        if knots.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::Invalid("knots must be strictly increasing".into()));
        }
        Ok(PathGrid { knots })
    }

    pub fn segments(&self) -> usize {
        self.knots.len() - 1
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }
}

impl Default for PathGrid {
    fn default() -> Self {
        PathGrid::uniform(10).unwrap()
    }
}

/// Weight of the graph norm `||[ΔU; ΔY]||_W = sqrt(vᵀ W v)`.
#[derive(Debug, Clone, PartialEq)]
pub enum MetricWeight {
    /// `W = diag(w_u I, w_y I)`.
    Blocks { w_u: f64, w_y: f64 },
    Dense(DMatrix<f64>),
}

impl Default for MetricWeight {
    fn default() -> Self {
        MetricWeight::Blocks { w_u: 1.0, w_y: 1.0 }
    }
}

impl MetricWeight {
    pub fn blocks(w_u: f64, w_y: f64) -> Result<Self> {
        if !(w_u >= 0.0 && w_y >= 0.0) {
            return Err(Error::Invalid("block weights must be nonnegative".into()));
        }
        Ok(MetricWeight::Blocks { w_u, w_y })
    }

    /// Checks symmetry and positive semidefiniteness (Cholesky of `W + 1e-12 I`).
    pub fn dense(w: DMatrix<f64>) -> Result<Self> {
        if !w.is_square() {
            return Err(Error::Dimension("metric weight must be square".into()));
        }
        let scale = w.amax().max(1.0);
        if (&w - w.transpose()).amax() > 1e-12 * scale {
            return Err(Error::Invalid("metric weight is not symmetric".into()));
        }
        let n = w.nrows();
        if (w.clone() + DMatrix::identity(n, n) * 1e-12).cholesky().is_none() {
            return Err(Error::Invalid("metric weight is not positive semidefinite".into()));
        }
        Ok(MetricWeight::Dense(w))
    }

    /// `||[du; dy]||_W`.
    pub fn norm(&self, du: &[f64], dy: &[f64]) -> Result<f64> {
        match self {
            MetricWeight::Blocks { w_u, w_y } => {
                let su: f64 = du.iter().map(|v| v * v).sum();
                let sy: f64 = dy.iter().map(|v| v * v).sum();
                Ok((w_u * su + w_y * sy).sqrt())
            }
            MetricWeight::Dense(w) => {
                let n = du.len() + dy.len();
                if w.nrows() != n {
                    return Err(Error::Dimension(format!("metric weight is {0}x{0}, vector has {n} entries", w.nrows())));
                }
                let v: Vec<f64> = du.iter().chain(dy).copied().collect();
                let mut q = 0.0;
                for i in 0..n {
                    let mut row = 0.0;
                    for j in 0..n {
                        row += w[(i, j)] * v[j];
                    }
                    q += v[i] * row;
                }
                Ok(q.max(0.0).sqrt())
            }
        }
    }
}

/// A point `(U, Y)` on the graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphPoint {
    pub u: Vec<f64>,
    pub y: Vec<f64>,
}

impl GraphPoint {
    pub fn from_model(model: &QlpvModel, u: Vec<f64>) -> Result<Self> {
        let y = simulate(model, &u, None)?.y;
        Ok(GraphPoint { u, y })
    }

    /// A measured point; `y` is kept as is.
    pub fn from_data(u: Vec<f64>, y: Vec<f64>) -> Self {
        GraphPoint { u, y }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PathMode {
    /// Output differences between consecutive knots.
    #[default]
    Chord,
    /// Differences of `Λ(U(τ)) U(τ)` between consecutive knots.
    Literal,
}

/// One knot of a traced path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnotRecord {
    pub tau: f64,
    pub u: Vec<f64>,
    pub y: Vec<f64>,
    /// Scheduling sequence at the knot (exact or interpolated).
    pub p: Vec<f64>,
}

/// `P̃(τ) = P_start + τ (P_end - P_start)`.
pub fn linear_scheduling_curve(start: &SchedulingSequence, end: &SchedulingSequence, tau: f64) -> Result<SchedulingSequence> {
    if start.n_p != end.n_p || start.p.len() != end.p.len() {
        return Err(Error::Dimension("scheduling endpoints differ in shape".into()));
    }
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::Invalid(format!("curve parameter {tau} outside [0, 1]")));
    }
    start.validate()?;
    end.validate()?;
    let p = if tau == 0.0 {
        start.p.clone()
    } else if tau == 1.0 {
        end.p.clone()
    } else {
        start.p.iter().zip(&end.p).map(|(a, b)| a + tau * (b - a)).collect()
    };
    let out = SchedulingSequence { n_p: start.n_p, p };
    debug_assert!(out.p.iter().all(|v| *v >= -SIMPLEX_TOL));
    Ok(out)
}

/// `U(τ)` on the straight segment, with exact endpoints.
fn input_at(u1: &[f64], u2: &[f64], tau: f64, out: &mut [f64]) {
    if tau == 0.0 {
        out.copy_from_slice(u1);
    } else if tau == 1.0 {
        out.copy_from_slice(u2);
    } else {
        for ((o, a), b) in out.iter_mut().zip(u1).zip(u2) {
            *o = a + tau * (b - a);
        }
    }
}

fn knot_err(knot: usize, e: Error) -> Error {
    Error::Knot { knot, source: Box::new(e) }
}

fn check_pair(model: &QlpvModel, u1: &[f64], u2: &[f64]) -> Result<()> {
    let n_u = model.dims().n_u;
    if u1.len() != u2.len() || u1.is_empty() || u1.len() % n_u != 0 {
        return Err(Error::Dimension("path endpoints must be input sequences of equal length".into()));
    }
    Ok(())
}

/// Sum of segment norms given the knot inputs and knot outputs.
fn segment_sum(w: &MetricWeight, us: &[Vec<f64>], ys: &[Vec<f64>]) -> Result<f64> {
    let mut total = 0.0;
    let mut du = vec![0.0; us[0].len()];
    let mut dy = vec![0.0; ys[0].len()];
    for k in 0..us.len() - 1 {
        for i in 0..du.len() {
            du[i] = us[k + 1][i] - us[k][i];
        }
        for i in 0..dy.len() {
            dy[i] = ys[k + 1][i] - ys[k][i];
        }
        total += w.norm(&du, &dy)?;
    }
    Ok(total)
}

/// Discretized path length `d_S` with full qLPV simulation at every knot.
pub fn qlpv_path_length(model: &QlpvModel, u1: &[f64], u2: &[f64], grid: &PathGrid, w: &MetricWeight, mode: PathMode) -> Result<f64> {
    let a = GraphPoint::from_model(model, u1.to_vec()).map_err(|e| knot_err(0, e))?;
    let b = GraphPoint::from_model(model, u2.to_vec()).map_err(|e| knot_err(grid.segments(), e))?;
    qlpv_path_between(model, &a, &b, grid, w, mode, None)
}

/// `d_S` between two graph points. In chord mode the endpoint outputs are
/// taken from the points (measured outputs for data points); in literal
/// mode every knot uses `Λ(U) U`.
pub fn qlpv_path_between(
    model: &QlpvModel,
    a: &GraphPoint,
    b: &GraphPoint,
    grid: &PathGrid,
    w: &MetricWeight,
    mode: PathMode,
    mut trace: Option<&mut Vec<KnotRecord>>,
) -> Result<f64> {
    check_pair(model, &a.u, &b.u)?;
    let l = model.layout();
    let d = l.dims;
    let theta = model.theta();
    let n_y_tot = a.u.len() / d.n_u * d.n_y;
    let m = grid.segments();
    let mut us = Vec::with_capacity(m + 1);
    let mut ys = Vec::with_capacity(m + 1);
    for (k, &tau) in grid.knots().iter().enumerate() {
        let mut u = vec![0.0; a.u.len()];
        input_at(&a.u, &b.u, tau, &mut u);
        let y = match mode {
            PathMode::Chord if k == 0 => a.y.clone(),
            PathMode::Chord if k == m => b.y.clone(),
            PathMode::Chord => {
                let mut y = vec![0.0; n_y_tot];
                outputs_into(l, theta, &u, &mut y).map_err(|e| knot_err(k, e))?;
                y
            }
            PathMode::Literal => {
                let s = forward_sensitivity(l, theta, &u).map_err(|e| knot_err(k, e))?;
                let cols = u.len();
                (0..n_y_tot)
                    .map(|r| s.dy[r * cols..(r + 1) * cols].iter().zip(&u).map(|(g, v)| g * v).sum())
                    .collect()
            }
        };
        if let Some(t) = trace.as_deref_mut() {
            let p = simulate(model, &u, None).map_err(|e| knot_err(k, e))?.p.p;
            t.push(KnotRecord { tau, u: u.clone(), y: y.clone(), p });
        }
        us.push(u);
        ys.push(y);
    }
    segment_sum(w, &us, &ys)
}

/// Endpoint data shared by every LTV path that starts or ends at a point:
/// the point itself and the blended matrices of its exact schedule.
#[derive(Debug, Clone)]
pub struct LtvEndpoint {
    pub point: GraphPoint,
    pub schedule: SchedulingSequence,
    blended: BlendedSchedule,
}

impl LtvEndpoint {
    /// One qLPV simulation of `point.u` gives the endpoint schedule.
    pub fn new(model: &QlpvModel, point: GraphPoint) -> Result<Self> {
        let schedule = simulate(model, &point.u, None)?.p;
        let blended = BlendedSchedule::new(model, &schedule)?;
        Ok(LtvEndpoint { point, schedule, blended })
    }
}

/// `d̃_S` between two graph points.
pub fn ltv_path_length(model: &QlpvModel, a: &GraphPoint, b: &GraphPoint, grid: &PathGrid, w: &MetricWeight) -> Result<f64> {
    let ea = LtvEndpoint::new(model, a.clone()).map_err(|e| knot_err(0, e))?;
    let eb = LtvEndpoint::new(model, b.clone()).map_err(|e| knot_err(grid.segments(), e))?;
    ltv_path_between(model, &ea, &eb, grid, w, None)
}

/// `d̃_S` with precomputed endpoints: LTV simulations under the linearly
/// interpolated schedule at the interior knots, endpoint outputs from the
/// points.
pub fn ltv_path_between(
    model: &QlpvModel,
    a: &LtvEndpoint,
    b: &LtvEndpoint,
    grid: &PathGrid,
    w: &MetricWeight,
    mut trace: Option<&mut Vec<KnotRecord>>,
) -> Result<f64> {
    check_pair(model, &a.point.u, &b.point.u)?;
    let d = model.dims();
    let c = model.layout().c(model.theta());
    let n = a.point.u.len();
    let n_y_tot = n / d.n_u * d.n_y;
    let m = grid.segments();
    let mut du = vec![0.0; n];
    let mut dy = vec![0.0; n_y_tot];
    let mut u_prev = a.point.u.clone();
    let mut y_prev = a.point.y.clone();
    let mut u = vec![0.0; n];
    let mut y = vec![0.0; n_y_tot];
    if let Some(t) = trace.as_deref_mut() {
        t.push(KnotRecord { tau: 0.0, u: u_prev.clone(), y: y_prev.clone(), p: a.schedule.p.clone() });
    }
    let mut total = 0.0;
    for (k, &tau) in grid.knots().iter().enumerate().skip(1) {
        input_at(&a.point.u, &b.point.u, tau, &mut u);
        if k == m {
            y.copy_from_slice(&b.point.y);
        } else {
            a.blended
                .simulate_between(&b.blended, tau, c, d.n_y, &u, &mut y)
                .map_err(|e| knot_err(k, e))?;
        }
        for i in 0..n {
            du[i] = u[i] - u_prev[i];
        }
        for i in 0..n_y_tot {
            dy[i] = y[i] - y_prev[i];
        }
        total += w.norm(&du, &dy)?;
        if let Some(t) = trace.as_deref_mut() {
            let p = linear_scheduling_curve(&a.schedule, &b.schedule, tau)?.p;
            t.push(KnotRecord { tau, u: u.clone(), y: y.clone(), p });
        }
        std::mem::swap(&mut u, &mut u_prev);
        std::mem::swap(&mut y, &mut y_prev);
    }
    Ok(total)
}
