//! Simulation of the qLPV recursion, its frozen-schedule LTV counterpart,
//! and input-output sensitivities.
//!
//! Conventions: `U = (u_0, ..., u_{T-1})` and `Y = (y_0, ..., y_{T-1})` are
//! stacked row-wise; `y_t = C x_t`, `x_{t+1} = A(p_t) x_t + B(p_t) u_t` with
//! `p_t = p(x_t, u_t)`. The recorded state sequence is `x_0..x_{T-1}`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::model::{Layout, QlpvModel};
use crate::scalar::{dot, matvec, Scalar};

/// Tolerance on the simplex membership test for scheduling blocks.
pub const SIMPLEX_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub n_u: usize,
    pub n_y: usize,
    pub u: Vec<f64>,
    pub y: Vec<f64>,
    /// Initial model state; `None` means the origin.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
}

impl Trajectory {
    pub fn new(n_u: usize, n_y: usize, u: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if n_u == 0 || n_y == 0 || u.len() % n_u != 0 || y.len() % n_y != 0 {
            return Err(dim_err(format!(
                "trajectory lengths {} / {} not divisible by n_u={n_u}, n_y={n_y}",
                u.len(),
                y.len()
            )));
        }
        if u.len() / n_u != y.len() / n_y {
            return Err(dim_err(format!(
                "input horizon {} differs from output horizon {}",
                u.len() / n_u,
                y.len() / n_y
            )));
        }
        Ok(Trajectory { n_u, n_y, u, y, x0: None })
    }

    pub fn with_x0(mut self, x0: Vec<f64>) -> Self {
        self.x0 = Some(x0);
        self
    }

    pub fn horizon(&self) -> usize {
        self.u.len() / self.n_u
    }
}

/// Stacked simplex vectors `P = (p_0, ..., p_{T-1})`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchedulingSequence {
    pub n_p: usize,
    pub p: Vec<f64>,
}

impl SchedulingSequence {
    /// Builds a sequence after checking every block lies in the simplex.
    pub fn new(n_p: usize, p: Vec<f64>) -> Result<Self> {
        let s = SchedulingSequence { n_p, p };
        s.validate()?;
        Ok(s)
    }

    pub fn horizon(&self) -> usize {
        self.p.len() / self.n_p
    }

    pub fn block(&self, t: usize) -> &[f64] {
        &self.p[t * self.n_p..(t + 1) * self.n_p]
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_p == 0 || self.p.len() % self.n_p != 0 {
            return Err(dim_err("scheduling sequence length not divisible by n_p"));
        }
        for (t, blk) in self.p.chunks(self.n_p).enumerate() {
            let sum: f64 = blk.iter().sum();
            let min = blk.iter().cloned().fold(f64::INFINITY, f64::min);
            if !(min >= -SIMPLEX_TOL) || !((sum - 1.0).abs() <= SIMPLEX_TOL) {
                return Err(Error::NotSimplex { block: t, sum, min });
            }
        }
        Ok(())
    }

    /// Uniform schedule `1/n_p` at every step.
    pub fn uniform(n_p: usize, horizon: usize) -> Self {
        SchedulingSequence {
            n_p,
            p: vec![1.0 / n_p as f64; n_p * horizon],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationResult {
    pub y: Vec<f64>,
    /// States `x_0..x_{T-1}`, stacked.
    pub x: Vec<f64>,
    pub p: SchedulingSequence,
}

impl SimulationResult {
    pub fn state(&self, n_x: usize, t: usize) -> &[f64] {
        &self.x[t * n_x..(t + 1) * n_x]
    }
}

fn check_horizon(u: &[f64], n_u: usize) -> Result<usize> {
    if u.len() % n_u != 0 {
        return Err(dim_err(format!("input length {} not divisible by n_u={n_u}", u.len())));
    }
    Ok(u.len() / n_u)
}

fn check_x0(x0: &[f64], n_x: usize) -> Result<()> {
    if x0.len() != n_x {
        return Err(dim_err(format!("x0 has length {}, expected {n_x}", x0.len())));
    }
    Ok(())
}

/// Evaluates the softmax scheduling map into `p`. `hid` is scratch of
/// length `width`.
#[inline]
pub(crate) fn schedule_into<S: Scalar>(l: &Layout, theta: &[S], z: &[S], hid: &mut [S], p: &mut [S]) {
    let n_p = l.dims.n_p;
    if n_p == 1 {
        p[0] = S::cst(1.0);
        return;
    }
    let w = l.net.width;
    let nz = l.n_z();
    // logits: channel 0 is pinned to zero
    p[0] = S::zero();
    let mut max = 0.0f64;
    for j in 1..n_p {
        let ch = l.channel(theta, j - 1);
        let mut h = ch.b2;
        for k in 0..w {
            let a = dot(&ch.w1[k * nz..(k + 1) * nz], z) + ch.b1[k];
            hid[k] = l.net.activation.apply(a);
            h = h + ch.w2[k] * hid[k];
        }
        p[j] = h;
        max = max.max(h.val());
    }
    let shift = S::cst(max);
    let mut sum = S::zero();
    for v in p.iter_mut() {
        *v = (*v - shift).exp();
        sum = sum + *v;
    }
    for v in p.iter_mut() {
        *v = *v / sum;
    }
}

/// Scheduling map and its Jacobian `dp/dz` (row-major `n_p x n_z`).
pub(crate) fn schedule_with_jacobian<S: Scalar>(
    l: &Layout,
    theta: &[S],
    z: &[S],
    p: &mut [S],
    jac: &mut [S],
) {
    let n_p = l.dims.n_p;
    let nz = l.n_z();
    for v in jac.iter_mut() {
        *v = S::zero();
    }
    if n_p == 1 {
        p[0] = S::cst(1.0);
        return;
    }
    let w = l.net.width;
    // logits and their gradients; row 0 stays zero
    let mut dlog = vec![S::zero(); n_p * nz];
    p[0] = S::zero();
    let mut max = 0.0f64;
    for j in 1..n_p {
        let ch = l.channel(theta, j - 1);
        let mut h = ch.b2;
        for k in 0..w {
            let row = &ch.w1[k * nz..(k + 1) * nz];
            let a = dot(row, z) + ch.b1[k];
            let (act, d) = l.net.activation.apply_with_deriv(a);
            h = h + ch.w2[k] * act;
            let coef = ch.w2[k] * d;
            for c in 0..nz {
                dlog[j * nz + c] = dlog[j * nz + c] + coef * row[c];
            }
        }
        p[j] = h;
        max = max.max(h.val());
    }
    let shift = S::cst(max);
    let mut sum = S::zero();
    for v in p.iter_mut() {
        *v = (*v - shift).exp();
        sum = sum + *v;
    }
    for v in p.iter_mut() {
        *v = *v / sum;
    }
    // dp_i/dz = p_i (dl_i - sum_k p_k dl_k)
    for c in 0..nz {
        let mut mean = S::zero();
        for k in 0..n_p {
            mean = mean + p[k] * dlog[k * nz + c];
        }
        for i in 0..n_p {
            jac[i * nz + c] = p[i] * (dlog[i * nz + c] - mean);
        }
    }
}

/// Output of the generic rollout.
pub(crate) struct Rollout<S> {
    pub y: Vec<S>,
    pub x: Vec<S>,
    pub p: Vec<S>,
}

/// Generic qLPV rollout. Fails with the first time index whose state (or
/// schedule) is non-finite.
pub(crate) fn rollout<S: Scalar>(l: &Layout, theta: &[S], u: &[S], x0: &[S]) -> Result<Rollout<S>> {
    let d = l.dims;
    let horizon = u.len() / d.n_u;
    let mut y = vec![S::zero(); horizon * d.n_y];
    let mut xs = vec![S::zero(); horizon * d.n_x];
    let mut ps = vec![S::zero(); horizon * d.n_p];
    let mut x = x0.to_vec();
    let mut z = vec![S::zero(); l.n_z()];
    let mut hid = vec![S::zero(); l.net.width.max(1)];
    let mut v = vec![S::zero(); d.n_x];
    let mut bu = vec![S::zero(); d.n_x];
    let c = l.c(theta);
    for t in 0..horizon {
        let ut = &u[t * d.n_u..(t + 1) * d.n_u];
        xs[t * d.n_x..(t + 1) * d.n_x].copy_from_slice(&x);
        matvec(c, d.n_y, d.n_x, &x, &mut y[t * d.n_y..(t + 1) * d.n_y]);
        z[..d.n_x].copy_from_slice(&x);
        z[d.n_x..].copy_from_slice(ut);
        let pt = &mut ps[t * d.n_p..(t + 1) * d.n_p];
        schedule_into(l, theta, &z, &mut hid, pt);
        if pt.iter().any(|q| !q.val().is_finite()) {
            return Err(Error::Unstable { step: t });
        }
        let mut next = vec![S::zero(); d.n_x];
        for i in 0..d.n_p {
            matvec(l.a(theta, i), d.n_x, d.n_x, &x, &mut v);
            matvec(l.b(theta, i), d.n_x, d.n_u, ut, &mut bu);
            let pi = pt[i];
            for r in 0..d.n_x {
                next[r] = next[r] + pi * (v[r] + bu[r]);
            }
        }
        if next.iter().any(|q| !q.val().is_finite()) {
            return Err(Error::Unstable { step: t + 1 });
        }
        x = next;
    }
    Ok(Rollout { y, x: xs, p: ps })
}

/// Outputs of the origin-initialized rollout, written into `y` without
/// recording states or schedules.
pub(crate) fn outputs_into(l: &Layout, theta: &[f64], u: &[f64], y: &mut [f64]) -> Result<()> {
    let d = l.dims;
    let horizon = u.len() / d.n_u;
    let mut x = vec![0.0; d.n_x];
    let mut next = vec![0.0; d.n_x];
    let mut z = vec![0.0; l.n_z()];
    let mut hid = vec![0.0; l.net.width.max(1)];
    let mut p = vec![0.0; d.n_p];
    let mut v = vec![0.0; d.n_x];
    let mut bu = vec![0.0; d.n_x];
    let c = l.c(theta);
    for t in 0..horizon {
        let ut = &u[t * d.n_u..(t + 1) * d.n_u];
        matvec(c, d.n_y, d.n_x, &x, &mut y[t * d.n_y..(t + 1) * d.n_y]);
        z[..d.n_x].copy_from_slice(&x);
        z[d.n_x..].copy_from_slice(ut);
        schedule_into(l, theta, &z, &mut hid, &mut p);
        if p.iter().any(|q| !q.is_finite()) {
            return Err(Error::Unstable { step: t });
        }
        next.iter_mut().for_each(|q| *q = 0.0);
        for i in 0..d.n_p {
            matvec(l.a(theta, i), d.n_x, d.n_x, &x, &mut v);
            matvec(l.b(theta, i), d.n_x, d.n_u, ut, &mut bu);
            for r in 0..d.n_x {
                next[r] += p[i] * (v[r] + bu[r]);
            }
        }
        if next.iter().any(|q| !q.is_finite()) {
            return Err(Error::Unstable { step: t + 1 });
        }
        std::mem::swap(&mut x, &mut next);
    }
    Ok(())
}

/// `p(x, u)`: softmax of `(0, h_2(x,u), ..., h_np(x,u))`.
pub fn scheduling_eval(model: &QlpvModel, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
    let l = model.layout();
    if x.len() != l.dims.n_x || u.len() != l.dims.n_u {
        return Err(dim_err(format!(
            "scheduling_eval expects x in R^{} and u in R^{}",
            l.dims.n_x, l.dims.n_u
        )));
    }
    let mut z = x.to_vec();
    z.extend_from_slice(u);
    let mut hid = vec![0.0; l.net.width.max(1)];
    let mut p = vec![0.0; l.dims.n_p];
    schedule_into(l, model.theta(), &z, &mut hid, &mut p);
    Ok(p)
}

/// Simulates the qLPV model from `x0` (origin when `None`).
pub fn simulate(model: &QlpvModel, u: &[f64], x0: Option<&[f64]>) -> Result<SimulationResult> {
    let l = model.layout();
    check_horizon(u, l.dims.n_u)?;
    let zero = vec![0.0; l.dims.n_x];
    let x0 = x0.unwrap_or(&zero);
    check_x0(x0, l.dims.n_x)?;
    let r = rollout(l, model.theta(), u, x0)?;
    Ok(SimulationResult {
        y: r.y,
        x: r.x,
        p: SchedulingSequence { n_p: l.dims.n_p, p: r.p },
    })
}

/// `F(U|θ)` from the origin.
pub fn predict(model: &QlpvModel, u: &[f64]) -> Result<Vec<f64>> {
    Ok(simulate(model, u, None)?.y)
}

/// Propagates the LTV system obtained by freezing the schedule `P`.
pub fn ltv_simulate(
    model: &QlpvModel,
    p: &SchedulingSequence,
    u: &[f64],
    x0: Option<&[f64]>,
) -> Result<Vec<f64>> {
    let l = model.layout();
    let d = l.dims;
    let horizon = check_horizon(u, d.n_u)?;
    if p.n_p != d.n_p || p.horizon() != horizon {
        return Err(dim_err("schedule does not match model n_p or input horizon"));
    }
    p.validate()?;
    let zero = vec![0.0; d.n_x];
    let x0 = x0.unwrap_or(&zero);
    check_x0(x0, d.n_x)?;
    let theta = model.theta();
    let c = l.c(theta);
    let mut y = vec![0.0; horizon * d.n_y];
    let mut x = x0.to_vec();
    let mut v = vec![0.0; d.n_x];
    let mut bu = vec![0.0; d.n_x];
    for t in 0..horizon {
        let ut = &u[t * d.n_u..(t + 1) * d.n_u];
        matvec(c, d.n_y, d.n_x, &x, &mut y[t * d.n_y..(t + 1) * d.n_y]);
        let pt = p.block(t);
        let mut next = vec![0.0; d.n_x];
        for i in 0..d.n_p {
            matvec(l.a(theta, i), d.n_x, d.n_x, &x, &mut v);
            matvec(l.b(theta, i), d.n_x, d.n_u, ut, &mut bu);
            for r in 0..d.n_x {
                next[r] += pt[i] * (v[r] + bu[r]);
            }
        }
        if next.iter().any(|q| !q.is_finite()) {
            return Err(Error::Unstable { step: t + 1 });
        }
        x = next;
    }
    Ok(y)
}

/// Per-step blended matrices `A(p_t)`, `B(p_t)` for a fixed schedule.
///
/// `A(p)` is linear in `p`, so blending two of these with weight `τ` gives
/// exactly the matrices of the linearly interpolated schedule.
#[derive(Debug, Clone)]
pub struct BlendedSchedule {
    n_x: usize,
    n_u: usize,
    horizon: usize,
    a: Vec<f64>,
    b: Vec<f64>,
}

impl BlendedSchedule {
    pub fn new(model: &QlpvModel, p: &SchedulingSequence) -> Result<Self> {
        let l = model.layout();
        let d = l.dims;
        if p.n_p != d.n_p {
            return Err(dim_err("schedule n_p does not match model"));
        }
        let horizon = p.horizon();
        let (sa, sb) = (d.n_x * d.n_x, d.n_x * d.n_u);
        let mut a = vec![0.0; horizon * sa];
        let mut b = vec![0.0; horizon * sb];
        let theta = model.theta();
        for t in 0..horizon {
            let pt = p.block(t);
            for i in 0..d.n_p {
                let ai = l.a(theta, i);
                let bi = l.b(theta, i);
                for k in 0..sa {
                    a[t * sa + k] += pt[i] * ai[k];
                }
                for k in 0..sb {
                    b[t * sb + k] += pt[i] * bi[k];
                }
            }
        }
        Ok(BlendedSchedule {
            n_x: d.n_x,
            n_u: d.n_u,
            horizon,
            a,
            b,
        })
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// LTV response from the origin under the schedule
    /// `(1-τ)·self + τ·other`, written into `y`.
    pub fn simulate_between(
        &self,
        other: &BlendedSchedule,
        tau: f64,
        c: &[f64],
        n_y: usize,
        u: &[f64],
        y: &mut [f64],
    ) -> Result<()> {
        let (n_x, n_u) = (self.n_x, self.n_u);
        let (sa, sb) = (n_x * n_x, n_x * n_u);
        let mut x = vec![0.0; n_x];
        let mut next = vec![0.0; n_x];
        for t in 0..self.horizon {
            matvec(c, n_y, n_x, &x, &mut y[t * n_y..(t + 1) * n_y]);
            let a0 = &self.a[t * sa..(t + 1) * sa];
            let a1 = &other.a[t * sa..(t + 1) * sa];
            let b0 = &self.b[t * sb..(t + 1) * sb];
            let b1 = &other.b[t * sb..(t + 1) * sb];
            let ut = &u[t * n_u..(t + 1) * n_u];
            for r in 0..n_x {
                // same association as the qLPV recursion, so a constant
                // schedule reproduces it bit for bit
                let mut ax = 0.0;
                for k in 0..n_x {
                    let (e0, e1) = (a0[r * n_x + k], a1[r * n_x + k]);
                    ax += (e0 + tau * (e1 - e0)) * x[k];
                }
                let mut bu = 0.0;
                for k in 0..n_u {
                    let (e0, e1) = (b0[r * n_u + k], b1[r * n_u + k]);
                    bu += (e0 + tau * (e1 - e0)) * ut[k];
                }
                next[r] = ax + bu;
            }
            if next.iter().any(|q| !q.is_finite()) {
                return Err(Error::Unstable { step: t + 1 });
            }
            std::mem::swap(&mut x, &mut next);
        }
        Ok(())
    }
}

/// Dense block lower-triangular `G(P)` with `G(P) U = ltv_simulate(P, U, 0)`.
/// Assembled from explicit transition products; intended for small `T`.
pub fn assemble_g(model: &QlpvModel, p: &SchedulingSequence) -> Result<DMatrix<f64>> {
    let parts = model.parts();
    let d = model.dims();
    if p.n_p != d.n_p {
        return Err(dim_err("schedule n_p does not match model"));
    }
    p.validate()?;
    let horizon = p.horizon();
    let blend = |mats: &[DMatrix<f64>], t: usize| {
        let pt = p.block(t);
        let mut m = DMatrix::zeros(mats[0].nrows(), mats[0].ncols());
        for (i, mi) in mats.iter().enumerate() {
            m += mi * pt[i];
        }
        m
    };
    let a_t: Vec<DMatrix<f64>> = (0..horizon).map(|t| blend(&parts.a, t)).collect();
    let b_t: Vec<DMatrix<f64>> = (0..horizon).map(|t| blend(&parts.b, t)).collect();
    let mut g = DMatrix::zeros(horizon * d.n_y, horizon * d.n_u);
    for s in 0..horizon {
        // transition from the input at time s to the state at time t
        let mut phi_b = b_t[s].clone();
        for t in s + 1..horizon {
            let blk = &parts.c * &phi_b;
            g.view_mut((t * d.n_y, s * d.n_u), (d.n_y, d.n_u)).copy_from(&blk);
            phi_b = &a_t[t] * phi_b;
        }
    }
    Ok(g)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SensitivityMethod {
    /// Propagates `dx_t/dU` alongside the state.
    #[default]
    Forward,
    /// Central differences, step `1e-6·max(1,|U_j|)`.
    FiniteDifference,
}

/// Forward sensitivities of outputs and schedule with respect to `U`.
pub(crate) struct Sensitivities<S> {
    /// `dY/dU`, row-major `(T n_y) x (T n_u)`.
    pub dy: Vec<S>,
    /// `dP/dU`, row-major `(T n_p) x (T n_u)`.
    pub dp: Vec<S>,
}

pub(crate) fn forward_sensitivity<S: Scalar>(l: &Layout, theta: &[S], u: &[S]) -> Result<Sensitivities<S>> {
    let d = l.dims;
    let horizon = u.len() / d.n_u;
    let nu_tot = horizon * d.n_u;
    let nz = l.n_z();
    let c = l.c(theta);
    let mut p_all = vec![S::zero(); horizon * d.n_p];
    let mut dy = vec![S::zero(); horizon * d.n_y * nu_tot];
    let mut dp = vec![S::zero(); horizon * d.n_p * nu_tot];
    let mut x = vec![S::zero(); d.n_x];
    let mut sens = vec![S::zero(); d.n_x * nu_tot];
    let mut z = vec![S::zero(); nz];
    let mut jac = vec![S::zero(); d.n_p * nz];
    let mut v = vec![S::zero(); d.n_x];
    let mut bu = vec![S::zero(); d.n_x];
    for t in 0..horizon {
        let ut = &u[t * d.n_u..(t + 1) * d.n_u];
        let seen = t * d.n_u; // columns touched by S_t
        let active = (t + 1) * d.n_u;
        for r in 0..d.n_y {
            let row = &mut dy[(t * d.n_y + r) * nu_tot..(t * d.n_y + r + 1) * nu_tot];
            for k in 0..d.n_x {
                let cr = c[r * d.n_x + k];
                for col in 0..seen {
                    row[col] = row[col] + cr * sens[k * nu_tot + col];
                }
            }
        }
        z[..d.n_x].copy_from_slice(&x);
        z[d.n_x..].copy_from_slice(ut);
        let pt = &mut p_all[t * d.n_p..(t + 1) * d.n_p];
        schedule_with_jacobian(l, theta, &z, pt, &mut jac);
        if pt.iter().any(|q| !q.val().is_finite()) {
            return Err(Error::Unstable { step: t });
        }
        let pt = pt.to_vec();
        // dp_t/dU = Jx S_t + Ju E_t
        for i in 0..d.n_p {
            let row = &mut dp[(t * d.n_p + i) * nu_tot..(t * d.n_p + i + 1) * nu_tot];
            for k in 0..d.n_x {
                let jk = jac[i * nz + k];
                for col in 0..seen {
                    row[col] = row[col] + jk * sens[k * nu_tot + col];
                }
            }
            for k in 0..d.n_u {
                row[seen + k] = row[seen + k] + jac[i * nz + d.n_x + k];
            }
        }
        let mut next_sens = vec![S::zero(); d.n_x * nu_tot];
        let mut next = vec![S::zero(); d.n_x];
        for i in 0..d.n_p {
            let ai = l.a(theta, i);
            let bi = l.b(theta, i);
            matvec(ai, d.n_x, d.n_x, &x, &mut v);
            matvec(bi, d.n_x, d.n_u, ut, &mut bu);
            let pi = pt[i];
            let dpi = &dp[(t * d.n_p + i) * nu_tot..(t * d.n_p + i + 1) * nu_tot];
            for r in 0..d.n_x {
                let vr = v[r] + bu[r];
                next[r] = next[r] + pi * vr;
                let out = &mut next_sens[r * nu_tot..(r + 1) * nu_tot];
                for k in 0..d.n_x {
                    let a = pi * ai[r * d.n_x + k];
                    for col in 0..seen {
                        out[col] = out[col] + a * sens[k * nu_tot + col];
                    }
                }
                for k in 0..d.n_u {
                    out[seen + k] = out[seen + k] + pi * bi[r * d.n_u + k];
                }
                for col in 0..active {
                    out[col] = out[col] + vr * dpi[col];
                }
            }
        }
        if next.iter().any(|q| !q.val().is_finite()) {
            return Err(Error::Unstable { step: t + 1 });
        }
        x = next;
        sens = next_sens;
    }
    if let Some(i) = dy.iter().position(|q| !q.val().is_finite()) {
        return Err(Error::NonFinite { what: "output sensitivity", index: i });
    }
    Ok(Sensitivities { dy, dp })
}

/// `Λ(U|θ) = ∇_U F(U|θ)` for the origin-initialized map.
pub fn output_sensitivity(model: &QlpvModel, u: &[f64], method: SensitivityMethod) -> Result<DMatrix<f64>> {
    let l = model.layout();
    let horizon = check_horizon(u, l.dims.n_u)?;
    let (rows, cols) = (horizon * l.dims.n_y, horizon * l.dims.n_u);
    match method {
        SensitivityMethod::Forward => {
            let s = forward_sensitivity(l, model.theta(), u)?;
            Ok(DMatrix::from_row_slice(rows, cols, &s.dy))
        }
        SensitivityMethod::FiniteDifference => {
            let mut jac = DMatrix::zeros(rows, cols);
            let mut up = u.to_vec();
            for j in 0..cols {
                let h = 1e-6 * u[j].abs().max(1.0);
                up[j] = u[j] + h;
                let yp = predict(model, &up)?;
                up[j] = u[j] - h;
                let ym = predict(model, &up)?;
                up[j] = u[j];
                for r in 0..rows {
                    jac[(r, j)] = (yp[r] - ym[r]) / (2.0 * h);
                }
            }
            if let Some(i) = jac.iter().position(|q| !q.is_finite()) {
                return Err(Error::NonFinite { what: "output sensitivity", index: i });
            }
            Ok(jac)
        }
    }
}

/// `∇_U P(U|θ)`, row-major `(T n_p) x (T n_u)`.
pub fn schedule_sensitivity(model: &QlpvModel, u: &[f64]) -> Result<DMatrix<f64>> {
    let l = model.layout();
    let horizon = check_horizon(u, l.dims.n_u)?;
    let s = forward_sensitivity(l, model.theta(), u)?;
    Ok(DMatrix::from_row_slice(horizon * l.dims.n_p, horizon * l.dims.n_u, &s.dp))
}
