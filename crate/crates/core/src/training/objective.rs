//! Regularized identification objective over a decision vector holding θ
//! and, when initial states are estimated, one `x0` per trajectory.

use serde::{Deserialize, Serialize};

use super::penalty::{gradient_penalty_value_grad, manifold_value_grad, multishoot_value_grad, ShootSamples};
use crate::adjoint::{backprop, Cotangents};
use crate::data::{Dataset, RegPool};
use crate::error::{Error, Result};
use crate::model::{Layout, QlpvModel};
use crate::par;
use crate::scalar::{sq_norm, KahanSum};
use crate::sim::rollout;

/// Objective value reported for rollouts that blow up.
pub const UNSTABLE_BASE: f64 = 1e12;
const UNSTABLE_PER_STEP: f64 = 1e9;

#[derive(Debug, Clone, PartialEq)]
pub enum Penalty {
    None,
    Gradient(RegPool),
    Manifold(RegPool),
    MultiShoot(ShootSamples),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegularizerSpec {
    pub kappa1: f64,
    pub kappa2: f64,
    pub penalty: Penalty,
}

impl RegularizerSpec {
    pub fn unregularized() -> Self {
        RegularizerSpec { kappa1: 0.0, kappa2: 0.0, penalty: Penalty::None }
    }

    pub fn validate(&self, data: &Dataset) -> Result<()> {
        if !(self.kappa1 >= 0.0 && self.kappa2 >= 0.0) {
            return Err(Error::Invalid("regularization weights must be nonnegative".into()));
        }
        if self.kappa2 > 0.0 {
            let empty = match &self.penalty {
                Penalty::None => true,
                Penalty::Gradient(p) | Penalty::Manifold(p) => p.is_empty(),
                Penalty::MultiShoot(s) => s.sets.iter().flatten().all(|p| p.is_empty()),
            };
            if empty {
                return Err(Error::Invalid("smoothness weight is positive but the pool is empty".into()));
            }
        }
        if let Penalty::MultiShoot(s) = &self.penalty {
            let horizon = data.horizon()?;
            if s.shoot_len == 0 || horizon % s.shoot_len != 0 {
                return Err(Error::Invalid(format!(
                    "shooting length {} does not divide the horizon {horizon}",
                    s.shoot_len
                )));
            }
            if s.sets.len() != data.len() {
                return Err(Error::Invalid("one set of shooting samples per trajectory is required".into()));
            }
        }
        Ok(())
    }
}

/// How trajectory initial states enter the problem.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum X0Mode {
    /// Every trajectory starts at the origin.
    #[default]
    Zero,
    /// Use the `x0` stored on each trajectory (origin if absent).
    Given,
    /// Optimize one `x0` per trajectory jointly with θ.
    Estimate,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveParts {
    pub fit: f64,
    pub l2: f64,
    pub penalty: f64,
    pub total: f64,
}

/// Objective evaluation; `unstable` carries the first step at which some
/// rollout blew up, in which case `parts` is meaningless and `value` is the
/// finite sentinel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub value: f64,
    pub parts: ObjectiveParts,
    pub unstable: Option<usize>,
}

impl Evaluation {
    pub fn is_stable(&self) -> bool {
        self.unstable.is_none()
    }
}

pub struct Problem<'a> {
    layout: Layout,
    data: &'a Dataset,
    reg: &'a RegularizerSpec,
    x0_mode: X0Mode,
    fixed_x0: Vec<Vec<f64>>,
    horizon: usize,
}

impl<'a> Problem<'a> {
    pub fn new(layout: Layout, data: &'a Dataset, reg: &'a RegularizerSpec, x0_mode: X0Mode) -> Result<Self> {
        let horizon = data.horizon()?;
        reg.validate(data)?;
        let d = layout.dims;
        for (i, t) in data.iter().enumerate() {
            if t.n_u != d.n_u || t.n_y != d.n_y {
                return Err(Error::Dimension(format!("trajectory {i} does not match the model dimensions")));
            }
            if let Some(x0) = &t.x0 {
                if x0.len() != d.n_x {
                    return Err(Error::Dimension(format!("trajectory {i} initial state has length {}", x0.len())));
                }
            }
        }
        let fixed_x0 = data
            .iter()
            .map(|t| match (x0_mode, &t.x0) {
                (X0Mode::Zero, _) | (_, None) => vec![0.0; d.n_x],
                (_, Some(x0)) => x0.clone(),
            })
            .collect();
        Ok(Problem { layout, data, reg, x0_mode, fixed_x0, horizon })
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn n_decision(&self) -> usize {
        self.layout.n_theta() + self.n_x0_vars()
    }

    fn n_x0_vars(&self) -> usize {
        match self.x0_mode {
            X0Mode::Estimate => self.data.len() * self.layout.dims.n_x,
            _ => 0,
        }
    }

    /// θ followed by the starting initial states (when estimated).
    pub fn initial_point(&self, theta: &[f64]) -> Vec<f64> {
        let mut z = theta.to_vec();
        if self.x0_mode == X0Mode::Estimate {
            for x0 in &self.fixed_x0 {
                z.extend_from_slice(x0);
            }
        }
        z
    }

    /// Initial states encoded in a decision vector.
    pub fn x0s(&self, z: &[f64]) -> Vec<Vec<f64>> {
        match self.x0_mode {
            X0Mode::Estimate => z[self.layout.n_theta()..]
                .chunks(self.layout.dims.n_x)
                .map(<[f64]>::to_vec)
                .collect(),
            _ => self.fixed_x0.clone(),
        }
    }

    fn sentinel(&self, step: usize) -> Evaluation {
        let remaining = self.horizon.saturating_sub(step) as f64;
        Evaluation {
            value: UNSTABLE_BASE + UNSTABLE_PER_STEP * remaining,
            parts: ObjectiveParts::default(),
            unstable: Some(step),
        }
    }

    pub fn value(&self, z: &[f64]) -> Result<Evaluation> {
        self.evaluate(z, None)
    }

    /// Value and gradient. The gradient is zero when the evaluation is
    /// unstable.
    pub fn value_grad(&self, z: &[f64]) -> Result<(Evaluation, Vec<f64>)> {
        let mut g = vec![0.0; z.len()];
        let e = self.evaluate(z, Some(&mut g))?;
        if e.is_stable() {
            if let Some(i) = g.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite { what: "objective gradient", index: i });
            }
        } else {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
        Ok((e, g))
    }

    fn evaluate(&self, z: &[f64], mut grad: Option<&mut [f64]>) -> Result<Evaluation> {
        if z.len() != self.n_decision() {
            return Err(Error::Dimension(format!(
                "decision vector has length {}, expected {}",
                z.len(),
                self.n_decision()
            )));
        }
        match self.evaluate_inner(z, grad.as_deref_mut()) {
            Err(Error::Unstable { step }) => Ok(self.sentinel(step)),
            other => other,
        }
    }

    fn evaluate_inner(&self, z: &[f64], mut grad: Option<&mut [f64]>) -> Result<Evaluation> {
        let l = &self.layout;
        let nt = l.n_theta();
        let theta = &z[..nt];
        let x0s = self.x0s(z);
        let nd = self.data.len() as f64;
        let want = grad.is_some();

        let idx: Vec<usize> = (0..self.data.len()).collect();
        let per: Vec<Result<(f64, Option<(Vec<f64>, Vec<f64>)>)>> = par::map(&idx, |&i| {
            let t = &self.data.trajectories[i];
            let r = rollout(l, theta, &t.u, &x0s[i])?;
            let resid: Vec<f64> = r.y.iter().zip(&t.y).map(|(a, b)| a - b).collect();
            let loss = sq_norm(&resid);
            if !want {
                return Ok((loss, None));
            }
            let gy: Vec<f64> = resid.iter().map(|v| 2.0 * v / nd).collect();
            let mut g = vec![0.0; nt];
            let adj = backprop(l, theta, &t.u, &r.x, &r.p, Cotangents { gy: Some(&gy), ..Default::default() }, &mut g);
            Ok((loss, Some((g, adj.x0))))
        });
        let mut fit = KahanSum::new();
        let mut x0_grads = Vec::new();
        for item in per {
            let (loss, gs) = item?;
            fit.add(loss);
            if let (Some(dst), Some((g, gx0))) = (grad.as_deref_mut(), gs) {
                for (a, b) in dst[..nt].iter_mut().zip(&g) {
                    *a += b;
                }
                x0_grads.push(gx0);
            }
        }
        let fit = fit.value() / nd;
        let l2 = self.reg.kappa1 * sq_norm(theta);
        if let Some(dst) = grad.as_deref_mut() {
            for (a, b) in dst[..nt].iter_mut().zip(theta) {
                *a += 2.0 * self.reg.kappa1 * b;
            }
        }

        let mut penalty = 0.0;
        if self.reg.kappa2 > 0.0 {
            let mut pg = if want { Some(vec![0.0; nt]) } else { None };
            match &self.reg.penalty {
                Penalty::None => {}
                Penalty::Gradient(pool) => {
                    penalty = gradient_penalty_value_grad(l, theta, pool, pg.as_deref_mut())?;
                }
                Penalty::Manifold(pool) => {
                    penalty = manifold_value_grad(l, theta, pool, pg.as_deref_mut())?;
                }
                Penalty::MultiShoot(samples) => {
                    let (v, gx) = multishoot_value_grad(l, theta, self.data, &x0s, samples, pg.as_deref_mut())?;
                    penalty = v;
                    if want {
                        for (acc, g) in x0_grads.iter_mut().zip(&gx) {
                            for (a, b) in acc.iter_mut().zip(g) {
                                *a += self.reg.kappa2 * b;
                            }
                        }
                    }
                }
            }
            if let (Some(dst), Some(pg)) = (grad.as_deref_mut(), pg) {
                for (a, b) in dst[..nt].iter_mut().zip(&pg) {
                    *a += self.reg.kappa2 * b;
                }
            }
        }
        if let Some(dst) = grad {
            if self.x0_mode == X0Mode::Estimate {
                let n_x = l.dims.n_x;
                for (i, g) in x0_grads.iter().enumerate() {
                    dst[nt + i * n_x..nt + (i + 1) * n_x].copy_from_slice(g);
                }
            }
        }
        let penalty_term = self.reg.kappa2 * penalty;
        let parts = ObjectiveParts {
            fit,
            l2,
            penalty,
            total: fit + l2 + penalty_term,
        };
        if !parts.total.is_finite() {
            return Err(Error::NonFinite { what: "objective", index: 0 });
        }
        Ok(Evaluation { value: parts.total, parts, unstable: None })
    }
}

/// `(1/N_d) Σ_i ||Y_i - F(U_i, x0_i|θ)||²` with the initial states stored on
/// the trajectories (origin when absent).
pub fn fit_loss(model: &QlpvModel, data: &Dataset) -> Result<f64> {
    let reg = RegularizerSpec::unregularized();
    let p = Problem::new(*model.layout(), data, &reg, X0Mode::Given)?;
    let e = p.value(model.theta())?;
    match e.unstable {
        Some(step) => Err(Error::Unstable { step }),
        None => Ok(e.parts.fit),
    }
}

/// All objective parts at the model parameters. With `X0Mode::Estimate` the
/// trajectories' stored initial states are used as the state part.
pub fn total_objective(model: &QlpvModel, data: &Dataset, reg: &RegularizerSpec, x0_mode: X0Mode) -> Result<Evaluation> {
    let p = Problem::new(*model.layout(), data, reg, x0_mode)?;
    p.value(&p.initial_point(model.theta()))
}

/// Gradient of the total objective over the full decision vector.
pub fn objective_gradient(model: &QlpvModel, data: &Dataset, reg: &RegularizerSpec, x0_mode: X0Mode) -> Result<Vec<f64>> {
    let p = Problem::new(*model.layout(), data, reg, x0_mode)?;
    let (e, g) = p.value_grad(&p.initial_point(model.theta()))?;
    match e.unstable {
        Some(step) => Err(Error::Unstable { step }),
        None => Ok(g),
    }
}
