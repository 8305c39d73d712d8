//! Regularized identification: objective, penalties, Adam→BFGS training and
//! initial-state estimation.

mod objective;
mod optim;
mod penalty;

use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use objective::{
    fit_loss, objective_gradient, total_objective, Evaluation, ObjectiveParts, Penalty, Problem, RegularizerSpec,
    X0Mode, UNSTABLE_BASE,
};
pub use optim::{AdamConfig, BfgsConfig, Phase, TrainLogRecord};
pub use penalty::{gradient_penalty, manifold_penalty, multishoot_penalty, ShootSamples};

use crate::adjoint::{backprop, Cotangents};
use crate::error::{Error, Result};
use crate::model::{Dims, NetSpec, QlpvModel};
use crate::sim::rollout;
use optim::{adam, bfgs, Best, Logger, Oracle};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub adam_iters: usize,
    pub adam_step: f64,
    pub bfgs_max_iters: usize,
    pub bfgs_grad_tol: f64,
    /// Overrides the starting parameters passed to [`train`].
    #[serde(skip)]
    pub warm_start: Option<Vec<f64>>,
    /// Seed of the parameter initializer.
    pub seed: u64,
    pub x0_mode: X0Mode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            adam_iters: 1000,
            adam_step: 1e-3,
            bfgs_max_iters: 2000,
            bfgs_grad_tol: 1e-9,
            warm_start: None,
            seed: 0,
            x0_mode: X0Mode::Zero,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.adam_step > 0.0) || !(self.bfgs_grad_tol >= 0.0) {
            return Err(Error::Invalid("optimizer step must be positive and tolerance nonnegative".into()));
        }
        Ok(())
    }

    /// Seeded random model used when no warm start is available.
    pub fn initial_model(&self, dims: Dims, net: NetSpec) -> Result<QlpvModel> {
        QlpvModel::random(dims, net, self.seed)
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig { iters: self.adam_iters, step: self.adam_step, ..Default::default() }
    }

    fn bfgs(&self) -> BfgsConfig {
        BfgsConfig { max_iters: self.bfgs_max_iters, grad_tol: self.bfgs_grad_tol, ..Default::default() }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: QlpvModel,
    /// Initial state used for each training trajectory.
    pub x0s: Vec<Vec<f64>>,
    pub start: Evaluation,
    pub end: Evaluation,
    /// Best objective at the end of the Adam phase.
    pub after_adam: f64,
    pub log: Vec<TrainLogRecord>,
}

impl Oracle for Problem<'_> {
    fn value(&self, z: &[f64]) -> Result<(f64, bool)> {
        let e = Problem::value(self, z)?;
        Ok((e.value, e.is_stable()))
    }

    fn value_grad(&self, z: &[f64]) -> Result<(f64, bool, Vec<f64>)> {
        let (e, g) = Problem::value_grad(self, z)?;
        Ok((e.value, e.is_stable(), g))
    }
}

/// Adam followed by BFGS from the best Adam iterate. Returns the best
/// objective iterate seen; its value never exceeds the starting one.
pub fn train(data: &crate::data::Dataset, reg: &RegularizerSpec, cfg: &TrainConfig, init: &QlpvModel) -> Result<TrainOutcome> {
    cfg.validate()?;
    let theta0 = cfg.warm_start.as_deref().unwrap_or(init.theta());
    if theta0.len() != init.layout().n_theta() {
        return Err(Error::Dimension("warm start has the wrong length".into()));
    }
    let problem = Problem::new(*init.layout(), data, reg, cfg.x0_mode)?;
    let z0 = problem.initial_point(theta0);
    let start = problem.value(&z0)?;
    let mut best = Best::new(z0.clone(), start.value, start.is_stable());
    let mut log = Vec::new();
    let t0 = Instant::now();
    {
        let mut logger = Logger { start: t0, sink: &mut log, offset: 0 };
        adam(&problem, &z0, &cfg.adam(), &mut best, &mut logger)?;
    }
    let after_adam = best.value;
    if best.stable {
        let from = best.z.clone();
        let mut logger = Logger { start: t0, sink: &mut log, offset: 0 };
        bfgs(&problem, &from, &cfg.bfgs(), &mut best, &mut logger)?;
    }
    if !best.stable {
        return Err(Error::Diverged);
    }
    let nt = init.layout().n_theta();
    let model = init.with_theta(best.z[..nt].to_vec())?;
    let end = problem.value(&best.z)?;
    Ok(TrainOutcome {
        model,
        x0s: problem.x0s(&best.z),
        start,
        end,
        after_adam,
        log,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct X0Estimate {
    pub x0: Vec<f64>,
    /// Squared prefix residual at `x0`.
    pub residual: f64,
    /// Set when the prefix is shorter than the state or the optimizer failed.
    pub warning: bool,
}

struct PrefixFit<'a> {
    model: &'a QlpvModel,
    u: &'a [f64],
    y: &'a [f64],
}

impl Oracle for PrefixFit<'_> {
    fn value(&self, z: &[f64]) -> Result<(f64, bool)> {
        match rollout(self.model.layout(), self.model.theta(), self.u, z) {
            Ok(r) => Ok((r.y.iter().zip(self.y).map(|(a, b)| (a - b) * (a - b)).sum(), true)),
            Err(Error::Unstable { .. }) => Ok((UNSTABLE_BASE, false)),
            Err(e) => Err(e),
        }
    }

    fn value_grad(&self, z: &[f64]) -> Result<(f64, bool, Vec<f64>)> {
        let l = self.model.layout();
        let r = match rollout(l, self.model.theta(), self.u, z) {
            Ok(r) => r,
            Err(Error::Unstable { .. }) => return Ok((UNSTABLE_BASE, false, vec![0.0; z.len()])),
            Err(e) => return Err(e),
        };
        let resid: Vec<f64> = r.y.iter().zip(self.y).map(|(a, b)| a - b).collect();
        let gy: Vec<f64> = resid.iter().map(|v| 2.0 * v).collect();
        let mut scratch = vec![0.0; l.n_theta()];
        let adj = backprop(l, self.model.theta(), self.u, &r.x, &r.p, Cotangents { gy: Some(&gy), ..Default::default() }, &mut scratch);
        Ok((resid.iter().map(|v| v * v).sum(), true, adj.x0))
    }
}

/// Least-squares fit of the initial state to the first `n_prefix` outputs,
/// started from the origin.
pub fn estimate_initial_state(model: &QlpvModel, u: &[f64], y_prefix: &[f64], n_prefix: usize) -> Result<X0Estimate> {
    let d = model.dims();
    if u.len() < n_prefix * d.n_u || y_prefix.len() < n_prefix * d.n_y {
        return Err(Error::Dimension("prefix longer than the supplied data".into()));
    }
    let fit = PrefixFit {
        model,
        u: &u[..n_prefix * d.n_u],
        y: &y_prefix[..n_prefix * d.n_y],
    };
    let zero = vec![0.0; d.n_x];
    let (f0, stable0) = fit.value(&zero)?;
    let mut warning = n_prefix < d.n_x;
    if warning {
        log::warn!("initial state estimated from {n_prefix} samples for a state of dimension {}", d.n_x);
    }
    if !stable0 {
        return Ok(X0Estimate { x0: zero, residual: f64::INFINITY, warning: true });
    }
    let mut best = Best::new(zero.clone(), f0, true);
    let mut sink = Vec::new();
    let mut logger = Logger { start: Instant::now(), sink: &mut sink, offset: 0 };
    let cfg = BfgsConfig { max_iters: 500, grad_tol: 1e-13, ..Default::default() };
    if let Err(e) = bfgs(&fit, &zero, &cfg, &mut best, &mut logger) {
        log::warn!("initial-state estimation failed: {e}");
        warning = true;
        return Ok(X0Estimate { x0: zero, residual: f0, warning });
    }
    Ok(X0Estimate { x0: best.z, residual: best.value, warning })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{seeded_rng, BoxSet, Dataset, NeighborhoodSpec, RegPool};
    use crate::sim::{simulate, Trajectory};
    use crate::test_util::random_input;

    fn data_from(m: &QlpvModel, n: usize, horizon: usize, seed: u64) -> Dataset {
        Dataset::from_trajectories(
            (0..n)
                .map(|i| {
                    let u = random_input(horizon, m.dims().n_u, seed + i as u64);
                    let y = simulate(m, &u, None).unwrap().y;
                    Trajectory::new(m.dims().n_u, m.dims().n_y, u, y).unwrap()
                })
                .collect(),
        )
    }

    #[test]
    fn global_minimum_is_a_fixed_point() {
        let m = QlpvModel::random(Dims::new(3, 2, 2, 3).unwrap(), NetSpec::default(), 1).unwrap();
        let d = data_from(&m, 3, 8, 10);
        let cfg = TrainConfig { adam_iters: 20, bfgs_max_iters: 20, ..Default::default() };
        let out = train(&d, &RegularizerSpec::unregularized(), &cfg, &m).unwrap();
        assert_eq!(out.start.value, 0.0);
        assert_eq!(out.end.value, 0.0);
        assert_eq!(out.model.theta(), m.theta());
    }

    #[test]
    fn lti_data_is_recovered() {
        let dims = Dims::new(2, 1, 1, 1).unwrap();
        let truth = QlpvModel::random(dims, NetSpec::default(), 3).unwrap();
        let d = data_from(&truth, 5, 10, 20);
        let init = QlpvModel::random(dims, NetSpec::default(), 4).unwrap();
        let cfg = TrainConfig { adam_iters: 300, adam_step: 1e-2, bfgs_max_iters: 1000, bfgs_grad_tol: 1e-12, ..Default::default() };
        let out = train(&d, &RegularizerSpec::unregularized(), &cfg, &init).unwrap();
        let fit = fit_loss(&out.model, &d).unwrap();
        assert!(fit < 1e-8, "fit {fit}");
        assert!(out.log.iter().any(|r| r.phase == Phase::Adam));
        assert!(out.log.iter().any(|r| r.phase == Phase::Bfgs));
    }

    #[test]
    fn best_iterate_never_worse_than_start() {
        let truth = QlpvModel::random(Dims::new(3, 2, 2, 3).unwrap(), NetSpec::default(), 5).unwrap();
        let d = data_from(&truth, 4, 8, 30);
        let init = QlpvModel::random(Dims::new(3, 2, 2, 3).unwrap(), NetSpec::default(), 6).unwrap();
        let pool = RegPool::new((0..6).map(|i| random_input(8, 2, 90 + i)).collect()).unwrap();
        let reg = RegularizerSpec { kappa1: 1e-4, kappa2: 0.01, penalty: Penalty::Manifold(pool) };
        let cfg = TrainConfig { adam_iters: 100, adam_step: 1e-2, bfgs_max_iters: 100, ..Default::default() };
        let out = train(&d, &reg, &cfg, &init).unwrap();
        assert!(out.end.value <= out.start.value);
        assert!(out.end.value < out.after_adam);
        assert!(out.after_adam < out.start.value);
        // warm start overrides the initial model
        let warm = TrainConfig { warm_start: Some(out.model.theta().to_vec()), adam_iters: 0, bfgs_max_iters: 0, ..cfg };
        let again = train(&d, &reg, &warm, &init).unwrap();
        assert_eq!(again.model.theta(), out.model.theta());
    }

    #[test]
    fn training_is_deterministic() {
        let truth = QlpvModel::random(Dims::new(2, 1, 1, 2).unwrap(), NetSpec::default(), 7).unwrap();
        let d = data_from(&truth, 3, 6, 40);
        let init = QlpvModel::random(Dims::new(2, 1, 1, 2).unwrap(), NetSpec::default(), 8).unwrap();
        let pool = RegPool::new((0..5).map(|i| random_input(6, 1, 60 + i)).collect()).unwrap();
        let reg = RegularizerSpec { kappa1: 1e-4, kappa2: 0.01, penalty: Penalty::Manifold(pool) };
        let cfg = TrainConfig { adam_iters: 50, bfgs_max_iters: 50, ..Default::default() };
        let a = train(&d, &reg, &cfg, &init).unwrap();
        let b = train(&d, &reg, &cfg, &init).unwrap();
        assert_eq!(a.model.fingerprint(), b.model.fingerprint());
        let single = crate::par::with_threads(1, || train(&d, &reg, &cfg, &init).unwrap());
        assert_eq!(a.model.fingerprint(), single.model.fingerprint());
    }

    #[test]
    fn estimated_initial_states_fit_shifted_data() {
        let dims = Dims::new(2, 1, 1, 2).unwrap();
        let truth = QlpvModel::random(dims, NetSpec::default(), 9).unwrap();
        let mut trajs = Vec::new();
        for i in 0..3 {
            let u = random_input(6, 1, 70 + i);
            let x0 = vec![0.5 - 0.3 * i as f64, 0.2];
            let y = simulate(&truth, &u, Some(&x0)).unwrap().y;
            trajs.push(Trajectory::new(1, 1, u, y).unwrap());
        }
        let d = Dataset::from_trajectories(trajs);
        let nb = NeighborhoodSpec::new(0.2, BoxSet::unit(1), true).unwrap();
        let s = ShootSamples::sample(&d, 3, 3, &nb, &mut seeded_rng(1)).unwrap();
        let reg = RegularizerSpec { kappa1: 1e-3, kappa2: 0.01, penalty: Penalty::MultiShoot(s) };
        let cfg = TrainConfig { adam_iters: 50, bfgs_max_iters: 200, x0_mode: X0Mode::Estimate, ..Default::default() };
        let out = train(&d, &reg, &cfg, &truth).unwrap();
        assert!(out.end.value < out.start.value);
        assert_eq!(out.x0s.len(), 3);
        assert!(out.x0s.iter().any(|x| x.iter().any(|v| *v != 0.0)));
    }

    #[test]
    fn initial_state_from_zero_data_is_zero() {
        let m = QlpvModel::random(Dims::new(3, 2, 2, 3).unwrap(), NetSpec::default(), 11).unwrap();
        let u = random_input(8, 2, 1);
        let y = simulate(&m, &u, None).unwrap().y;
        let e = estimate_initial_state(&m, &u, &y, 5).unwrap();
        assert!(e.x0.iter().map(|v| v * v).sum::<f64>().sqrt() < 1e-6);
        assert!(!e.warning);
    }

    #[test]
    fn initial_state_of_linear_model_is_recovered() {
        let m = QlpvModel::random(Dims::new(3, 1, 2, 1).unwrap(), NetSpec::default(), 12).unwrap();
        let x_true = vec![0.7, -0.4, 0.25];
        let u = random_input(10, 1, 2);
        let y = simulate(&m, &u, Some(&x_true)).unwrap().y;
        let e = estimate_initial_state(&m, &u, &y, 5).unwrap();
        for (a, b) in e.x0.iter().zip(&x_true) {
            assert!((a - b).abs() < 1e-6, "{:?}", e.x0);
        }
    }

    #[test]
    fn zero_prefix_gives_zero_residual() {
        let m = QlpvModel::random(Dims::new(3, 1, 1, 2).unwrap(), NetSpec::default(), 13).unwrap();
        let e = estimate_initial_state(&m, &[0.0; 5], &[0.0; 5], 5).unwrap();
        assert_eq!(e.residual, 0.0);
        let short = estimate_initial_state(&m, &[0.0; 5], &[0.0; 5], 2).unwrap();
        assert!(short.warning);
    }
}
