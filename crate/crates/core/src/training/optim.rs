//! Adam and dense BFGS over a finite-valued objective. Unstable points are
//! expected to return a large finite value, so both methods can back off.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Adam,
    Bfgs,
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRecord {
    pub iteration: usize,
    pub phase: Phase,
    pub objective: f64,
    pub grad_norm: f64,
    /// Seconds since the start of training.
    pub wall: f64,
}

/// Value-and-gradient oracle. `stable` is false for sentinel values.
pub(crate) trait Oracle {
    fn value(&self, z: &[f64]) -> Result<(f64, bool)>;
    fn value_grad(&self, z: &[f64]) -> Result<(f64, bool, Vec<f64>)>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub iters: usize,
    pub step: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { iters: 1000, step: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BfgsConfig {
    pub max_iters: usize,
    pub grad_tol: f64,
    pub armijo: f64,
    pub shrink: f64,
    pub max_backtracks: usize,
}

impl Default for BfgsConfig {
    fn default() -> Self {
        BfgsConfig { max_iters: 1000, grad_tol: 1e-9, armijo: 1e-4, shrink: 0.5, max_backtracks: 50 }
    }
}

/// Best stable point seen so far.
#[derive(Debug, Clone)]
pub(crate) struct Best {
    pub z: Vec<f64>,
    pub value: f64,
    pub stable: bool,
}

impl Best {
    pub fn new(z: Vec<f64>, value: f64, stable: bool) -> Self {
        Best { z, value, stable }
    }

    fn offer(&mut self, z: &[f64], value: f64, stable: bool) {
        if stable && (!self.stable || value < self.value) {
            self.z.copy_from_slice(z);
            self.value = value;
            self.stable = true;
        }
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) struct Logger<'a> {
    pub start: Instant,
    pub sink: &'a mut Vec<TrainLogRecord>,
    pub offset: usize,
}

impl Logger<'_> {
    fn push(&mut self, phase: Phase, objective: f64, grad: &[f64]) {
        let iteration = self.offset + self.sink.len();
        self.sink.push(TrainLogRecord {
            iteration,
            phase,
            objective,
            grad_norm: norm(grad),
            wall: self.start.elapsed().as_secs_f64(),
        });
    }
}

/// Bias-corrected Adam. On an unstable iterate the method returns to the
/// last stable point, clears its moments and halves the step.
pub(crate) fn adam(f: &impl Oracle, z0: &[f64], cfg: &AdamConfig, best: &mut Best, log: &mut Logger<'_>) -> Result<Vec<f64>> {
    let n = z0.len();
    let mut z = z0.to_vec();
    let mut last_good = z0.to_vec();
    let mut m = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut t = 0i32;
    let mut step = cfg.step;
    for _ in 0..cfg.iters {
        let (val, stable, g) = f.value_grad(&z)?;
        log.push(Phase::Adam, val, &g);
        if !stable {
            z.copy_from_slice(&last_good);
            m.iter_mut().for_each(|q| *q = 0.0);
            v.iter_mut().for_each(|q| *q = 0.0);
            t = 0;
            step *= 0.5;
            continue;
        }
        best.offer(&z, val, true);
        last_good.copy_from_slice(&z);
        t += 1;
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        for i in 0..n {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            z[i] -= step * (m[i] / c1) / ((v[i] / c2).sqrt() + cfg.eps);
        }
    }
    let (val, stable) = f.value(&z)?;
    best.offer(&z, val, stable);
    Ok(if stable { z } else { last_good })
}

/// Dense inverse-Hessian BFGS with Armijo backtracking.
pub(crate) fn bfgs(f: &impl Oracle, z0: &[f64], cfg: &BfgsConfig, best: &mut Best, log: &mut Logger<'_>) -> Result<Vec<f64>> {
    let n = z0.len();
    let mut z = z0.to_vec();
    let (mut fz, stable, mut g) = f.value_grad(&z)?;
    if !stable {
        return Ok(z);
    }
    best.offer(&z, fz, true);
    let mut h = identity(n);
    let mut fresh = true;
    let mut d = vec![0.0; n];
    let mut trial = vec![0.0; n];
    for _ in 0..cfg.max_iters {
        log.push(Phase::Bfgs, fz, &g);
        if g.iter().fold(0.0f64, |a, b| a.max(b.abs())) <= cfg.grad_tol {
            break;
        }
        for i in 0..n {
            d[i] = -h[i * n..(i + 1) * n].iter().zip(&g).map(|(a, b)| a * b).sum::<f64>();
        }
        let mut slope: f64 = d.iter().zip(&g).map(|(a, b)| a * b).sum();
        if !(slope < 0.0) {
            h = identity(n);
            fresh = true;
            d.iter_mut().zip(&g).for_each(|(a, b)| *a = -b);
            slope = -g.iter().map(|x| x * x).sum::<f64>();
        }
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..cfg.max_backtracks {
            for i in 0..n {
                trial[i] = z[i] + alpha * d[i];
            }
            let (ft, st) = f.value(&trial)?;
            if st && ft <= fz + cfg.armijo * alpha * slope {
                accepted = Some(ft);
                break;
            }
            alpha *= cfg.shrink;
        }
        if accepted.is_none() {
            if fresh {
                break;
            }
            h = identity(n);
            fresh = true;
            continue;
        }
        let (ft, st, gt) = f.value_grad(&trial)?;
        if !st {
            break;
        }
        let s: Vec<f64> = trial.iter().zip(&z).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gt.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
        if sy > 1e-12 * norm(&s) * norm(&y) && sy > 0.0 {
            if fresh {
                // scale the initial inverse Hessian
                let yy: f64 = y.iter().map(|v| v * v).sum();
                let gamma = sy / yy;
                h.iter_mut().for_each(|v| *v *= gamma);
            }
            update_inverse_hessian(&mut h, &s, &y, sy);
            fresh = false;
        }
        z.copy_from_slice(&trial);
        fz = ft;
        g = gt;
        best.offer(&z, fz, true);
    }
    Ok(z)
}

fn identity(n: usize) -> Vec<f64> {
    let mut h = vec![0.0; n * n];
    for i in 0..n {
        h[i * n + i] = 1.0;
    }
    h
}

/// `H ← (I - ρ s yᵀ) H (I - ρ y sᵀ) + ρ s sᵀ` with `ρ = 1/(yᵀs)`.
fn update_inverse_hessian(h: &mut [f64], s: &[f64], y: &[f64], sy: f64) {
    let n = s.len();
    let rho = 1.0 / sy;
    let hy: Vec<f64> = (0..n)
        .map(|i| h[i * n..(i + 1) * n].iter().zip(y).map(|(a, b)| a * b).sum())
        .collect();
    let yhy: f64 = y.iter().zip(&hy).map(|(a, b)| a * b).sum();
    let coef = (1.0 + rho * yhy) * rho;
    for i in 0..n {
        for j in 0..n {
            h[i * n + j] += coef * s[i] * s[j] - rho * (hy[i] * s[j] + s[i] * hy[j]);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Rosenbrock;

    impl Oracle for Rosenbrock {
        fn value(&self, z: &[f64]) -> Result<(f64, bool)> {
            Ok(((1.0 - z[0]).powi(2) + 100.0 * (z[1] - z[0] * z[0]).powi(2), true))
        }
        fn value_grad(&self, z: &[f64]) -> Result<(f64, bool, Vec<f64>)> {
            let (v, _) = self.value(z)?;
            let g0 = -2.0 * (1.0 - z[0]) - 400.0 * z[0] * (z[1] - z[0] * z[0]);
            let g1 = 200.0 * (z[1] - z[0] * z[0]);
            Ok((v, true, vec![g0, g1]))
        }
    }

    /// Quadratic that reports instability outside the unit ball around 3.
    struct Fenced;

    impl Oracle for Fenced {
        fn value(&self, z: &[f64]) -> Result<(f64, bool)> {
            let r = (z[0] - 3.0).abs();
            Ok(if r > 4.0 { (1e12, false) } else { ((z[0] - 2.0).powi(2), true) })
        }
        fn value_grad(&self, z: &[f64]) -> Result<(f64, bool, Vec<f64>)> {
            let (v, s) = self.value(z)?;
            Ok((v, s, vec![if s { 2.0 * (z[0] - 2.0) } else { 0.0 }]))
        }
    }

    fn logger(sink: &mut Vec<TrainLogRecord>) -> Logger<'_> {
        Logger { start: Instant::now(), sink, offset: 0 }
    }

    #[test]
    fn bfgs_solves_rosenbrock() {
        let mut sink = Vec::new();
        let mut best = Best::new(vec![-1.2, 1.0], f64::INFINITY, false);
        let z = bfgs(&Rosenbrock, &[-1.2, 1.0], &BfgsConfig { max_iters: 200, ..Default::default() }, &mut best, &mut logger(&mut sink)).unwrap();
        assert!((z[0] - 1.0).abs() < 1e-6 && (z[1] - 1.0).abs() < 1e-6, "{z:?}");
        assert!(best.value < 1e-12);
        assert!(sink.iter().all(|r| r.phase == Phase::Bfgs));
    }

    #[test]
    fn adam_descends_and_keeps_best() {
        let mut sink = Vec::new();
        let mut best = Best::new(vec![0.0, 0.0], 1.0, true);
        let cfg = AdamConfig { iters: 500, step: 1e-2, ..Default::default() };
        adam(&Rosenbrock, &[0.0, 0.0], &cfg, &mut best, &mut logger(&mut sink)).unwrap();
        assert_eq!(sink.len(), 500);
        assert!(best.value < 1.0);
    }

    #[test]
    fn adam_backs_off_from_unstable_region() {
        let mut sink = Vec::new();
        let mut best = Best::new(vec![6.5], 20.25, true);
        let cfg = AdamConfig { iters: 400, step: 3.0, ..Default::default() };
        adam(&Fenced, &[6.5], &cfg, &mut best, &mut logger(&mut sink)).unwrap();
        assert!(best.stable && (best.z[0] - 2.0).abs() < 0.5, "{:?}", best.z);
    }

    #[test]
    fn inverse_update_satisfies_secant_equation() {
        let n = 3;
        let mut h = identity(n);
        let s = [0.3, -0.1, 0.7];
        let y = [0.5, 0.2, 0.4];
        let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
        update_inverse_hessian(&mut h, &s, &y, sy);
        for i in 0..n {
            let hy: f64 = (0..n).map(|j| h[i * n + j] * y[j]).sum();
            assert!((hy - s[i]).abs() < 1e-14);
        }
    }
}
