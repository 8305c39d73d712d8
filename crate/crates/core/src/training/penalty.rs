//! Scheduling-smoothness penalties and their parameter gradients.

use crate::adjoint::{backprop, Cotangents};
use crate::data::{Dataset, NeighborhoodSpec, RegPool};
use crate::error::{Error, Result};
use crate::model::{Layout, QlpvModel};
use crate::par;
use crate::scalar::{KahanSum, Scalar};
use crate::sim::{forward_sensitivity, rollout, Rollout};
use crate::tape::{Tape, Var};
use rand::Rng;

/// Per training trajectory and shooting interval, a pool of perturbed input
/// sub-trajectories.
#[derive(Debug, Clone, PartialEq)]
pub struct ShootSamples {
    pub shoot_len: usize,
    pub n_r: usize,
    /// Indexed `[trajectory][interval]`.
    pub sets: Vec<Vec<RegPool>>,
}

impl ShootSamples {
    /// Samples `n_r` sub-trajectories around every length-`shoot_len`
    /// interval of every dataset input.
    pub fn sample(
        data: &Dataset,
        shoot_len: usize,
        n_r: usize,
        nbhd: &NeighborhoodSpec,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let horizon = data.horizon()?;
        if shoot_len == 0 || shoot_len > horizon || horizon % shoot_len != 0 {
            return Err(Error::Invalid(format!(
                "shooting length {shoot_len} must divide the horizon {horizon}"
            )));
        }
        let mut sets = Vec::with_capacity(data.len());
        for traj in data.iter() {
            let n_u = traj.n_u;
            let mut per = Vec::with_capacity(horizon / shoot_len);
            for start in (0..horizon).step_by(shoot_len) {
                let sub = &traj.u[start * n_u..(start + shoot_len) * n_u];
                per.push(RegPool::dedup(nbhd.sample(&[sub], n_r, rng)?)?);
            }
            sets.push(per);
        }
        Ok(ShootSamples { shoot_len, n_r, sets })
    }
}

fn rollouts(l: &Layout, theta: &[f64], pool: &RegPool, x0: &[f64]) -> Result<Vec<Rollout<f64>>> {
    par::map(pool.entries(), |u| rollout(l, theta, u, x0))
        .into_iter()
        .collect()
}

/// Pairwise term `(1/norm) Σ_{k<l} w_kl ||P_k - P_l||²` and, optionally,
/// its gradient with respect to each `P_k`.
fn pairwise(pool: &RegPool, ps: &[&[f64]], norm: f64, with_grad: bool) -> (f64, Vec<Vec<f64>>) {
    let n = ps.len();
    let mut sum = KahanSum::new();
    let mut grads: Vec<Vec<f64>> = if with_grad {
        ps.iter().map(|p| vec![0.0; p.len()]).collect()
    } else {
        Vec::new()
    };
    for k in 0..n {
        for l in k + 1..n {
            let w = pool.weight(k, l);
            let mut d2 = 0.0;
            for (a, b) in ps[k].iter().zip(ps[l]) {
                d2 += (a - b) * (a - b);
            }
            sum.add(w * d2);
            if with_grad {
                let c = 2.0 * w / norm;
                for i in 0..ps[k].len() {
                    let diff = c * (ps[k][i] - ps[l][i]);
                    grads[k][i] += diff;
                    grads[l][i] -= diff;
                }
            }
        }
    }
    (sum.value() / norm, grads)
}

/// Accumulates the gradient of a pairwise penalty over one pool of rollouts
/// from a common initial state; returns the adjoint of that initial state.
fn pairwise_backprop(
    l: &Layout,
    theta: &[f64],
    pool: &RegPool,
    runs: &[Rollout<f64>],
    gps: &[Vec<f64>],
    grad: &mut [f64],
) -> Vec<f64> {
    let idx: Vec<usize> = (0..runs.len()).collect();
    let parts = par::map(&idx, |&k| {
        let mut g = vec![0.0; l.n_theta()];
        let adj = backprop(
            l,
            theta,
            &pool.entries()[k],
            &runs[k].x,
            &runs[k].p,
            Cotangents { gp: Some(&gps[k]), ..Default::default() },
            &mut g,
        );
        (g, adj.x0)
    });
    let mut gx0 = vec![0.0; l.dims.n_x];
    for (g, x0) in parts {
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
        for (a, b) in gx0.iter_mut().zip(&x0) {
            *a += b;
        }
    }
    gx0
}

/// Manifold penalty `m(θ) = (1/N_r) Σ_{k<l} ||P(U_k) - P(U_l)||² / ||U_k - U_l||²`.
/// When `grad` is given the gradient is accumulated into it.
pub(crate) fn manifold_value_grad(
    l: &Layout,
    theta: &[f64],
    pool: &RegPool,
    grad: Option<&mut [f64]>,
) -> Result<f64> {
    if pool.len() < 2 {
        return Ok(0.0);
    }
    let zero = vec![0.0; l.dims.n_x];
    let runs = rollouts(l, theta, pool, &zero)?;
    let ps: Vec<&[f64]> = runs.iter().map(|r| r.p.as_slice()).collect();
    let (value, gps) = pairwise(pool, &ps, pool.len() as f64, grad.is_some());
    if let Some(grad) = grad {
        pairwise_backprop(l, theta, pool, &runs, &gps, grad);
    }
    Ok(value)
}

pub fn manifold_penalty(model: &QlpvModel, pool: &RegPool) -> Result<f64> {
    manifold_value_grad(model.layout(), model.theta(), pool, None)
}

/// `(1/N_r) Σ_k ||∇_U P(U_k|θ)||_F²`.
pub(crate) fn gradient_penalty_value_grad(
    l: &Layout,
    theta: &[f64],
    pool: &RegPool,
    grad: Option<&mut [f64]>,
) -> Result<f64> {
    if pool.is_empty() {
        return Ok(0.0);
    }
    let n_r = pool.len() as f64;
    match grad {
        None => {
            let vals: Result<Vec<f64>> = par::map(pool.entries(), |u| {
                let s = forward_sensitivity(l, theta, u)?;
                Ok(s.dp.iter().map(|v| v * v).sum())
            })
            .into_iter()
            .collect();
            Ok(vals?.into_iter().collect::<KahanSum>().value() / n_r)
        }
        Some(grad) => {
            let parts: Result<Vec<(f64, Vec<f64>)>> = par::map(pool.entries(), |u| {
                let tape = Tape::new();
                let th = tape.vars(theta);
                let uv: Vec<Var<'_>> = u.iter().map(|&v| Var::cst(v)).collect();
                let s = forward_sensitivity(l, &th, &uv)?;
                let mut acc = Var::cst(0.0);
                for v in &s.dp {
                    acc = acc + *v * *v;
                }
                let g = tape.gradient(acc).wrt_all(&th);
                Ok((acc.val(), g))
            })
            .into_iter()
            .collect();
            let mut sum = KahanSum::new();
            for (v, g) in parts? {
                sum.add(v);
                for (a, b) in grad.iter_mut().zip(&g) {
                    *a += b / n_r;
                }
            }
            Ok(sum.value() / n_r)
        }
    }
}

pub fn gradient_penalty(model: &QlpvModel, pool: &RegPool) -> Result<f64> {
    gradient_penalty_value_grad(model.layout(), model.theta(), pool, None)
}

/// Multiple-shooting penalty. Anchor states come from a full simulation of
/// each training trajectory from its initial state `x0s[d]`; the gradient
/// flows through the anchors into θ and, via the returned adjoints, into the
/// initial states.
pub(crate) fn multishoot_value_grad(
    l: &Layout,
    theta: &[f64],
    data: &Dataset,
    x0s: &[Vec<f64>],
    samples: &ShootSamples,
    mut grad: Option<&mut [f64]>,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let d = l.dims;
    let tl = samples.shoot_len;
    let norm = (tl * samples.n_r) as f64;
    let mut total = KahanSum::new();
    let mut gx0s = vec![vec![0.0; d.n_x]; data.len()];
    for (di, traj) in data.iter().enumerate() {
        let full = rollout(l, theta, &traj.u, &x0s[di])?;
        let mut gx_anchor = vec![0.0; full.x.len()];
        for (iota, pool) in samples.sets[di].iter().enumerate() {
            let t0 = iota * tl;
            let anchor = &full.x[t0 * d.n_x..(t0 + 1) * d.n_x];
            if pool.len() < 2 {
                continue;
            }
            let runs = rollouts(l, theta, pool, anchor)?;
            let ps: Vec<&[f64]> = runs.iter().map(|r| r.p.as_slice()).collect();
            let (value, gps) = pairwise(pool, &ps, norm, grad.is_some());
            total.add(value);
            if let Some(g) = grad.as_deref_mut() {
                let ga = pairwise_backprop(l, theta, pool, &runs, &gps, g);
                gx_anchor[t0 * d.n_x..(t0 + 1) * d.n_x].copy_from_slice(&ga);
            }
        }
        if let Some(g) = grad.as_deref_mut() {
            let adj = backprop(
                l,
                theta,
                &traj.u,
                &full.x,
                &full.p,
                Cotangents { gx: Some(&gx_anchor), ..Default::default() },
                g,
            );
            gx0s[di] = adj.x0;
        }
    }
    Ok((total.value(), gx0s))
}

pub fn multishoot_penalty(
    model: &QlpvModel,
    data: &Dataset,
    x0s: &[Vec<f64>],
    samples: &ShootSamples,
) -> Result<f64> {
    Ok(multishoot_value_grad(model.layout(), model.theta(), data, x0s, samples, None)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{seeded_rng, BoxSet};
    use crate::model::{Dims, NetSpec};
    use crate::sim::{schedule_sensitivity, simulate, Trajectory};
    use crate::test_util::random_input;

    fn model(n_p: usize, seed: u64) -> QlpvModel {
        QlpvModel::random(Dims::new(3, 2, 2, n_p).unwrap(), NetSpec::default(), seed).unwrap()
    }

    fn zero_net(mut m: QlpvModel) -> QlpvModel {
        let r = m.layout().net_range();
        m.theta_mut()[r].iter_mut().for_each(|v| *v = 0.0);
        m
    }

    fn pool(n: usize, horizon: usize, seed: u64) -> RegPool {
        RegPool::new((0..n).map(|k| random_input(horizon, 2, seed * 100 + k as u64)).collect()).unwrap()
    }

    #[test]
    fn penalties_vanish_for_constant_schedules() {
        let p = pool(4, 5, 1);
        for m in [zero_net(model(3, 2)), model(1, 2)] {
            assert_eq!(manifold_penalty(&m, &p).unwrap(), 0.0);
            assert_eq!(gradient_penalty(&m, &p).unwrap(), 0.0);
        }
    }

    #[test]
    fn manifold_matches_double_loop() {
        let m = model(3, 4);
        let p = pool(3, 5, 2);
        let sched: Vec<Vec<f64>> = p.entries().iter().map(|u| simulate(&m, u, None).unwrap().p.p).collect();
        let mut want = 0.0;
        for k in 0..3 {
            for l in k + 1..3 {
                let num: f64 = sched[k].iter().zip(&sched[l]).map(|(a, b)| (a - b).powi(2)).sum();
                let den: f64 = p.entries()[k].iter().zip(&p.entries()[l]).map(|(a, b)| (a - b).powi(2)).sum();
                want += num / den;
            }
        }
        want /= 3.0;
        let got = manifold_penalty(&m, &p).unwrap();
        assert!((got - want).abs() < 1e-15 * want.max(1.0), "{got} vs {want}");
        assert!(got > 0.0);
    }

    #[test]
    fn gradient_penalty_matches_finite_difference_jacobian() {
        let m = model(3, 6);
        let p = pool(2, 3, 3);
        let mut want = 0.0;
        for u in p.entries() {
            let mut up = u.clone();
            for j in 0..u.len() {
                let h = 1e-6;
                up[j] = u[j] + h;
                let pp = simulate(&m, &up, None).unwrap().p.p;
                up[j] = u[j] - h;
                let pm = simulate(&m, &up, None).unwrap().p.p;
                up[j] = u[j];
                want += pp.iter().zip(&pm).map(|(a, b)| ((a - b) / (2.0 * h)).powi(2)).sum::<f64>();
            }
        }
        want /= 2.0;
        let got = gradient_penalty(&m, &p).unwrap();
        assert!(((got - want) / want).abs() < 1e-5, "{got} vs {want}");
        // also the closed form via the public schedule sensitivity
        let alt: f64 = p
            .entries()
            .iter()
            .map(|u| schedule_sensitivity(&m, u).unwrap().iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            / 2.0;
        assert!((alt - got).abs() < 1e-14 * got);
    }

    fn fd_grad(f: impl Fn(&[f64]) -> f64, theta: &[f64]) -> Vec<f64> {
        let mut t = theta.to_vec();
        (0..theta.len())
            .map(|i| {
                let h = 1e-6 * theta[i].abs().max(1.0);
                t[i] = theta[i] + h;
                let fp = f(&t);
                t[i] = theta[i] - h;
                let fm = f(&t);
                t[i] = theta[i];
                (fp - fm) / (2.0 * h)
            })
            .collect()
    }

    fn assert_grad_close(g: &[f64], fd: &[f64], tol: f64) {
        let scale = fd.iter().fold(0.0f64, |a, b| a.max(b.abs())).max(1e-8);
        for (i, (a, b)) in g.iter().zip(fd).enumerate() {
            assert!((a - b).abs() <= tol * scale, "index {i}: {a} vs {b}");
        }
    }

    #[test]
    fn manifold_gradient_matches_finite_differences() {
        let m = model(3, 8);
        let p = pool(5, 4, 4);
        let l = *m.layout();
        let mut g = vec![0.0; l.n_theta()];
        manifold_value_grad(&l, m.theta(), &p, Some(&mut g)).unwrap();
        let fd = fd_grad(|th| manifold_value_grad(&l, th, &p, None).unwrap(), m.theta());
        assert_grad_close(&g, &fd, 1e-5);
    }

    #[test]
    fn gradient_penalty_gradient_matches_finite_differences() {
        let m = model(3, 9);
        let p = pool(2, 3, 5);
        let l = *m.layout();
        let mut g = vec![0.0; l.n_theta()];
        gradient_penalty_value_grad(&l, m.theta(), &p, Some(&mut g)).unwrap();
        let fd = fd_grad(|th| gradient_penalty_value_grad(&l, th, &p, None).unwrap(), m.theta());
        assert_grad_close(&g, &fd, 1e-5);
    }

    fn shoot_data(m: &QlpvModel, horizon: usize, x0: &[f64]) -> Dataset {
        let u = random_input(horizon, 2, 77);
        let y = simulate(m, &u, Some(x0)).unwrap().y;
        Dataset::from_trajectories(vec![Trajectory::new(2, 2, u, y).unwrap().with_x0(x0.to_vec())])
    }

    #[test]
    fn multishoot_single_interval_collapses_to_manifold() {
        let m = model(3, 10);
        let data = shoot_data(&m, 4, &[0.0; 3]);
        let nb = NeighborhoodSpec::new(0.5, BoxSet::unit(2), true).unwrap();
        let s = ShootSamples::sample(&data, 4, 5, &nb, &mut seeded_rng(1)).unwrap();
        let ms = multishoot_penalty(&m, &data, &[vec![0.0; 3]], &s).unwrap();
        let mp = manifold_penalty(&m, &s.sets[0][0]).unwrap();
        assert!((ms * 4.0 - mp).abs() < 1e-14 * mp.max(1.0));
    }

    #[test]
    fn multishoot_matches_brute_force_triple_loop() {
        let m = model(3, 11);
        let x0 = vec![0.3, -0.2, 0.5];
        let data = shoot_data(&m, 4, &x0);
        let nb = NeighborhoodSpec::new(1.0, BoxSet::unit(2), true).unwrap();
        let s = ShootSamples::sample(&data, 2, 2, &nb, &mut seeded_rng(2)).unwrap();
        let states = simulate(&m, &data.trajectories[0].u, Some(&x0)).unwrap().x;
        let mut want = 0.0;
        for (iota, pool) in s.sets[0].iter().enumerate() {
            let anchor = &states[iota * 2 * 3..(iota * 2 + 1) * 3];
            let e = pool.entries();
            for k in 0..e.len() {
                for l in k + 1..e.len() {
                    let pk = simulate(&m, &e[k], Some(anchor)).unwrap().p.p;
                    let pl = simulate(&m, &e[l], Some(anchor)).unwrap().p.p;
                    let num: f64 = pk.iter().zip(&pl).map(|(a, b)| (a - b).powi(2)).sum();
                    let den: f64 = e[k].iter().zip(&e[l]).map(|(a, b)| (a - b).powi(2)).sum();
                    want += num / den;
                }
            }
        }
        want /= 2.0 * 2.0;
        let got = multishoot_penalty(&m, &data, &[x0], &s).unwrap();
        assert!((got - want).abs() < 1e-14 * want.max(1.0), "{got} vs {want}");
        let zero = multishoot_penalty(&zero_net(m), &data, &[vec![0.3, -0.2, 0.5]], &s).unwrap();
        assert_eq!(zero, 0.0);
    }

    #[test]
    fn multishoot_gradient_matches_finite_differences() {
        let m = model(3, 12);
        let x0 = vec![0.2, 0.1, -0.4];
        let data = shoot_data(&m, 6, &x0);
        let nb = NeighborhoodSpec::new(0.5, BoxSet::unit(2), true).unwrap();
        let s = ShootSamples::sample(&data, 3, 3, &nb, &mut seeded_rng(3)).unwrap();
        let l = *m.layout();
        let mut g = vec![0.0; l.n_theta()];
        let (_, gx0) = multishoot_value_grad(&l, m.theta(), &data, &[x0.clone()], &s, Some(&mut g)).unwrap();
        let fd = fd_grad(
            |th| multishoot_value_grad(&l, th, &data, &[x0.clone()], &s, None).unwrap().0,
            m.theta(),
        );
        assert_grad_close(&g, &fd, 1e-5);
        let fdx = fd_grad(
            |x| multishoot_value_grad(&l, m.theta(), &data, &[x.to_vec()], &s, None).unwrap().0,
            &x0,
        );
        assert_grad_close(&gx0[0], &fdx, 1e-5);
    }

    #[test]
    fn shooting_length_must_divide_horizon() {
        let m = model(2, 1);
        let data = shoot_data(&m, 5, &[0.0; 3]);
        let nb = NeighborhoodSpec::new(0.5, BoxSet::unit(2), true).unwrap();
        assert!(ShootSamples::sample(&data, 2, 3, &nb, &mut seeded_rng(3)).is_err());
    }
}
