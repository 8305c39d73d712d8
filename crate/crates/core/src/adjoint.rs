//! Hand-written backpropagation through time for the qLPV recursion.
//!
//! Given cotangents on outputs, schedules and states of a recorded rollout,
//! accumulates the gradient with respect to θ and returns the gradients with
//! respect to the initial state and the inputs.

use crate::model::Layout;
use crate::scalar::{dot, matvec};

/// Cotangents of a scalar loss with respect to rollout quantities. Missing
/// entries are zero.
#[derive(Default, Clone, Copy)]
pub(crate) struct Cotangents<'a> {
    /// `dL/dy_t`, stacked `T n_y`.
    pub gy: Option<&'a [f64]>,
    /// `dL/dp_t`, stacked `T n_p`.
    pub gp: Option<&'a [f64]>,
    /// Extra `dL/dx_t` on recorded states, stacked `T n_x`.
    pub gx: Option<&'a [f64]>,
}

pub(crate) struct InputAdjoints {
    pub x0: Vec<f64>,
    // only read by the tests, which check it against the forward sensitivity
    #[cfg_attr(not(test), allow(dead_code))]
    pub u: Vec<f64>,
}

/// Reverse sweep. `xs` and `ps` are the recorded states `x_0..x_{T-1}` and
/// schedules of the forward rollout; `grad` is accumulated into.
pub(crate) fn backprop(
    l: &Layout,
    theta: &[f64],
    u: &[f64],
    xs: &[f64],
    ps: &[f64],
    cot: Cotangents<'_>,
    grad: &mut [f64],
) -> InputAdjoints {
    let d = l.dims;
    let horizon = u.len() / d.n_u;
    let nz = l.n_z();
    let w = l.net.width;
    let mut lam_next = vec![0.0; d.n_x];
    let mut lam = vec![0.0; d.n_x];
    let mut gu = vec![0.0; u.len()];
    let mut v = vec![0.0; d.n_x];
    let mut bu = vec![0.0; d.n_x];
    let mut g_p = vec![0.0; d.n_p];
    let mut g_l = vec![0.0; d.n_p];
    let mut z = vec![0.0; nz];
    let mut pre = vec![0.0; w.max(1)];
    let c_range = l.c_range();
    let c = &theta[c_range.clone()];
    for t in (0..horizon).rev() {
        let xt = &xs[t * d.n_x..(t + 1) * d.n_x];
        let ut = &u[t * d.n_u..(t + 1) * d.n_u];
        let pt = &ps[t * d.n_p..(t + 1) * d.n_p];
        let gut = &mut gu[t * d.n_u..(t + 1) * d.n_u];

        for (k, g) in g_p.iter_mut().enumerate() {
            *g = cot.gp.map_or(0.0, |gp| gp[t * d.n_p + k]);
        }
        lam.iter_mut().for_each(|q| *q = 0.0);
        let has_next = t + 1 < horizon;
        if has_next {
            for i in 0..d.n_p {
                let ar = l.a_range(i);
                let br = l.b_range(i);
                matvec(&theta[ar.clone()], d.n_x, d.n_x, xt, &mut v);
                matvec(&theta[br.clone()], d.n_x, d.n_u, ut, &mut bu);
                let pi = pt[i];
                let mut s = 0.0;
                for r in 0..d.n_x {
                    let ln = lam_next[r];
                    s += ln * (v[r] + bu[r]);
                    if ln == 0.0 {
                        continue;
                    }
                    let a_row = r * d.n_x;
                    for k in 0..d.n_x {
                        grad[ar.start + a_row + k] += pi * ln * xt[k];
                        lam[k] += pi * theta[ar.start + a_row + k] * ln;
                    }
                    let b_row = r * d.n_u;
                    for k in 0..d.n_u {
                        grad[br.start + b_row + k] += pi * ln * ut[k];
                        gut[k] += pi * theta[br.start + b_row + k] * ln;
                    }
                }
                g_p[i] += s;
            }
        }
        if let Some(gy) = cot.gy {
            let gyt = &gy[t * d.n_y..(t + 1) * d.n_y];
            for r in 0..d.n_y {
                let g = gyt[r];
                if g == 0.0 {
                    continue;
                }
                for k in 0..d.n_x {
                    grad[c_range.start + r * d.n_x + k] += g * xt[k];
                    lam[k] += c[r * d.n_x + k] * g;
                }
            }
        }
        if let Some(gx) = cot.gx {
            for k in 0..d.n_x {
                lam[k] += gx[t * d.n_x + k];
            }
        }
        if d.n_p > 1 {
            // softmax
            let s: f64 = pt.iter().zip(&g_p).map(|(p, g)| p * g).sum();
            for i in 0..d.n_p {
                g_l[i] = pt[i] * (g_p[i] - s);
            }
            z[..d.n_x].copy_from_slice(xt);
            z[d.n_x..].copy_from_slice(ut);
            for j in 1..d.n_p {
                let gl = g_l[j];
                if gl == 0.0 {
                    continue;
                }
                let r = l.channel_range(j - 1);
                let (o_w1, o_b1, o_w2, o_b2) = (r.start, r.start + w * nz, r.start + w * nz + w, r.start + w * nz + 2 * w);
                for k in 0..w {
                    pre[k] = dot(&theta[o_w1 + k * nz..o_w1 + (k + 1) * nz], &z) + theta[o_b1 + k];
                }
                grad[o_b2] += gl;
                for k in 0..w {
                    let (act, dact) = l.net.activation.apply_with_deriv(pre[k]);
                    grad[o_w2 + k] += gl * act;
                    let ga = gl * theta[o_w2 + k] * dact;
                    grad[o_b1 + k] += ga;
                    let row = o_w1 + k * nz;
                    for cidx in 0..nz {
                        grad[row + cidx] += ga * z[cidx];
                    }
                    for cidx in 0..d.n_x {
                        lam[cidx] += ga * theta[row + cidx];
                    }
                    for cidx in 0..d.n_u {
                        gut[cidx] += ga * theta[row + d.n_x + cidx];
                    }
                }
            }
        }
        std::mem::swap(&mut lam, &mut lam_next);
    }
    InputAdjoints { x0: lam_next, u: gu }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Dims, NetSpec, QlpvModel};
    use crate::sim::{output_sensitivity, rollout, SensitivityMethod};
    use crate::scalar::Scalar;
    use crate::tape::Tape;
    use crate::test_util::random_input;

    fn weighted_loss_grad(m: &QlpvModel, u: &[f64], x0: &[f64], wy: &[f64], wp: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let l = m.layout();
        let r = rollout(l, m.theta(), u, x0).unwrap();
        let mut g = vec![0.0; l.n_theta()];
        let adj = backprop(
            l,
            m.theta(),
            u,
            &r.x,
            &r.p,
            Cotangents { gy: Some(wy), gp: Some(wp), gx: None },
            &mut g,
        );
        (g, adj.x0, adj.u)
    }

    #[test]
    fn matches_tape_reverse_mode() {
        for (seed, n_p) in [(1u64, 1usize), (2, 2), (3, 3), (4, 3)] {
            let dims = Dims::new(3, 2, 2, n_p).unwrap();
            let m = QlpvModel::random(dims, NetSpec::default(), seed).unwrap();
            let horizon = 6;
            let u = random_input(horizon, 2, seed + 10);
            let x0 = random_input(1, 3, seed + 20);
            let wy = random_input(horizon, 2, seed + 30);
            let wp = random_input(horizon, n_p, seed + 40);
            let (g, gx0, gu) = weighted_loss_grad(&m, &u, &x0, &wy, &wp);

            let tape = Tape::new();
            let th = tape.vars(m.theta());
            let uv = tape.vars(&u);
            let xv = tape.vars(&x0);
            let r = rollout(m.layout(), &th, &uv, &xv).unwrap();
            let mut loss = crate::tape::Var::cst(0.0);
            for (y, w) in r.y.iter().zip(&wy) {
                loss = loss + *y * crate::tape::Var::cst(*w);
            }
            for (p, w) in r.p.iter().zip(&wp) {
                loss = loss + *p * crate::tape::Var::cst(*w);
            }
            let grad = tape.gradient(loss);
            let close = |a: &[f64], b: &[f64]| a.iter().zip(b).all(|(x, y)| (x - y).abs() <= 1e-12 * (1.0 + y.abs()));
            assert!(close(&g, &grad.wrt_all(&th)), "theta, seed {seed}");
            assert!(close(&gx0, &grad.wrt_all(&xv)), "x0, seed {seed}");
            assert!(close(&gu, &grad.wrt_all(&uv)), "u, seed {seed}");
        }
    }

    #[test]
    fn input_adjoint_is_transposed_jacobian() {
        let m = QlpvModel::random(Dims::new(4, 2, 2, 3).unwrap(), NetSpec::default(), 9).unwrap();
        let u = random_input(7, 2, 9);
        let wy = random_input(7, 2, 10);
        let (_, _, gu) = weighted_loss_grad(&m, &u, &[0.0; 4], &wy, &[0.0; 21]);
        let lam = output_sensitivity(&m, &u, SensitivityMethod::Forward).unwrap();
        let want = lam.transpose() * nalgebra::DVector::from_column_slice(&wy);
        for (a, b) in gu.iter().zip(want.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
