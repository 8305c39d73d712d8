//! Two-mass nonlinear spring-mass-damper system integrated with fixed-step RK4.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OscillatorParams {
    pub m1: f64,
    pub m2: f64,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub e: f64,
    pub v0: f64,
    /// Sampling period (s).
    pub dt: f64,
    /// RK4 steps per sampling period.
    pub substeps: usize,
}

impl Default for OscillatorParams {
    fn default() -> Self {
        OscillatorParams {
            m1: 2.0,
            m2: 0.01,
            a: 1.0,
            b: 10.0,
            c: 100.0,
            d: 1.0,
            e: 2.0,
            v0: 0.01,
            dt: 0.1,
            substeps: 4000,
        }
    }
}

impl OscillatorParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.m1 > 0.0 && self.m2 > 0.0) {
            return Err(Error::Invalid("masses must be positive".into()));
        }
        if !(self.dt > 0.0) || self.substeps == 0 || !(self.v0 != 0.0) {
            return Err(Error::Invalid("sampling period, substeps and v0 must be nonzero".into()));
        }
        Ok(())
    }

    /// Spring force `a x + b x³ + c x⁵`.
    pub fn spring(&self, x: f64) -> f64 {
        let x2 = x * x;
        x * (self.a + x2 * (self.b + self.c * x2))
    }

    /// Damper force `d v + e tanh(v / v0)`.
    pub fn damper(&self, v: f64) -> f64 {
        self.d * v + self.e * (v / self.v0).tanh()
    }

    /// Mechanical energy of a state `(x1, v1, x2, v2)`, springs included.
    pub fn energy(&self, s: &[f64; 4]) -> f64 {
        let pot = |x: f64| {
            let x2 = x * x;
            x2 * (self.a / 2.0 + x2 * (self.b / 4.0 + self.c * x2 / 6.0))
        };
        0.5 * self.m1 * s[1] * s[1] + 0.5 * self.m2 * s[3] * s[3] + pot(s[0]) + pot(s[2]) + pot(s[0] - s[2])
    }
}

/// Time derivative of `(x1, v1, x2, v2)` under forces `u`.
pub fn oscillator_rhs(s: &[f64; 4], u: &[f64; 2], p: &OscillatorParams) -> [f64; 4] {
    let [x1, v1, x2, v2] = *s;
    let dx = x1 - x2;
    let dv = v1 - v2;
    let coupling = p.spring(dx) + p.damper(dv);
    let f1 = u[0] - p.spring(x1) - p.damper(v1) - coupling;
    let f2 = u[1] - p.spring(x2) - p.damper(v2) + coupling;
    [v1, f1 / p.m1, v2, f2 / p.m2]
}

fn rk4_step(s: &[f64; 4], u: &[f64; 2], h: f64, p: &OscillatorParams) -> [f64; 4] {
    let add = |a: &[f64; 4], k: &[f64; 4], c: f64| [a[0] + c * k[0], a[1] + c * k[1], a[2] + c * k[2], a[3] + c * k[3]];
    let k1 = oscillator_rhs(s, u, p);
    let k2 = oscillator_rhs(&add(s, &k1, h / 2.0), u, p);
    let k3 = oscillator_rhs(&add(s, &k2, h / 2.0), u, p);
    let k4 = oscillator_rhs(&add(s, &k3, h), u, p);
    let mut out = *s;
    for i in 0..4 {
        out[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    out
}

/// Physical-unit simulation from `state0` with zero-order-hold forces
/// `u_phys` (stacked pairs). Returns the positions `(x1, x2)` sampled at the
/// start of every period, and the state at each sample.
pub fn simulate_physical(p: &OscillatorParams, u_phys: &[f64], state0: [f64; 4]) -> Result<(Vec<f64>, Vec<[f64; 4]>)> {
    p.validate()?;
    if u_phys.len() % 2 != 0 {
        return Err(Error::Dimension("oscillator inputs come in pairs".into()));
    }
    let horizon = u_phys.len() / 2;
    let h = p.dt / p.substeps as f64;
    let mut s = state0;
    let mut y = Vec::with_capacity(2 * horizon);
    let mut states = Vec::with_capacity(horizon);
    for t in 0..horizon {
        y.push(s[0]);
        y.push(s[2]);
        states.push(s);
        let u = [u_phys[2 * t], u_phys[2 * t + 1]];
        for _ in 0..p.substeps {
            s = rk4_step(&s, &u, h, p);
        }
        if s.iter().any(|v| !v.is_finite()) {
            return Err(Error::Unstable { step: t + 1 });
        }
    }
    Ok((y, states))
}
