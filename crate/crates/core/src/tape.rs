//! A small Wengert-list tape for reverse-mode differentiation.
//!
//! Used where hand-written adjoints would be second order (the scheduling
//! Jacobian penalty) and as an independent check of the hand-written
//! backpropagation through time.

use std::cell::RefCell;
use std::ops::{Add, Div, Mul, Neg, Sub};

use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy)]
struct Node {
    // (parent index, local partial); usize::MAX marks an unused slot
    parents: [(usize, f64); 2],
}

const NONE: usize = usize::MAX;

#[derive(Debug, Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(n: usize) -> Self {
        Self {
            nodes: RefCell::new(Vec::with_capacity(n)),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Registers an independent variable.
    pub fn var(&self, v: f64) -> Var<'_> {
        let idx = self.push([(NONE, 0.0), (NONE, 0.0)]);
        Var {
            tape: Some(self),
            idx,
            val: v,
        }
    }

    pub fn vars(&self, vs: &[f64]) -> Vec<Var<'_>> {
        vs.iter().map(|&v| self.var(v)).collect()
    }

    fn push(&self, parents: [(usize, f64); 2]) -> usize {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { parents });
        nodes.len() - 1
    }

    /// Adjoints of every node with respect to `out`.
    pub fn gradient(&self, out: Var<'_>) -> Gradient {
        let nodes = self.nodes.borrow();
        let mut adj = vec![0.0; nodes.len()];
        if out.tape.is_some() {
            adj[out.idx] = 1.0;
            for i in (0..=out.idx).rev() {
                let a = adj[i];
                if a == 0.0 {
                    continue;
                }
                for &(p, d) in &nodes[i].parents {
                    if p != NONE {
                        adj[p] += a * d;
                    }
                }
            }
        }
        Gradient { adj }
    }
}

pub struct Gradient {
    adj: Vec<f64>,
}

impl Gradient {
    pub fn wrt(&self, v: Var<'_>) -> f64 {
        if v.tape.is_none() {
            0.0
        } else {
            self.adj[v.idx]
        }
    }

    pub fn wrt_all(&self, vs: &[Var<'_>]) -> Vec<f64> {
        vs.iter().map(|&v| self.wrt(v)).collect()
    }
}

/// A taped scalar. Constants carry no tape.
#[derive(Debug, Clone, Copy)]
pub struct Var<'t> {
    tape: Option<&'t Tape>,
    idx: usize,
    val: f64,
}

impl<'t> Var<'t> {
    pub fn value(self) -> f64 {
        self.val
    }

    fn unary(self, val: f64, d: f64) -> Self {
        match self.tape {
            None => Var::constant(val),
            Some(t) => Var {
                tape: Some(t),
                idx: t.push([(self.idx, d), (NONE, 0.0)]),
                val,
            },
        }
    }

    fn binary(self, rhs: Self, val: f64, da: f64, db: f64) -> Self {
        match (self.tape, rhs.tape) {
            (None, None) => Var::constant(val),
            (Some(t), None) => Var {
                tape: Some(t),
                idx: t.push([(self.idx, da), (NONE, 0.0)]),
                val,
            },
            (None, Some(t)) => Var {
                tape: Some(t),
                idx: t.push([(rhs.idx, db), (NONE, 0.0)]),
                val,
            },
            (Some(t), Some(_)) => Var {
                tape: Some(t),
                idx: t.push([(self.idx, da), (rhs.idx, db)]),
                val,
            },
        }
    }

    fn constant(val: f64) -> Self {
        Var {
            tape: None,
            idx: NONE,
            val,
        }
    }
}

impl Add for Var<'_> {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        self.binary(rhs, self.val + rhs.val, 1.0, 1.0)
    }
}

impl Sub for Var<'_> {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        self.binary(rhs, self.val - rhs.val, 1.0, -1.0)
    }
}

impl Mul for Var<'_> {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        self.binary(rhs, self.val * rhs.val, rhs.val, self.val)
    }
}

impl Div for Var<'_> {
    type Output = Self;
    fn div(self, rhs: Self) -> Self {
        let q = self.val / rhs.val;
        self.binary(rhs, q, 1.0 / rhs.val, -q / rhs.val)
    }
}

impl Neg for Var<'_> {
    type Output = Self;
    fn neg(self) -> Self {
        self.unary(-self.val, -1.0)
    }
}

impl Scalar for Var<'_> {
    fn cst(v: f64) -> Self {
        Var::constant(v)
    }
    fn val(self) -> f64 {
        self.val
    }
    fn exp(self) -> Self {
        let e = self.val.exp();
        self.unary(e, e)
    }
}
