//! The quasi-LPV model class: affine matrix families blended by a softmax
//! scheduling network, stored as one flat parameter vector.

use std::fmt;
use std::path::Path;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub n_x: usize,
    pub n_u: usize,
    pub n_y: usize,
    pub n_p: usize,
}

impl Dims {
    pub fn new(n_x: usize, n_u: usize, n_y: usize, n_p: usize) -> Result<Self> {
        let d = Dims { n_x, n_u, n_y, n_p };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_x == 0 || self.n_u == 0 || self.n_y == 0 || self.n_p == 0 {
            return Err(Error::Invalid(format!("all dimensions must be positive: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Swish,
    Tanh,
}

impl Activation {
    #[inline]
    pub fn apply<S: Scalar>(self, a: S) -> S {
        match self {
            Activation::Swish => a * a.logistic(),
            Activation::Tanh => S::cst(2.0) * (S::cst(2.0) * a).logistic() - S::cst(1.0),
        }
    }

    /// Value and first derivative.
    #[inline]
    pub fn apply_with_deriv<S: Scalar>(self, a: S) -> (S, S) {
        match self {
            Activation::Swish => {
                let s = a.logistic();
                let v = a * s;
                (v, s + v * (S::cst(1.0) - s))
            }
            Activation::Tanh => {
                let t = S::cst(2.0) * (S::cst(2.0) * a).logistic() - S::cst(1.0);
                (t, S::cst(1.0) - t * t)
            }
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Activation::Swish => write!(f, "swish"),
            Activation::Tanh => write!(f, "tanh"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetSpec {
    pub width: usize,
    pub activation: Activation,
}

impl Default for NetSpec {
    fn default() -> Self {
        NetSpec {
            width: 4,
            activation: Activation::Swish,
        }
    }
}

/// Offsets of every parameter block inside the flat vector θ.
///
/// Order: `A_1..A_np` (row-major `n_x x n_x`), `B_1..B_np` (`n_x x n_u`),
/// `C` (`n_y x n_x`), then one block per scheduling channel `2..=n_p`
/// holding `W1` (`width x (n_x+n_u)`), `b1`, `w2` and `b2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub dims: Dims,
    pub net: NetSpec,
    off_b: usize,
    off_c: usize,
    off_net: usize,
    chan_len: usize,
    n_theta: usize,
}

/// Borrowed view of one scheduling channel.
#[derive(Debug, Clone, Copy)]
pub struct Channel<'a, S> {
    pub w1: &'a [S],
    pub b1: &'a [S],
    pub w2: &'a [S],
    pub b2: S,
}

impl Layout {
    pub fn new(dims: Dims, net: NetSpec) -> Result<Self> {
        dims.validate()?;
        if net.width == 0 && dims.n_p > 1 {
            return Err(Error::Invalid("scheduling net width must be positive".into()));
        }
        let Dims { n_x, n_u, n_y, n_p } = dims;
        let off_b = n_p * n_x * n_x;
        let off_c = off_b + n_p * n_x * n_u;
        let off_net = off_c + n_y * n_x;
        let chan_len = net.width * (n_x + n_u) + 2 * net.width + 1;
        let n_theta = off_net + (n_p - 1) * chan_len;
        Ok(Layout {
            dims,
            net,
            off_b,
            off_c,
            off_net,
            chan_len,
            n_theta,
        })
    }

    pub fn n_theta(&self) -> usize {
        self.n_theta
    }

    pub fn n_z(&self) -> usize {
        self.dims.n_x + self.dims.n_u
    }

    pub fn a_range(&self, i: usize) -> std::ops::Range<usize> {
        let s = self.dims.n_x * self.dims.n_x;
        i * s..(i + 1) * s
    }

    pub fn b_range(&self, i: usize) -> std::ops::Range<usize> {
        let s = self.dims.n_x * self.dims.n_u;
        self.off_b + i * s..self.off_b + (i + 1) * s
    }

    pub fn c_range(&self) -> std::ops::Range<usize> {
        self.off_c..self.off_net
    }

    /// Range of scheduling channel `j` (0-based over the `n_p - 1` learned channels).
    pub fn channel_range(&self, j: usize) -> std::ops::Range<usize> {
        let s = self.off_net + j * self.chan_len;
        s..s + self.chan_len
    }

    pub fn net_range(&self) -> std::ops::Range<usize> {
        self.off_net..self.n_theta
    }

    pub fn a<'a, S>(&self, theta: &'a [S], i: usize) -> &'a [S] {
        &theta[self.a_range(i)]
    }

    pub fn b<'a, S>(&self, theta: &'a [S], i: usize) -> &'a [S] {
        &theta[self.b_range(i)]
    }

    pub fn c<'a, S>(&self, theta: &'a [S]) -> &'a [S] {
        &theta[self.c_range()]
    }

    pub fn channel<'a, S: Copy>(&self, theta: &'a [S], j: usize) -> Channel<'a, S> {
        let blk = &theta[self.channel_range(j)];
        let w = self.net.width;
        let nz = self.n_z();
        Channel {
            w1: &blk[..w * nz],
            b1: &blk[w * nz..w * nz + w],
            w2: &blk[w * nz + w..w * nz + 2 * w],
            b2: blk[w * nz + 2 * w],
        }
    }

    /// Field manifest in storage order: (name, rows, cols).
    pub fn manifest(&self) -> Vec<(String, usize, usize)> {
        let Dims { n_x, n_u, n_y, n_p } = self.dims;
        let w = self.net.width;
        let mut m = Vec::new();
        for i in 0..n_p {
            m.push((format!("A[{i}]"), n_x, n_x));
        }
        for i in 0..n_p {
            m.push((format!("B[{i}]"), n_x, n_u));
        }
        m.push(("C".to_string(), n_y, n_x));
        for j in 1..n_p {
            m.push((format!("h[{j}].W1"), w, n_x + n_u));
            m.push((format!("h[{j}].b1"), w, 1));
            m.push((format!("h[{j}].w2"), 1, w));
            m.push((format!("h[{j}].b2"), 1, 1));
        }
        m
    }
}

/// Structured (unflattened) view of the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParts {
    pub a: Vec<DMatrix<f64>>,
    pub b: Vec<DMatrix<f64>>,
    pub c: DMatrix<f64>,
    /// Per learned channel: (W1, b1, w2, b2).
    pub channels: Vec<(DMatrix<f64>, Vec<f64>, Vec<f64>, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QlpvModel {
    layout: Layout,
    theta: Vec<f64>,
}

impl QlpvModel {
    pub fn from_theta(layout: Layout, theta: Vec<f64>) -> Result<Self> {
        if theta.len() != layout.n_theta() {
            return Err(dim_err(format!(
                "theta has length {}, layout expects {}",
                theta.len(),
                layout.n_theta()
            )));
        }
        Ok(QlpvModel { layout, theta })
    }

    pub fn zeros(dims: Dims, net: NetSpec) -> Result<Self> {
        let layout = Layout::new(dims, net)?;
        Ok(QlpvModel {
            theta: vec![0.0; layout.n_theta()],
            layout,
        })
    }

    /// Seeded random initialization. Each `A_i` is rescaled to spectral
    /// norm 0.9, so every convex blend `A(p)` is a contraction.
    pub fn random(dims: Dims, net: NetSpec, seed: u64) -> Result<Self> {
        let layout = Layout::new(dims, net)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut theta = vec![0.0; layout.n_theta()];
        let n_x = dims.n_x;
        for i in 0..dims.n_p {
            let r = layout.a_range(i);
            let m = DMatrix::from_fn(n_x, n_x, |_, _| rng.gen_range(-1.0..1.0));
            let norm = m.clone().svd(false, false).singular_values.max();
            let scale = if norm > 0.0 { 0.9 / norm } else { 0.0 };
            for rr in 0..n_x {
                for cc in 0..n_x {
                    theta[r.start + rr * n_x + cc] = m[(rr, cc)] * scale;
                }
            }
        }
        for k in layout.a_range(dims.n_p - 1).end..layout.n_theta() {
            theta[k] = rng.gen_range(-0.5..0.5);
        }
        Ok(QlpvModel { layout, theta })
    }

    pub fn from_parts(dims: Dims, net: NetSpec, parts: &ModelParts) -> Result<Self> {
        let layout = Layout::new(dims, net)?;
        let check = |m: &DMatrix<f64>, r: usize, c: usize, what: &str| {
            if m.nrows() != r || m.ncols() != c {
                Err(dim_err(format!("{what} must be {r}x{c}, got {}x{}", m.nrows(), m.ncols())))
            } else {
                Ok(())
            }
        };
        if parts.a.len() != dims.n_p || parts.b.len() != dims.n_p || parts.channels.len() != dims.n_p - 1 {
            return Err(dim_err("matrix family lengths must equal n_p"));
        }
        let mut theta = Vec::with_capacity(layout.n_theta());
        let push_rm = |theta: &mut Vec<f64>, m: &DMatrix<f64>| {
            for r in 0..m.nrows() {
                for c in 0..m.ncols() {
                    theta.push(m[(r, c)]);
                }
            }
        };
        for a in &parts.a {
            check(a, dims.n_x, dims.n_x, "A_i")?;
            push_rm(&mut theta, a);
        }
        for b in &parts.b {
            check(b, dims.n_x, dims.n_u, "B_i")?;
            push_rm(&mut theta, b);
        }
        check(&parts.c, dims.n_y, dims.n_x, "C")?;
        push_rm(&mut theta, &parts.c);
        for (w1, b1, w2, b2) in &parts.channels {
            check(w1, net.width, dims.n_x + dims.n_u, "W1")?;
            if b1.len() != net.width || w2.len() != net.width {
                return Err(dim_err("hidden bias and output weights must have the net width"));
            }
            push_rm(&mut theta, w1);
            theta.extend_from_slice(b1);
            theta.extend_from_slice(w2);
            theta.push(*b2);
        }
        QlpvModel::from_theta(layout, theta)
    }

    pub fn parts(&self) -> ModelParts {
        let l = &self.layout;
        let Dims { n_x, n_u, n_y, n_p } = l.dims;
        let rm = |s: &[f64], r: usize, c: usize| DMatrix::from_row_slice(r, c, s);
        ModelParts {
            a: (0..n_p).map(|i| rm(l.a(&self.theta, i), n_x, n_x)).collect(),
            b: (0..n_p).map(|i| rm(l.b(&self.theta, i), n_x, n_u)).collect(),
            c: rm(l.c(&self.theta), n_y, n_x),
            channels: (0..n_p - 1)
                .map(|j| {
                    let ch = l.channel(&self.theta, j);
                    (rm(ch.w1, l.net.width, n_x + n_u), ch.b1.to_vec(), ch.w2.to_vec(), ch.b2)
                })
                .collect(),
        }
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn dims(&self) -> Dims {
        self.layout.dims
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn theta_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    pub fn into_theta(self) -> Vec<f64> {
        self.theta
    }

    pub fn with_theta(&self, theta: Vec<f64>) -> Result<Self> {
        QlpvModel::from_theta(self.layout, theta)
    }

    /// SHA-256 over the little-endian bytes of θ.
    pub fn fingerprint(&self) -> String {
        crate::io::fingerprint_f64(&self.theta)
    }

    pub fn to_file_string(&self) -> Result<String> {
        let manifest = self.layout.manifest();
        let mut fields = Vec::with_capacity(manifest.len());
        let mut pos = 0;
        for (name, rows, cols) in &manifest {
            let n = rows * cols;
            fields.push(FieldRecord {
                name: name.clone(),
                rows: *rows,
                cols: *cols,
                data: self.theta[pos..pos + n].to_vec(),
            });
            pos += n;
        }
        let file = ModelFile {
            format: MODEL_FORMAT.to_string(),
            dims: self.layout.dims,
            net: self.layout.net,
            manifest: manifest.into_iter().map(|m| m.0).collect(),
            fields,
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_file_str(s: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(s)?;
        if file.format != MODEL_FORMAT {
            return Err(Error::Parse(format!("unknown model format '{}'", file.format)));
        }
        let layout = Layout::new(file.dims, file.net)?;
        let expect = layout.manifest();
        if file.manifest.len() != expect.len() || file.fields.len() != expect.len() {
            return Err(Error::Parse("manifest does not match dims".into()));
        }
        let mut theta = Vec::with_capacity(layout.n_theta());
        for ((name, rows, cols), (mname, field)) in
            expect.iter().zip(file.manifest.iter().zip(&file.fields))
        {
            if name != mname || name != &field.name || *rows != field.rows || *cols != field.cols {
                return Err(Error::Parse(format!("field '{}' out of order or misshaped", field.name)));
            }
            if field.data.len() != rows * cols {
                return Err(Error::Parse(format!("field '{name}' has wrong length")));
            }
            theta.extend_from_slice(&field.data);
        }
        QlpvModel::from_theta(layout, theta)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_file_string()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        QlpvModel::from_file_str(&std::fs::read_to_string(path)?)
    }
}

const MODEL_FORMAT: &str = "qlpv-model/1";

#[derive(Serialize, Deserialize)]
struct FieldRecord {
    name: String,
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    dims: Dims,
    net: NetSpec,
    manifest: Vec<String>,
    fields: Vec<FieldRecord>,
}
