//! Labeled datasets, unlabeled regularization pools and input-box sampling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{fmt_row, parse_row, sha256_hex};
use crate::scalar::sq_dist;
use crate::sim::Trajectory;

/// Minimum pairwise distance between pool entries.
pub const MIN_POOL_DISTANCE: f64 = 1e-8;

/// Ordered collection of labeled trajectories.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub trajectories: Vec<Trajectory>,
    /// Per trajectory: measured output left the output box.
    pub violations: Vec<bool>,
}

impl Dataset {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_trajectories(trajectories: Vec<Trajectory>) -> Self {
        let violations = vec![false; trajectories.len()];
        Dataset { trajectories, violations }
    }

    pub fn push(&mut self, t: Trajectory, violated: bool) {
        self.trajectories.push(t);
        self.violations.push(violated);
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Trajectory> {
        self.trajectories.iter()
    }

    pub fn inputs(&self) -> Vec<&[f64]> {
        self.trajectories.iter().map(|t| t.u.as_slice()).collect()
    }

    /// SHA-256 of the canonical text of all trajectories and flags.
    pub fn fingerprint(&self) -> String {
        let mut text = String::new();
        for (i, (t, v)) in self.trajectories.iter().zip(&self.violations).enumerate() {
            text.push_str(&format!("trajectory {i} violated {}\n", u8::from(*v)));
            text.push_str(&trajectory_text(t));
        }
        sha256_hex(text.as_bytes())
    }

    /// Common horizon of all trajectories.
    pub fn horizon(&self) -> Result<usize> {
        let mut it = self.trajectories.iter().map(Trajectory::horizon);
        let first = it.next().ok_or_else(|| Error::Invalid("empty dataset".into()))?;
        if it.any(|h| h != first) {
            return Err(Error::Invalid("trajectories have different horizons".into()));
        }
        Ok(first)
    }
}

/// Plain-text form: a `u` section with one row of `n_u` values per step, a
/// `y` section likewise, and an optional `x0` row.
pub fn trajectory_text(t: &Trajectory) -> String {
    let mut s = String::from("u\n");
    for row in t.u.chunks(t.n_u) {
        s.push_str(&fmt_row(row, " "));
        s.push('\n');
    }
    s.push_str("y\n");
    for row in t.y.chunks(t.n_y) {
        s.push_str(&fmt_row(row, " "));
        s.push('\n');
    }
    if let Some(x0) = &t.x0 {
        s.push_str("x0\n");
        s.push_str(&fmt_row(x0, " "));
        s.push('\n');
    }
    s
}

pub fn parse_trajectory_text(text: &str, ctx: &str) -> Result<Trajectory> {
    let mut section = "";
    let (mut u, mut y, mut x0) = (Vec::new(), Vec::new(), None);
    let (mut n_u, mut n_y) = (0, 0);
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        match line {
            "" => continue,
            "u" | "y" | "x0" => {
                section = line;
                continue;
            }
            _ => {}
        }
        let row = parse_row(line, &format!("{ctx} line {}", i + 1))?;
        let width = match section {
            "u" => &mut n_u,
            "y" => &mut n_y,
            "x0" => {
                x0 = Some(row);
                continue;
            }
            _ => return Err(Error::Parse(format!("{ctx}: data before a section header"))),
        };
        if *width == 0 {
            *width = row.len();
        } else if *width != row.len() {
            return Err(Error::Parse(format!("{ctx} line {}: ragged row", i + 1)));
        }
        if section == "u" { u.extend(row) } else { y.extend(row) }
    }
    let t = Trajectory::new(n_u, n_y, u, y).map_err(|e| Error::Parse(format!("{ctx}: {e}")))?;
    Ok(match x0 {
        Some(x) => t.with_x0(x),
        None => t,
    })
}

/// Axis-aligned box, identical bounds at every time step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxSet {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl BoxSet {
    pub fn unit(n: usize) -> Self {
        BoxSet {
            lower: vec![-1.0; n],
            upper: vec![1.0; n],
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    /// Membership of a stacked sequence, every block checked.
    pub fn contains_seq(&self, v: &[f64]) -> bool {
        let n = self.dim();
        v.chunks(n).all(|blk| {
            blk.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(x, (lo, hi))| *x >= *lo && *x <= *hi)
        })
    }

    pub fn clip_seq(&self, v: &mut [f64]) {
        let n = self.dim();
        for blk in v.chunks_mut(n) {
            for (x, (lo, hi)) in blk.iter_mut().zip(self.lower.iter().zip(&self.upper)) {
                *x = x.clamp(*lo, *hi);
            }
        }
    }

    /// Uniform sample of a `horizon`-step sequence inside the box.
    pub fn sample_seq(&self, horizon: usize, rng: &mut impl Rng) -> Vec<f64> {
        let mut v = Vec::with_capacity(horizon * self.dim());
        for _ in 0..horizon {
            for (lo, hi) in self.lower.iter().zip(&self.upper) {
                v.push(rng.gen_range(*lo..=*hi));
            }
        }
        v
    }
}

/// Neighborhood `{U_i} ⊕ ε_u·B_∞` of a set of centers, intersected with the
/// input box when `clip` is set.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborhoodSpec {
    pub epsilon_u: f64,
    pub input_box: BoxSet,
    pub clip: bool,
}

impl NeighborhoodSpec {
    pub fn new(epsilon_u: f64, input_box: BoxSet, clip: bool) -> Result<Self> {
        if !(epsilon_u >= 0.0) {
            return Err(Error::Invalid("neighborhood radius must be nonnegative".into()));
        }
        Ok(NeighborhoodSpec { epsilon_u, input_box, clip })
    }

    /// Draws `n` points: a uniformly chosen center plus a uniform
    /// perturbation in the ε-box.
    pub fn sample(&self, centers: &[&[f64]], n: usize, rng: &mut impl Rng) -> Result<Vec<Vec<f64>>> {
        if centers.is_empty() {
            return Err(Error::Invalid("neighborhood needs at least one center".into()));
        }
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let c = centers[rng.gen_range(0..centers.len())];
            let mut v: Vec<f64> = c
                .iter()
                .map(|x| {
                    if self.epsilon_u > 0.0 {
                        x + rng.gen_range(-self.epsilon_u..=self.epsilon_u)
                    } else {
                        *x
                    }
                })
                .collect();
            if self.clip {
                self.input_box.clip_seq(&mut v);
            }
            out.push(v);
        }
        Ok(out)
    }
}

/// Unlabeled input trajectories with precomputed inverse squared pairwise
/// distances.
#[derive(Debug, Clone, PartialEq)]
pub struct RegPool {
    entries: Vec<Vec<f64>>,
    // 1/||U_k - U_l||^2 for k < l, row-major upper triangle
    weights: Vec<f64>,
}

impl RegPool {
    /// Rejects pools with coincident entries.
    pub fn new(entries: Vec<Vec<f64>>) -> Result<Self> {
        let n = entries.len();
        let mut weights = Vec::with_capacity(n * n.saturating_sub(1) / 2);
        for k in 0..n {
            for l in k + 1..n {
                if entries[k].len() != entries[l].len() {
                    return Err(Error::Dimension("pool entries differ in length".into()));
                }
                let d2 = sq_dist(&entries[k], &entries[l]);
                if d2 < MIN_POOL_DISTANCE * MIN_POOL_DISTANCE {
                    return Err(Error::DuplicatePool(k, l));
                }
                weights.push(1.0 / d2);
            }
        }
        Ok(RegPool { entries, weights })
    }

    /// Builds a pool, silently skipping entries within `MIN_POOL_DISTANCE`
    /// of one already kept.
    pub fn dedup(entries: impl IntoIterator<Item = Vec<f64>>) -> Result<Self> {
        let mut kept: Vec<Vec<f64>> = Vec::new();
        for e in entries {
            if kept
                .iter()
                .all(|k| sq_dist(k, &e) >= MIN_POOL_DISTANCE * MIN_POOL_DISTANCE)
            {
                kept.push(e);
            }
        }
        RegPool::new(kept)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[Vec<f64>] {
        &self.entries
    }

    /// Weight of the pair `(k, l)`, `k < l`.
    #[inline]
    pub fn weight(&self, k: usize, l: usize) -> f64 {
        debug_assert!(k < l);
        let n = self.entries.len();
        // offset of row k in the packed upper triangle
        let row = k * (2 * n - k - 1) / 2;
        self.weights[row + (l - k - 1)]
    }
}

pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trajectory_text_round_trips() {
        let t = Trajectory::new(2, 1, vec![0.1, -0.2, 1.0 / 3.0, 5e-300], vec![1e10, -0.0]).unwrap().with_x0(vec![0.5, 0.25]);
        let back = parse_trajectory_text(&trajectory_text(&t), "t").unwrap();
        assert_eq!(back, t);
        assert!(back.y[1].is_sign_negative());
        assert!(parse_trajectory_text("u\n1 2\n3\ny\n1\n1\n", "t").is_err());
    }

    #[test]
    fn fingerprint_tracks_content() {
        let t = Trajectory::new(1, 1, vec![0.1, 0.2], vec![0.3, 0.4]).unwrap();
        let mut a = Dataset::new();
        a.push(t.clone(), false);
        let mut b = a.clone();
        assert_eq!(a.fingerprint(), b.fingerprint());
        b.violations[0] = true;
        assert_ne!(a.fingerprint(), b.fingerprint());
    }

    #[test]
    fn pool_rejects_duplicates() {
        let a = vec![0.1, 0.2];
        let err = RegPool::new(vec![a.clone(), vec![1.0, 1.0], a.clone()]).unwrap_err();
        assert!(matches!(err, Error::DuplicatePool(0, 2)));
        let p = RegPool::dedup(vec![a.clone(), vec![1.0, 1.0], a]).unwrap();
        assert_eq!(p.len(), 2);
    }

    #[test]
    fn packed_weights_index_correctly() {
        let entries: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64 * i as f64]).collect();
        let p = RegPool::new(entries.clone()).unwrap();
        for k in 0..5 {
            for l in k + 1..5 {
                let d = entries[k][0] - entries[l][0];
                assert_eq!(p.weight(k, l), 1.0 / (d * d));
            }
        }
    }

    #[test]
    fn neighborhood_samples_stay_in_box_and_radius() {
        let spec = NeighborhoodSpec::new(0.3, BoxSet::unit(2), true).unwrap();
        let c1 = vec![0.9, -0.9, 0.0, 0.5];
        let c2 = vec![-0.2, 0.1, 0.7, -0.7];
        let mut rng = seeded_rng(5);
        let samples = spec.sample(&[&c1, &c2], 200, &mut rng).unwrap();
        for s in samples {
            assert!(BoxSet::unit(2).contains_seq(&s));
            let near = |c: &[f64]| c.iter().zip(&s).all(|(a, b)| (a - b).abs() <= 0.3 + 1e-15);
            assert!(near(&c1) || near(&c2));
        }
        assert!(NeighborhoodSpec::new(-1.0, BoxSet::unit(1), true).is_err());
    }

    #[test]
    fn zero_radius_reproduces_centers() {
        let spec = NeighborhoodSpec::new(0.0, BoxSet::unit(1), true).unwrap();
        let c = vec![0.25, -0.5];
        let s = spec.sample(&[&c], 3, &mut seeded_rng(1)).unwrap();
        assert!(s.iter().all(|v| v == &c));
    }
}
