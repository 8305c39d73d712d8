//! Per-channel affine maps between physical units and unit boxes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `scaled = (phys - center) / half`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelMap {
    pub center: Vec<f64>,
    pub half: Vec<f64>,
}

impl ChannelMap {
    pub fn new(center: Vec<f64>, half: Vec<f64>) -> Result<Self> {
        if center.len() != half.len() || center.is_empty() {
            return Err(Error::Dimension("scaler center and half-range differ in length".into()));
        }
        if half.iter().any(|h| !(*h > 0.0) || !h.is_finite()) {
            return Err(Error::Invalid("scaler half-ranges must be positive".into()));
        }
        Ok(ChannelMap { center, half })
    }

    /// Maps the box `[lower, upper]` onto `[-1, 1]`.
    pub fn from_box(lower: &[f64], upper: &[f64]) -> Result<Self> {
        let center = lower.iter().zip(upper).map(|(l, u)| 0.5 * (l + u)).collect();
        let half = lower.iter().zip(upper).map(|(l, u)| 0.5 * (u - l)).collect();
        ChannelMap::new(center, half)
    }

    /// Centered at zero with the largest observed magnitude per channel.
    pub fn symmetric_fit(samples: &[&[f64]], n: usize) -> Result<Self> {
        let mut half = vec![0.0f64; n];
        for s in samples {
            for (i, v) in s.iter().enumerate() {
                half[i % n] = half[i % n].max(v.abs());
            }
        }
        ChannelMap::new(vec![0.0; n], half)
    }

    /// Observed `[min, max]` per channel mapped onto `[-1, 1]`.
    pub fn range_fit(samples: &[&[f64]], n: usize) -> Result<Self> {
        let mut lo = vec![f64::INFINITY; n];
        let mut hi = vec![f64::NEG_INFINITY; n];
        for s in samples {
            for (i, v) in s.iter().enumerate() {
                lo[i % n] = lo[i % n].min(*v);
                hi[i % n] = hi[i % n].max(*v);
            }
        }
        ChannelMap::from_box(&lo, &hi)
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn scale(&self, phys: &[f64]) -> Vec<f64> {
        let n = self.dim();
        phys.iter().enumerate().map(|(i, v)| (v - self.center[i % n]) / self.half[i % n]).collect()
    }

    pub fn unscale(&self, scaled: &[f64]) -> Vec<f64> {
        let n = self.dim();
        scaled.iter().enumerate().map(|(i, v)| v * self.half[i % n] + self.center[i % n]).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub input: ChannelMap,
    pub output: ChannelMap,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::test_util::random_input;
    use proptest::prelude::*;

    #[test]
    fn box_maps_onto_unit_box() {
        let m = ChannelMap::from_box(&[-10.0, 0.0], &[10.0, 4.0]).unwrap();
        assert_eq!(m.scale(&[-10.0, 0.0, 10.0, 4.0]), vec![-1.0, -1.0, 1.0, 1.0]);
        assert!(ChannelMap::from_box(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn fits_cover_the_samples() {
        let a = [0.5, -3.0, -0.25, 1.0];
        let s = ChannelMap::symmetric_fit(&[&a], 2).unwrap();
        assert_eq!(s.half, vec![0.5, 3.0]);
        assert_eq!(s.scale(&[0.0, 0.0]), vec![0.0, 0.0]);
        let r = ChannelMap::range_fit(&[&a], 2).unwrap();
        let sc = r.scale(&a);
        assert!(sc.iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    proptest! {
        #[test]
        fn round_trip(seed in 0u64..1000) {
            let c = random_input(1, 3, seed);
            let h: Vec<f64> = random_input(1, 3, seed + 1).iter().map(|v| 0.1 + v.abs() * 50.0).collect();
            let m = ChannelMap::new(c, h).unwrap();
            let x: Vec<f64> = random_input(7, 3, seed + 2).iter().map(|v| v * 30.0).collect();
            let back = m.unscale(&m.scale(&x));
            for (a, b) in back.iter().zip(&x) {
                prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
            }
        }
    }
}
