//! Ground-truth systems behind a common black-box interface.

pub mod oscillator;
pub mod scaler;
pub mod store;
pub mod tanks;

use rand::Rng;

use crate::data::{seeded_rng, BoxSet, Dataset};
use crate::error::{Error, Result};
use crate::par;
use crate::sim::Trajectory;
use oscillator::{simulate_physical, OscillatorParams};
use scaler::{ChannelMap, Scaler};

pub use tanks::{import_benchmark_csv, tanks_load, TanksData};

/// A deterministic map from scaled input sequences to scaled output
/// sequences, started from a fixed initial condition.
pub trait Plant: Sync {
    fn tag(&self) -> &str;
    fn n_u(&self) -> usize;
    fn n_y(&self) -> usize;
    fn evaluate(&self, u: &[f64]) -> Result<Vec<f64>>;
    fn input_box(&self) -> BoxSet {
        BoxSet::unit(self.n_u())
    }
    fn output_box(&self) -> BoxSet {
        BoxSet::unit(self.n_y())
    }
}

/// The two-mass oscillator in scaled coordinates, started at rest.
#[derive(Debug, Clone, PartialEq)]
pub struct OscillatorPlant {
    pub params: OscillatorParams,
    pub scaler: Scaler,
}

/// Physical force limit per channel.
pub const OSCILLATOR_FORCE: f64 = 10.0;

impl OscillatorPlant {
    pub fn new(params: OscillatorParams, scaler: Scaler) -> Result<Self> {
        params.validate()?;
        if scaler.input.dim() != 2 || scaler.output.dim() != 2 {
            return Err(Error::Dimension("oscillator scaler must have two channels".into()));
        }
        Ok(OscillatorPlant { params, scaler })
    }

    /// Output ranges fitted as the largest position magnitudes over a pilot
    /// batch of random input trajectories.
    pub fn with_pilot_scaler(params: OscillatorParams, horizon: usize, n_pilot: usize, seed: u64) -> Result<Self> {
        params.validate()?;
        let input = ChannelMap::from_box(&[-OSCILLATOR_FORCE; 2], &[OSCILLATOR_FORCE; 2])?;
        let mut rng = seeded_rng(seed);
        let inputs: Vec<Vec<f64>> = (0..n_pilot).map(|_| BoxSet::unit(2).sample_seq(horizon, &mut rng)).collect();
        let outputs: Result<Vec<Vec<f64>>> = par::map(&inputs, |u| Ok(simulate_physical(&params, &input.unscale(u), [0.0; 4])?.0))
            .into_iter()
            .collect();
        let outputs = outputs?;
        let refs: Vec<&[f64]> = outputs.iter().map(|v| v.as_slice()).collect();
        let output = ChannelMap::symmetric_fit(&refs, 2)?;
        OscillatorPlant::new(params, Scaler { input, output })
    }
}

impl Plant for OscillatorPlant {
    fn tag(&self) -> &str {
        "oscillator"
    }

    fn n_u(&self) -> usize {
        2
    }

    fn n_y(&self) -> usize {
        2
    }

    fn evaluate(&self, u: &[f64]) -> Result<Vec<f64>> {
        let phys = self.scaler.input.unscale(u);
        let (y, _) = simulate_physical(&self.params, &phys, [0.0; 4])?;
        Ok(self.scaler.output.scale(&y))
    }
}

/// `horizon`-step inputs drawn uniformly from the plant's input box.
pub fn random_inputs(plant: &dyn Plant, n: usize, horizon: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let b = plant.input_box();
    (0..n).map(|_| b.sample_seq(horizon, rng)).collect()
}

/// Labels every input with the plant response; output-box violations are
/// flagged, not rejected.
pub fn make_dataset(plant: &dyn Plant, inputs: &[Vec<f64>]) -> Result<Dataset> {
    let ib = plant.input_box();
    if let Some(i) = inputs.iter().position(|u| !ib.contains_seq(u)) {
        return Err(Error::Invalid(format!("input {i} violates the input constraints")));
    }
    let ys: Result<Vec<Vec<f64>>> = par::map(inputs, |u| plant.evaluate(u)).into_iter().collect();
    let ob = plant.output_box();
    let mut d = Dataset::new();
    for (u, y) in inputs.iter().zip(ys?) {
        let violated = !ob.contains_seq(&y);
        d.push(Trajectory::new(plant.n_u(), plant.n_y(), u.clone(), y)?, violated);
    }
    Ok(d)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plant() -> OscillatorPlant {
        OscillatorPlant::with_pilot_scaler(OscillatorParams::default(), 10, 20, 3).unwrap()
    }

    #[test]
    fn zero_input_gives_zero_output() {
        let p = plant();
        let d = make_dataset(&p, &[vec![0.0; 20]]).unwrap();
        assert!(d.trajectories[0].y.iter().all(|v| *v == 0.0));
        assert!(make_dataset(&p, &[]).unwrap().is_empty());
    }

    #[test]
    fn datasets_are_reproducible() {
        let p = plant();
        let a = make_dataset(&p, &random_inputs(&p, 5, 10, &mut seeded_rng(9))).unwrap();
        let b = make_dataset(&p, &random_inputs(&p, 5, 10, &mut seeded_rng(9))).unwrap();
        assert_eq!(a.fingerprint(), b.fingerprint());
        let single = crate::par::with_threads(1, || make_dataset(&p, &random_inputs(&p, 5, 10, &mut seeded_rng(9))).unwrap());
        assert_eq!(a.fingerprint(), single.fingerprint());
        assert_ne!(a.fingerprint(), make_dataset(&p, &random_inputs(&p, 5, 10, &mut seeded_rng(8))).unwrap().fingerprint());
    }

    #[test]
    fn pilot_batch_fits_in_the_output_box() {
        let p = plant();
        let d = make_dataset(&p, &random_inputs(&p, 20, 10, &mut seeded_rng(3))).unwrap();
        // the same draws as the pilot batch
        assert!(d.violations.iter().all(|v| !v));
        let big = BoxSet { lower: vec![-1.0; 2], upper: vec![1.0; 2] };
        assert!(make_dataset(&p, &[vec![2.0; 20]]).is_err());
        assert!(big.contains_seq(&d.trajectories[0].y));
    }

    #[test]
    fn violations_are_flagged() {
        let mut p = plant();
        p.scaler.output.half = vec![1e-6; 2];
        let d = make_dataset(&p, &random_inputs(&p, 2, 10, &mut seeded_rng(4))).unwrap();
        assert!(d.violations.iter().all(|v| *v));
    }
}
