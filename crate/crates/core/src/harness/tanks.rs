//! Training on measured data with unknown initial states.

use serde::{Deserialize, Serialize};

use super::config::{derive_seed, ExperimentConfig, RegularizerKind};
use super::metrics::rmse;
use crate::data::{seeded_rng, BoxSet, Dataset, NeighborhoodSpec};
use crate::error::{Error, Result};
use crate::model::QlpvModel;
use crate::plants::TanksData;
use crate::sim::simulate;
use crate::training::{estimate_initial_state, train, Penalty, RegularizerSpec, ShootSamples};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TanksResult {
    pub kappa2: f64,
    pub objective: f64,
    pub train_rmse: f64,
    /// Infinite when the model diverges on the test input.
    pub test_rmse: f64,
    pub x0_warning: bool,
    pub theta_fingerprint: String,
}

/// Regularizer for one training trajectory: multiple shooting when enabled,
/// nothing otherwise.
pub fn tanks_regularizer(cfg: &ExperimentConfig, data: &Dataset, kappa2: f64, seed: u64) -> Result<RegularizerSpec> {
    if kappa2 == 0.0 || cfg.regularizer == RegularizerKind::None {
        return Ok(RegularizerSpec { kappa1: cfg.kappa1, kappa2: 0.0, penalty: Penalty::None });
    }
    if cfg.regularizer != RegularizerKind::Multishoot {
        return Err(Error::Invalid("measured data with unknown initial states needs the multishoot penalty".into()));
    }
    let nbhd = NeighborhoodSpec::new(cfg.epsilon_u, BoxSet::unit(1), true)?;
    let mut rng = seeded_rng(derive_seed(seed, "shoot"));
    let samples = ShootSamples::sample(data, cfg.shoot_len, cfg.shoot_samples, &nbhd, &mut rng)?;
    Ok(RegularizerSpec { kappa1: cfg.kappa1, kappa2, penalty: Penalty::MultiShoot(samples) })
}

/// Trains one model with smoothness weight `kappa2` and scores it on both
/// signals. The test initial state is fitted on the first `x0_prefix`
/// samples; the error covers the whole signal.
pub fn tanks_experiment(cfg: &ExperimentConfig, tanks: &TanksData, kappa2: f64, seed: u64) -> Result<(TanksResult, QlpvModel)> {
    let data = Dataset::from_trajectories(vec![tanks.train.clone()]);
    let reg = tanks_regularizer(cfg, &data, kappa2, seed)?;
    let tc = cfg.train_config(seed);
    let init = tc.initial_model(cfg.dims()?, cfg.net())?;
    let out = train(&data, &reg, &tc, &init)?;
    let horizon = tanks.train.horizon();
    let fit = simulate(&out.model, &tanks.train.u, Some(&out.x0s[0]))?;
    let train_rmse = rmse(&tanks.train.y, &fit.y, horizon);
    let est = estimate_initial_state(&out.model, &tanks.test.u, &tanks.test.y, cfg.x0_prefix.min(tanks.test.horizon()))?;
    let test_rmse = match simulate(&out.model, &tanks.test.u, Some(&est.x0)) {
        Ok(s) => rmse(&tanks.test.y, &s.y, tanks.test.horizon()),
        Err(Error::Unstable { .. }) => f64::INFINITY,
        Err(e) => return Err(e),
    };
    let result = TanksResult {
        kappa2,
        objective: out.end.value,
        train_rmse,
        test_rmse,
        x0_warning: est.warning,
        theta_fingerprint: out.model.fingerprint(),
    };
    Ok((result, out.model))
}
