//! Identification of quasi linear parameter-varying (qLPV) state-space
//! models with scheduling-smoothness regularization, and an active-learning
//! loop that picks new experiments by path length on the model graph.

pub mod acquisition;
pub(crate) mod adjoint;
pub mod data;
pub mod error;
pub mod harness;
pub mod io;
pub mod model;
pub mod par;
pub mod path;
pub mod plants;
pub mod scalar;
pub mod sim;
pub mod tape;
pub mod training;

#[cfg(test)]
pub(crate) mod test_util;

pub use error::{Error, Result};
pub use model::{Activation, Dims, Layout, NetSpec, QlpvModel};
pub use sim::{
    assemble_g, ltv_simulate, output_sensitivity, predict, scheduling_eval, simulate,
    SchedulingSequence, SensitivityMethod, SimulationResult, Trajectory,
};
