//! Analytic and simulated performance of a cognitive-radio IoT access point
//! that shares licensed spectrum with an exponential ON/OFF primary network,
//! serving sensor traffic and recharging the sensors over the same band.
//!
//! The chain lives in [`dtmc`], its metrics in [`qos`], the Monte Carlo
//! counterpart in [`sim`], and feasibility sweeps in [`region`].

pub mod dtmc;
pub mod error;
pub mod model;
pub mod parallel;
pub mod qos;
pub mod region;
pub mod sim;

pub use dtmc::{
    build_transition_matrix, build_transition_matrix_with, enumerate_states,
    stationary_distribution, ServiceRule, State, StateSpace, StationaryDistribution,
    TransitionMatrix,
};
pub use error::{Error, Result};
pub use model::{
    Action, Phase, PnpModel, PolicyModel, PowerModel, SensingModel, SlotTransitionKernel,
    SystemParams, TrafficModel,
};
pub use qos::{evaluate, evaluate_with, Evaluation, KappaVariant, QosReport, WaitEstimator};
pub use region::{Constraints, CriticalPoint, SweepAxis, SweepRow, SweepTarget};
pub use sim::{run_replications, run_simulation, Estimate, SimConfig, SimResult, SimRun};
