//! Decentralized online learning with locally private message passing.
//!
//! Learners on a graph each see a stream of samples, keep an aggregated
//! gradient of their running empirical risk, and mix their parameter with
//! Laplace-perturbed copies broadcast by their neighbors.

pub mod config;
pub mod error;
pub mod gradient_memory;
pub mod learner;
pub mod metrics;
pub mod objectives;
pub mod privacy;
pub mod rng;
pub mod report;
pub mod schedules;
pub mod simulator;
pub mod topology;

pub use error::{Error, Result};
pub use gradient_memory::{EngineKind, GradientEngine};
pub use learner::{LearnerState, Message, ProjectionSet};
pub use objectives::{Loss, ProblemSpec, Sample};
pub use privacy::{NoiseSchedule, PrivacyLedger};
pub use schedules::{Regime, Schedules};
pub use simulator::{Experiment, RunTrace};
pub use topology::{Graph, Scale, WeightMatrix, WeightScheme};
