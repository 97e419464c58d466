//! Random-forest iterative imputation (the missForest scheme) with three
//! execution strategies, plus the Monte Carlo study machinery used to compare
//! them.
//!
//! The pipeline is `simulation::generate_scenario` → `amputation::ampute` →
//! `imputer::impute` → `metrics`, and `simulation::run_study` drives it over a
//! grid of scenario cells. Every random draw is keyed by a [`SeedSpec`] path,
//! so results never depend on how work is scheduled across threads.

pub mod amputation;
pub mod dataset;
pub mod error;
pub mod forest;
pub mod harness;
pub mod imputer;
pub mod linalg;
pub mod metrics;
pub mod simulation;
pub mod stochastic;

pub use dataset::{DataMatrix, MissingMask};
pub use error::{Error, Result};
pub use forest::{Forest, ForestParams};
pub use imputer::{ImputationResult, ImputationStrategy, ImputerParams, StopReason};

pub use stochastic::SeedSpec;
