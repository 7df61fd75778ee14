//! Simulation and verification of generalized Pólya-type species sampling
//! sequences driven by random weights.
//!
//! - [`partition`], [`weights`], [`measure`] and [`rule`] are the building blocks.
//! - [`engine`] samples trajectories and [`families`] supplies ready-made models.
//! - [`cid`] checks the conditional identity in distribution (CID) condition,
//!   and [`stats`] computes the fluctuation statistics.
//! - [`montecarlo`] replicates experiments and tests the limit theorems.
//! - [`config`] and [`export`] cover the file formats.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cid;
pub mod config;
pub mod engine;
pub mod error;
pub mod export;
pub mod families;
pub mod measure;
pub mod montecarlo;
pub mod partition;
pub mod rng;
pub mod rule;
pub mod stats;
pub mod weights;

pub use config::{ExperimentConfig, TestKind};
pub use engine::{simulate, simulate_replicate, Model, Trajectory};
pub use error::{GosError, Result};
pub use families::FamilySpec;
pub use montecarlo::{run_experiment, TestResult};
