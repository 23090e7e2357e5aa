//! Two-model self-consuming training loops with human curation.
//!
//! The crate simulates coupled retraining dynamics, solves the linear-Gaussian
//! system in closed form, and evaluates the sensitivity-based curation
//! derivatives together with the stability constants that guarantee them.

pub mod dynamics;
pub mod error;
pub mod gaussian;
pub mod linalg;
pub mod rewards;
pub mod sensitivity;
pub mod stats;
pub mod types;

pub use error::{Error, Result};
pub use gaussian::{BetaSchedule, BlockCouplingSpec, FixedPoint, GaussianSystem};
pub use types::{MixtureSpec, ParamVec, RegularityConstants, RunSeed, Side, UpdateSchedule};
