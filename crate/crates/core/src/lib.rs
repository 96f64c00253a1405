//! Market equilibria and envy-free, Pareto-optimal divisions of the unit
//! interval among buyers with piecewise-linear valuations.
//!
//! The usual entry point is [`dual::solve`], which returns prices, utility
//! prices and a pure allocation certified by its duality gap. [`verify`]
//! re-checks any allocation independently.

#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod conic;
pub mod dual;
pub mod ellipsoid;
pub mod envelope;
pub mod error;
pub mod feasible;
pub mod fixtures;
pub mod generate;
pub mod market;
pub mod oracle;
pub mod sda;
pub mod verify;

pub use dual::{solve, EquilibriumResult, PureAllocation, SolveConfig, StepSchedule};
pub use error::{Error, Result, ValidationError};
pub use market::{Interval, LinearPiece, MarketInstance, Mode};
