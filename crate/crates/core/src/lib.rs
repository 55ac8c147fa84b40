//! Symmetric HPC platform model.
//!
//! Reservation scheduling over a seven-dimension resource vector, a
//! deterministic simulated cluster that executes workload traces, and a
//! telemetry plane with boundary-condition alarms. [`platform::Platform`] ties
//! them into one serialized state machine.

pub mod error;
pub mod fairness;
pub mod images;
pub mod logical;
pub mod model;
pub mod platform;
pub mod quantity;
pub mod resource;
pub mod scheduler;
pub mod simnode;
pub mod telemetry;

pub use error::{Error, Result};
pub use quantity::Quantity;
pub use resource::{Dim, ResourceVec};

/// Unsigned resource quantities: capacities, reservations, demands.
pub type ResourceVector = ResourceVec<u64>;
/// Signed per-dimension change, negatives release.
pub type ResourceDelta = ResourceVec<i64>;
/// Utilization ratios.
pub type UtilizationVector = ResourceVec<f64>;
