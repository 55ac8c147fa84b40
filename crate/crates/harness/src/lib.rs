//! Scenario runner and reports for the platform model.
//!
//! A [`Scenario`] describes a cluster, a workload and a timed script of API
//! calls. [`run_scenario`] replays it deterministically in either mode and
//! returns a [`Report`].

pub mod error;
pub mod generate;
pub mod reference;
pub mod report;
pub mod runner;
pub mod scenario;

pub use error::{HarnessError, Result};
pub use generate::{generate, GenParams};
pub use reference::scheduler_only_log;
pub use report::{Report, Summary};
pub use runner::{run_scenario, run_scenario_observed};
pub use scenario::Scenario;
