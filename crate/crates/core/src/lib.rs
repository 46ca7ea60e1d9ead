//! Extended state distributed Kalman filtering.
//!
//! A network of sensors jointly estimates the state of a discrete-time plant
//! whose dynamics contain an uncertain nonlinear term. The nonlinearity is
//! appended to the state and estimated alongside it; each sensor predicts,
//! updates with its own measurement, then fuses its neighbours' updates by
//! covariance intersection over a switching communication digraph.
//!
//! Modules:
//!
//! - [`graph`]: weighted digraphs, switching schedules, joint connectivity.
//! - [`model`]: plant, extended system, noise, truth simulation.
//! - [`observability`]: collective observability Gramian.
//! - [`filter`]: prediction, optimal gain, Joseph update, fusion.
//! - [`harness`]: Monte Carlo metrics and reports.
//! - [`scenario`]: JSON scenario files and the shipped preset.
//!
//! The guide under `book/` walks through each piece; its code listings are
//! compiled and run as doctests of this crate.

pub mod error;
pub mod filter;
pub mod graph;
pub mod harness;
pub mod linalg;
pub mod model;
pub mod observability;
pub mod scenario;

pub use error::{Error, Result};
pub use filter::{FilterConfig, SensorEstimate};
pub use graph::{TopologySchedule, WeightedDigraph};
pub use harness::{ExperimentSpec, RunMetrics};
pub use model::{ExtendedSystem, NoiseBounds, OriginalSystem};
pub use scenario::{Scenario, ScenarioFile};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/graphs.md")]
    mod graphs {}
    #[doc = include_str!("../../../book/src/extended-state.md")]
    mod extended_state {}
    #[doc = include_str!("../../../book/src/observability.md")]
    mod observability {}
    #[doc = include_str!("../../../book/src/filter.md")]
    mod filter {}
    #[doc = include_str!("../../../book/src/monte-carlo.md")]
    mod monte_carlo {}
    #[doc = include_str!("../../../book/src/scenarios.md")]
    mod scenarios {}
}
