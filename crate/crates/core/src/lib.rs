//! Mobility-aware segmentation of an edge-computing space into small
//! orchestration subspaces, plus a tick-based simulator that measures what
//! the segmentation does to delay, failures and subspace stability.
//!
//! The pipeline:
//!
//! 1. [`latency`] measures user-device and device-device latencies.
//! 2. [`localization`] embeds devices into a 2-D latency map and places
//!    users against them.
//! 3. [`segmentation`] splits users by mobility and clusters each layer
//!    laxly into subspaces that share the edge devices they cover.
//! 4. [`orchestration`] places tasks within a subspace's devices.
//!
//! [`engine`] drives all of it over time and [`sweep`] runs the
//! user-count sweep and writes CSV tables.
//!
//! ```
//! use edgeseg::config::ExperimentConfig;
//!
//! let cfg = ExperimentConfig {
//!     n_users: 30,
//!     n_devices: 9,
//!     sim_duration_s: 30.0,
//!     warmup_s: 5.0,
//!     ..Default::default()
//! };
//! let report = edgeseg::engine::run(cfg).unwrap();
//! assert!(report.generated >= report.completed);
//! ```

pub mod config;
pub mod engine;
pub mod geometry;
pub mod latency;
pub mod localization;
pub mod mobility;
pub mod model;
pub mod orchestration;
pub mod seed;
pub mod segmentation;
pub mod sweep;

pub use config::ExperimentConfig;
pub use engine::{run, run_variants, MetricsReport, Simulation, Variant};
pub use geometry::Point;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/latency.md")]
    mod latency {}
    #[doc = include_str!("../../../book/src/localization.md")]
    mod localization {}
    #[doc = include_str!("../../../book/src/segmentation.md")]
    mod segmentation {}
    #[doc = include_str!("../../../book/src/orchestration.md")]
    mod orchestration {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
}
