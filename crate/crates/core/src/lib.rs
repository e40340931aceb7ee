//! Flow-level scheduling simulator for multihop wireless networks.
//!
//! The crate models files arriving at sources, window-based injection into
//! per-destination MAC queues, and three link schedulers: a centralized
//! max-weight rule on log-differential weights, single-site CSMA, and a
//! parallel Q-CSMA protocol with carrier sensing. `analysis` holds exact
//! Markov chain tools and statistical tests used to validate runs.

pub mod analysis;
pub mod config;
pub mod csma;
pub mod engine;
pub mod net_model;
pub mod scheduling;
pub mod transport;
pub mod verify;

pub use config::{ConfigError, ExperimentConfig, SweepGrid};
pub use engine::{run, MetricsFrame, SchedulerKind, SimConfig, Simulator};
pub use net_model::{build_network, Network, NetworkSpec};
