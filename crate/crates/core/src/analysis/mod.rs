//! Exact oracles and statistical diagnostics.

pub mod chain;
pub mod linalg;
pub mod mixing;
pub mod oracle;
pub mod stats;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use chain::{
    build_kernel, exact_stationary, max_log_ratio, slem, stationary_by_solve, tv_distance, ExactChain, KernelVariant,
    Slem, Stationary,
};
pub use mixing::{csma_mixing_experiment, MixingConfig, MixingReport, MixingVerdict, Sampler};
pub use stats::{
    residual_moment_test, stability_verdict, MomentBound, ResidualReport, StabilityOptions, StabilityVerdict,
    VerdictTag,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalysisError {
    #[error("schedule set too large for exact analysis ({states} states)")]
    TooLarge { states: usize },
    #[error("power iteration did not converge within {iterations} iterations")]
    ConvergenceFailure { iterations: usize },
    #[error("distributions have different supports ({left} vs {right})")]
    DimensionMismatch { left: usize, right: usize },
    #[error("need at least {need} samples, got {got}")]
    InsufficientSamples { got: u64, need: u64 },
    #[error("need at least {need} frames, got {got}")]
    InsufficientData { got: usize, need: usize },
    #[error("stationary system is singular")]
    Singular,
    #[error("simulation failed: {0}")]
    Engine(String),
}

/// One named pass/fail entry of a machine-readable report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub statistic: f64,
    pub bound: f64,
    pub tolerance: f64,
}

impl CheckResult {
    pub fn new(name: impl Into<String>, passed: bool, statistic: f64, bound: f64, tolerance: f64) -> Self {
        CheckResult { name: name.into(), passed, statistic, bound, tolerance }
    }
}

pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub version: u32,
    pub suite: String,
    pub passed: bool,
    pub checks: Vec<CheckResult>,
}

impl Report {
    pub fn new(suite: impl Into<String>, checks: Vec<CheckResult>) -> Self {
        let passed = checks.iter().all(|c| c.passed);
        Report { version: REPORT_VERSION, suite: suite.into(), passed, checks }
    }
}
