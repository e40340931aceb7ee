//! JSON experiment configuration.
//!
//! ```json
//! {
//!   "network": {"nodes": 2, "links": [[0, 1]],
//!               "sources": [{"node": 0, "destination": 1}],
//!               "routes": [{"destination": 1, "next_hops": [[0, 1]]}]},
//!   "traffic": {"file_types": [{"eta": 0.5}],
//!               "sources": [{"rate": 0.2, "type_probs": [1.0]}],
//!               "window": {"policy": {"fixed": 2}, "w_cong": 4}},
//!   "scheduler": {"kind": "basic_csma", "weight_fn": {"h": "loglog"}},
//!   "engine": {"slots": 10000, "seed": 7}
//! }
//! ```

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{AssertMode, EngineError, SchedulerConfig, SchedulerKind, SimConfig};
use crate::net_model::{make_capacity_point, CapacityError, DestinationSplit, Network, NetworkError, NetworkSpec, NodeId};
use crate::scheduling::{HChoice, WeightError, WeightFn};
use crate::transport::{ArrivalLaw, SourceTraffic, TrafficSpec, WindowConfig, WindowPolicy};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("network: {0}")]
    Network(#[from] NetworkError),
    #[error("capacity point: {0}")]
    Capacity(#[from] CapacityError),
    #[error("weight function: {0}")]
    Weight(#[from] WeightError),
    #[error("{0}")]
    Engine(#[from] EngineError),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub network: NetworkSpec,
    pub traffic: TrafficBlock,
    #[serde(default)]
    pub scheduler: SchedulerBlock,
    #[serde(default)]
    pub engine: EngineBlock,
    #[serde(default)]
    pub analysis: AnalysisBlock,
    #[serde(default)]
    pub output: Option<String>,
    #[serde(default)]
    pub replicas: Option<u32>,
    #[serde(default)]
    pub seeds: Option<Vec<u64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileTypeBlock {
    pub eta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceBlock {
    /// Files per slot; derived from `capacity` when omitted.
    #[serde(default)]
    pub rate: Option<f64>,
    pub type_probs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixEntry {
    pub links: Vec<(NodeId, NodeId)>,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitEntry {
    pub link: (NodeId, NodeId),
    pub destination: NodeId,
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CapacityBlock {
    pub mix: Vec<MixEntry>,
    /// Defaults to an equal split among the destinations each link carries.
    #[serde(default)]
    pub split: Option<Vec<SplitEntry>>,
    pub theta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowBlock {
    pub policy: WindowPolicy,
    pub w_cong: u32,
    #[serde(default = "one")]
    pub initial: u32,
}

fn one() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrafficBlock {
    #[serde(default)]
    pub arrival_law: ArrivalLaw,
    pub file_types: Vec<FileTypeBlock>,
    pub sources: Vec<SourceBlock>,
    #[serde(default)]
    pub capacity: Option<CapacityBlock>,
    pub window: WindowBlock,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "h", deny_unknown_fields)]
pub enum WeightFnBlock {
    #[serde(rename = "one")]
    One,
    #[serde(rename = "loglog")]
    LogLog,
    #[serde(rename = "logtheta")]
    LogTheta { theta: f64 },
}

impl WeightFnBlock {
    pub fn build(self) -> Result<WeightFn, WeightError> {
        WeightFn::new(match self {
            WeightFnBlock::One => HChoice::One,
            WeightFnBlock::LogLog => HChoice::LogLog,
            WeightFnBlock::LogTheta { theta } => HChoice::LogTheta { theta },
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BetaBlock {
    All(f64),
    /// Node id (as a string key) to probability; unlisted nodes use 0.5.
    PerNode(BTreeMap<String, f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SchedulerBlock {
    pub kind: SchedulerKind,
    pub weight_fn: WeightFnBlock,
    pub epsilon: f64,
    pub beta: BetaBlock,
    pub control_overhead_ratio: f64,
    pub prune_nonpositive: bool,
}

impl Default for SchedulerBlock {
    fn default() -> Self {
        SchedulerBlock {
            kind: SchedulerKind::Centralized,
            weight_fn: WeightFnBlock::LogLog,
            epsilon: 0.1,
            beta: BetaBlock::All(0.5),
            control_overhead_ratio: 0.0,
            prune_nonpositive: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EngineBlock {
    pub slots: u64,
    pub seed: u64,
    pub metrics_every: u64,
    pub assertions: AssertMode,
    /// Write a snapshot every this many slots.
    pub snapshot_every: Option<u64>,
}

impl Default for EngineBlock {
    fn default() -> Self {
        EngineBlock { slots: 10_000, seed: 0, metrics_every: 1, assertions: AssertMode::Record, snapshot_every: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisBlock {
    /// Known excess load for the instability test; estimated when absent.
    pub excess_load: Option<f64>,
    /// Frozen link weights for `sample-csma`.
    pub frozen_weights: Option<Vec<f64>>,
    pub burn_in: u64,
    pub mixing_tolerance: f64,
}

impl Default for AnalysisBlock {
    fn default() -> Self {
        AnalysisBlock { excess_load: None, frozen_weights: None, burn_in: 10_000, mixing_tolerance: 0.02 }
    }
}

impl ExperimentConfig {
    pub fn from_json(s: &str) -> Result<Self, ConfigError> {
        serde_json::from_str(s).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn network(&self) -> Result<Network, ConfigError> {
        Ok(Network::new(&self.network)?)
    }

    /// Seeds for each replica: explicit list, else `seed, seed + 1, ...`.
    pub fn replica_seeds(&self) -> Vec<u64> {
        match &self.seeds {
            Some(s) if !s.is_empty() => s.clone(),
            _ => (0..self.replicas.unwrap_or(1).max(1) as u64).map(|i| self.engine.seed + i).collect(),
        }
    }

    pub fn beta(&self, nodes: usize) -> Result<Vec<f64>, ConfigError> {
        match &self.scheduler.beta {
            BetaBlock::All(b) => Ok(vec![*b; nodes]),
            BetaBlock::PerNode(map) => {
                let mut out = vec![0.5; nodes];
                for (k, v) in map {
                    let node: usize =
                        k.parse().map_err(|_| ConfigError::Invalid(format!("beta key {k:?} is not a node id")))?;
                    if node >= nodes {
                        return Err(ConfigError::Invalid(format!("beta given for unknown node {node}")));
                    }
                    out[node] = *v;
                }
                Ok(out)
            }
        }
    }

    /// Source arrival rates, derived from the capacity block when present.
    pub fn rates(&self, network: &Network) -> Result<Vec<f64>, ConfigError> {
        let etas: Vec<f64> = self.traffic.file_types.iter().map(|f| f.eta).collect();
        if self.traffic.sources.len() != network.sources().len() {
            return Err(ConfigError::Invalid(format!(
                "traffic lists {} sources but the network has {}",
                self.traffic.sources.len(),
                network.sources().len()
            )));
        }
        match &self.traffic.capacity {
            None => self
                .traffic
                .sources
                .iter()
                .enumerate()
                .map(|(s, src)| src.rate.ok_or_else(|| ConfigError::Invalid(format!("source {s} needs a rate"))))
                .collect(),
            Some(cap) => {
                if self.traffic.sources.iter().any(|s| s.rate.is_some()) {
                    return Err(ConfigError::Invalid("give either source rates or a capacity block, not both".into()));
                }
                let mut mix = Vec::with_capacity(cap.mix.len());
                for entry in &cap.mix {
                    let links = entry
                        .links
                        .iter()
                        .map(|&(a, b)| network.link_id(a, b).ok_or(NetworkError::UnknownLink(a, b)))
                        .collect::<Result<Vec<_>, _>>()?;
                    mix.push((links, entry.weight));
                }
                let split = match &cap.split {
                    None => DestinationSplit::equal(network),
                    Some(entries) => {
                        let mut fractions = vec![vec![0.0; network.destinations().len()]; network.link_count()];
                        for e in entries {
                            let l = network.link_id(e.link.0, e.link.1).ok_or(NetworkError::UnknownLink(e.link.0, e.link.1))?;
                            let k = network
                                .dest_index(e.destination)
                                .ok_or_else(|| ConfigError::Invalid(format!("{} is not a destination", e.destination)))?;
                            fractions[l][k] = e.fraction;
                        }
                        DestinationSplit { fractions }
                    }
                };
                let point = make_capacity_point(network, &mix, &split, cap.theta)?;
                Ok(self
                    .traffic
                    .sources
                    .iter()
                    .zip(&point.rho)
                    .map(|(src, rho)| {
                        let m: f64 = src.type_probs.iter().zip(&etas).map(|(p, e)| p / e).sum();
                        if m > 0.0 { rho / m } else { 0.0 }
                    })
                    .collect())
            }
        }
    }

    pub fn build(&self, seed: u64) -> Result<SimConfig, ConfigError> {
        let network = self.network()?;
        let rates = self.rates(&network)?;
        let traffic = TrafficSpec {
            law: self.traffic.arrival_law,
            etas: self.traffic.file_types.iter().map(|f| f.eta).collect(),
            sources: self
                .traffic
                .sources
                .iter()
                .zip(rates)
                .map(|(s, rate)| SourceTraffic { rate, type_probs: s.type_probs.clone() })
                .collect(),
        };
        let window = WindowConfig {
            policy: self.traffic.window.policy,
            w_cong: self.traffic.window.w_cong,
            initial: self.traffic.window.initial,
        };
        let s = &self.scheduler;
        if !(s.control_overhead_ratio >= 0.0 && s.control_overhead_ratio.is_finite()) {
            return Err(ConfigError::Invalid("control_overhead_ratio must be finite and nonnegative".into()));
        }
        let scheduler = SchedulerConfig {
            kind: s.kind,
            weight_fn: s.weight_fn.build()?,
            epsilon: s.epsilon,
            beta: self.beta(network.node_count())?,
            control_overhead_ratio: s.control_overhead_ratio,
            prune_nonpositive: s.prune_nonpositive,
        };
        let cfg = SimConfig {
            network: Arc::new(network),
            traffic,
            window,
            scheduler,
            horizon: self.engine.slots,
            seed,
            metrics_every: self.engine.metrics_every,
            assertions: self.engine.assertions,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Parameter grid for sweeps; each non-empty list is one axis.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepGrid {
    pub theta: Vec<f64>,
    pub w_cong: Vec<u32>,
    pub scheduler: Vec<SchedulerKind>,
    pub epsilon: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridPoint {
    pub theta: Option<f64>,
    pub w_cong: u32,
    pub scheduler: SchedulerKind,
    pub epsilon: f64,
}

impl SweepGrid {
    pub fn is_empty(&self) -> bool {
        self.theta.is_empty() && self.w_cong.is_empty() && self.scheduler.is_empty() && self.epsilon.is_empty()
    }

    /// Cartesian product of the axes, with missing axes taken from `base`.
    pub fn points(&self, base: &ExperimentConfig) -> Result<Vec<(GridPoint, ExperimentConfig)>, ConfigError> {
        if self.is_empty() {
            return Err(ConfigError::Invalid("sweep grid is empty".into()));
        }
        if !self.theta.is_empty() && base.traffic.capacity.is_none() {
            return Err(ConfigError::Invalid("a theta axis needs a capacity block in the base config".into()));
        }
        let thetas: Vec<Option<f64>> = if self.theta.is_empty() {
            vec![base.traffic.capacity.as_ref().map(|c| c.theta)]
        } else {
            self.theta.iter().copied().map(Some).collect()
        };
        let wcs = if self.w_cong.is_empty() { vec![base.traffic.window.w_cong] } else { self.w_cong.clone() };
        let kinds = if self.scheduler.is_empty() { vec![base.scheduler.kind] } else { self.scheduler.clone() };
        let eps = if self.epsilon.is_empty() { vec![base.scheduler.epsilon] } else { self.epsilon.clone() };
        let mut out = Vec::new();
        for &theta in &thetas {
            for &w_cong in &wcs {
                for &kind in &kinds {
                    for &epsilon in &eps {
                        let mut cfg = base.clone();
                        if let (Some(t), Some(cap)) = (theta, cfg.traffic.capacity.as_mut()) {
                            cap.theta = t;
                        }
                        cfg.traffic.window.w_cong = w_cong;
                        cfg.scheduler.kind = kind;
                        cfg.scheduler.epsilon = epsilon;
                        out.push((GridPoint { theta, w_cong, scheduler: kind, epsilon }, cfg));
                    }
                }
            }
        }
        Ok(out)
    }
}
