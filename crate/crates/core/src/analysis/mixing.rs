//! Empirical schedule occupancy of the CSMA samplers against exact Gibbs laws.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::chain::{build_kernel, gibbs, max_log_ratio, slem, tv_distance, KernelVariant};
use super::oracle::weight_drift_rate;
use super::AnalysisError;
use crate::csma::{basic_csma_step, carrier_sense_update, data_schedule, decision_schedule, first_conflict, CsmaNodeState};
use crate::engine::{SchedulerKind, SimConfig, Simulator};
use crate::net_model::{enumerate_schedules, ConflictGraph, Network};

#[derive(Debug, Clone, Copy)]
pub enum Sampler<'a> {
    /// Single-site Glauber dynamics on an abstract conflict graph.
    Basic(&'a ConflictGraph),
    /// The full RTD/CTD protocol with carrier sensing on a network.
    QCsma { network: &'a Network, beta: &'a [f64] },
}

impl Sampler<'_> {
    fn graph(&self) -> &ConflictGraph {
        match self {
            Sampler::Basic(g) => g,
            Sampler::QCsma { network, .. } => network.conflict_graph(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixingConfig {
    /// Frozen per-link weights.
    pub weights: Vec<f64>,
    pub slots: u64,
    /// Leading slots excluded from the occupancy count.
    pub burn_in: u64,
    pub seed: u64,
    pub tolerance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MixingVerdict {
    Pass,
    Fail,
    /// The chain never left its initial state, so occupancy says nothing.
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixingReport {
    pub states: usize,
    pub tv: f64,
    pub verdict: MixingVerdict,
    pub occupancy: Vec<f64>,
    pub pi: Vec<f64>,
    pub independence_violations: u64,
    pub state_changes: u64,
}

pub fn csma_mixing_experiment(sampler: Sampler<'_>, cfg: &MixingConfig) -> Result<MixingReport, AnalysisError> {
    let graph = sampler.graph();
    let set = enumerate_schedules(graph).map_err(|_| AnalysisError::TooLarge { states: usize::MAX })?;
    if set.len() > super::chain::MAX_EXACT_STATES {
        return Err(AnalysisError::TooLarge { states: set.len() });
    }
    let pi = gibbs(&set, &cfg.weights);
    let nl = graph.vertex_count();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut x = vec![false; nl];
    let mut nodes = match sampler {
        Sampler::QCsma { network, .. } => vec![CsmaNodeState::default(); network.node_count()],
        Sampler::Basic(_) => Vec::new(),
    };
    let mut counts = vec![0u64; set.len()];
    let mut violations = 0;
    let mut changes = 0;
    let mut prev = 0u64;
    for t in 0..cfg.slots {
        match sampler {
            Sampler::Basic(g) => {
                basic_csma_step(&mut rng, g, &mut x, &cfg.weights);
            }
            Sampler::QCsma { network, beta } => {
                let m = decision_schedule(&mut rng, network, beta, &mut nodes).unwrap_or_default();
                let _ = data_schedule(&mut rng, network, &m, &mut x, &nodes, &cfg.weights);
                carrier_sense_update(network, &x, &mut nodes);
            }
        }
        if first_conflict(graph, &x).is_some() {
            violations += 1;
            continue;
        }
        let mask = x.iter().enumerate().fold(0u64, |m, (l, &on)| m | (on as u64) << l);
        changes += (mask != prev) as u64;
        prev = mask;
        if t >= cfg.burn_in {
            counts[set.index_of(mask).expect("independent activation is a schedule")] += 1;
        }
    }
    let total: u64 = counts.iter().sum();
    let occupancy: Vec<f64> = counts.iter().map(|&c| c as f64 / total.max(1) as f64).collect();
    let tv = tv_distance(&occupancy, &pi)?;
    let verdict = if changes == 0 {
        MixingVerdict::Inconclusive
    } else if tv <= cfg.tolerance && violations == 0 {
        MixingVerdict::Pass
    } else {
        MixingVerdict::Fail
    };
    Ok(MixingReport { states: set.len(), tv, verdict, occupancy, pi, independence_violations: violations, state_changes: changes })
}

/// Outcome of tracking the exact Gibbs law along a live CSMA run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeVaryingReport {
    pub slots: u64,
    /// Consecutive weight pairs compared against the ratio bound.
    pub ratio_checks: u64,
    pub ratio_violations: u64,
    /// Largest `max_s |ln(pi_{t+1}/pi_t)| / alpha_t` seen.
    pub worst_ratio_over_alpha: f64,
    /// `alpha_t * T_{t+1}` at each probe.
    pub alpha_mixing_products: Vec<f64>,
    pub delta_over_16: f64,
    /// TV between occupancy over the second half and the average exact law there.
    pub tv_second_half: f64,
}

/// Runs a CSMA configuration and compares its schedules against `pi_t` slot by slot.
pub fn time_varying_experiment(config: SimConfig, probe_every: u64, delta: f64) -> Result<TimeVaryingReport, AnalysisError> {
    if config.scheduler.kind == SchedulerKind::Centralized {
        return Err(AnalysisError::Engine("time-varying mixing needs a CSMA scheduler".into()));
    }
    let wf = config.scheduler.weight_fn;
    let w_cong = config.window.w_cong;
    let horizon = config.horizon;
    let mut sim = Simulator::new(config).map_err(|e| AnalysisError::Engine(e.to_string()))?;
    let set = sim.schedules().cloned().ok_or(AnalysisError::TooLarge { states: usize::MAX })?;
    let graph = sim.config().network.conflict_graph().clone();
    let links = graph.vertex_count();
    let half = horizon / 2;

    let mut prev_pi: Option<Vec<f64>> = None;
    let mut report = TimeVaryingReport {
        slots: horizon,
        ratio_checks: 0,
        ratio_violations: 0,
        worst_ratio_over_alpha: 0.0,
        alpha_mixing_products: Vec::new(),
        delta_over_16: delta / 16.0,
        tv_second_half: 0.0,
    };
    let mut occupancy = vec![0.0; set.len()];
    let mut mean_pi = vec![0.0; set.len()];
    while !sim.is_finished() {
        let frame = sim.step().map_err(|e| AnalysisError::Engine(e.to_string()))?;
        let w = sim.last_mac_weights().to_vec();
        let pi = gibbs(&set, &w);
        if let Some(prev) = &prev_pi {
            let alpha = weight_drift_rate(&wf, w_cong, links, sim.last_g_star());
            let ratio = max_log_ratio(prev, &pi);
            report.ratio_checks += 1;
            if ratio > alpha * (1.0 + 1e-12) {
                report.ratio_violations += 1;
            }
            report.worst_ratio_over_alpha = report.worst_ratio_over_alpha.max(ratio / alpha);
            if frame.slot % probe_every == 0 {
                let chain = build_kernel(&graph, &w, &KernelVariant::SingleSite)?;
                report.alpha_mixing_products.push(alpha * slem(&chain)?.mixing_time);
            }
        }
        if frame.slot >= half {
            if let Some(i) = frame.schedule_id {
                occupancy[i] += 1.0;
            }
            mean_pi.iter_mut().zip(&pi).for_each(|(m, p)| *m += p);
        }
        prev_pi = Some(pi);
    }
    let n = (horizon - half) as f64;
    occupancy.iter_mut().for_each(|o| *o /= n);
    mean_pi.iter_mut().for_each(|m| *m /= n);
    report.tv_second_half = tv_distance(&occupancy, &mean_pi)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::csma::activation_probability;
    use crate::net_model::{build_network, NetworkSpec, RouteTable, SourceSpec};

    #[test]
    fn single_link_occupancy() {
        let g = ConflictGraph::from_edges(1, &[]);
        let cfg = MixingConfig { weights: vec![0.8], slots: 1_000_000, burn_in: 0, seed: 3, tolerance: 0.003 };
        let rep = csma_mixing_experiment(Sampler::Basic(&g), &cfg).unwrap();
        assert!((rep.occupancy[1] - activation_probability(0.8)).abs() < 0.003, "{rep:?}");
        assert_eq!(rep.verdict, MixingVerdict::Pass);
    }

    #[test]
    fn silent_protocol_is_inconclusive() {
        let net = build_network(&NetworkSpec {
            nodes: 2,
            links: vec![(0, 1)],
            sources: vec![SourceSpec { node: 0, destination: 1 }],
            routes: vec![RouteTable { destination: 1, next_hops: vec![(0, 1)] }],
        })
        .unwrap();
        let beta = [0.0, 0.0];
        let cfg = MixingConfig { weights: vec![0.0], slots: 10_000, burn_in: 0, seed: 4, tolerance: 0.02 };
        let rep = csma_mixing_experiment(Sampler::QCsma { network: &net, beta: &beta }, &cfg).unwrap();
        assert_eq!(rep.verdict, MixingVerdict::Inconclusive);
    }
}
