//! Modified weights, single-site CSMA and the Q-CSMA control/data protocol.
//!
//! Carrier sensing uses the symmetric neighbourhood `N(i)` of the network:
//! a node hears every node it shares a link with, in either direction.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::net_model::{ConflictGraph, LinkId, Network, NodeId};
use crate::scheduling::{weights_from_potentials, LinkWeights, WeightFn};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CsmaError {
    #[error("activation vector is not an independent set (links {0} and {1} both active)")]
    ConflictViolation(LinkId, LinkId),
    #[error("decision set is not conflict-free (links {0} and {1})")]
    DecisionConflict(LinkId, LinkId),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModifiedWeights {
    pub g_star: f64,
    pub q_max: u64,
    pub weights: LinkWeights,
}

/// `g* = eps / (4 N^3) * g(q_max)`.
pub fn g_star(wf: &WeightFn, nodes: usize, q_max: u64, epsilon: f64) -> f64 {
    epsilon / (4.0 * (nodes as f64).powi(3)) * wf.g(q_max as f64)
}

pub fn modified_weights<R: Rng + ?Sized>(
    wf: &WeightFn,
    network: &Network,
    q: &[Vec<u64>],
    epsilon: f64,
    rng: Option<&mut R>,
) -> ModifiedWeights {
    let q_max = q.iter().flatten().copied().max().unwrap_or(0);
    let gs = g_star(wf, network.node_count(), q_max, epsilon);
    let pot: Vec<Vec<f64>> = q.iter().map(|row| row.iter().map(|&x| wf.g(x as f64).max(gs)).collect()).collect();
    ModifiedWeights { g_star: gs, q_max, weights: weights_from_potentials(network, &pot, rng) }
}

/// Logistic `e^w / (1 + e^w)`.
pub fn activation_probability(w: f64) -> f64 {
    if w > 30.0 {
        1.0 - (-w).exp()
    } else {
        let e = w.exp();
        e / (1.0 + e)
    }
}

fn blocked(graph: &ConflictGraph, x: &[bool], l: LinkId) -> bool {
    graph.neighbors(l).iter().any(|&m| x[m])
}

/// One Glauber update: a uniformly chosen link re-randomises unless blocked.
/// Returns the chosen link.
pub fn basic_csma_step<R: Rng + ?Sized>(rng: &mut R, graph: &ConflictGraph, x: &mut [bool], weights: &[f64]) -> LinkId {
    let l = rng.random_range(0..graph.vertex_count());
    x[l] = if blocked(graph, x, l) { false } else { rng.random::<f64>() < activation_probability(weights[l]) };
    l
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CsmaNodeState {
    /// Sender in the current decision schedule.
    pub sender: bool,
    /// Receiver in the current decision schedule.
    pub receiver: bool,
    pub peer: Option<NodeId>,
    /// Heard data (an active sender nearby) in the last data slot.
    pub sensed_sender: bool,
    /// Heard an ACK (an active receiver nearby) in the last data slot.
    pub sensed_receiver: bool,
}

/// Mini-slot 1 intents: `Some(j)` when the node sends an RTD to `j`.
pub fn draw_rtd_intents<R: Rng + ?Sized>(rng: &mut R, network: &Network, beta: &[f64]) -> Vec<Option<NodeId>> {
    (0..network.node_count())
        .map(|i| {
            let out = network.out_links(i);
            if out.is_empty() || rng.random::<f64>() >= beta[i] {
                return None;
            }
            let l = out[rng.random_range(0..out.len())];
            Some(network.link(l).to)
        })
        .collect()
}

/// Resolves RTD/CTD collisions into the decision set (ascending link ids).
pub fn resolve_decision(network: &Network, intents: &[Option<NodeId>]) -> Vec<LinkId> {
    let order: Vec<NodeId> = (0..network.node_count()).collect();
    resolve_decision_in_order(network, intents, &order)
}

pub(crate) fn resolve_decision_in_order(network: &Network, intents: &[Option<NodeId>], order: &[NodeId]) -> Vec<LinkId> {
    let n = network.node_count();
    // Mini-slot 1: j decodes an RTD iff it is silent and exactly one neighbour transmitted.
    let mut rtd_from = vec![None; n];
    for &j in order {
        if intents[j].is_some() {
            continue;
        }
        let mut talkers = network.neighbors(j).iter().filter(|&&a| intents[a].is_some());
        if let (Some(&i), None) = (talkers.next(), talkers.next()) {
            if intents[i] == Some(j) {
                rtd_from[j] = Some(i);
            }
        }
    }
    // Mini-slot 2: i decodes the CTD iff no other neighbour sent one.
    let mut links = Vec::new();
    for &i in order {
        let Some(j) = intents[i] else { continue };
        if rtd_from[j] != Some(i) {
            continue;
        }
        let ctd_senders = network.neighbors(i).iter().filter(|&&b| rtd_from[b].is_some()).count();
        if ctd_senders == 1 {
            links.push(network.link_id(i, j).expect("intent targets an out-link"));
        }
    }
    links.sort_unstable();
    links
}

/// Runs both control mini-slots and records the pairing memories.
pub fn decision_schedule<R: Rng + ?Sized>(
    rng: &mut R,
    network: &Network,
    beta: &[f64],
    nodes: &mut [CsmaNodeState],
) -> Result<Vec<LinkId>, CsmaError> {
    let intents = draw_rtd_intents(rng, network, beta);
    let m = resolve_decision(network, &intents);
    for s in nodes.iter_mut() {
        s.sender = false;
        s.receiver = false;
        s.peer = None;
    }
    for &l in &m {
        let link = network.link(l);
        nodes[link.from].sender = true;
        nodes[link.from].peer = Some(link.to);
        nodes[link.to].receiver = true;
        nodes[link.to].peer = Some(link.from);
    }
    check_independent(network.conflict_graph(), &m).map_err(|(a, b)| CsmaError::DecisionConflict(a, b))?;
    Ok(m)
}

fn check_independent(graph: &ConflictGraph, links: &[LinkId]) -> Result<(), (LinkId, LinkId)> {
    for (k, &a) in links.iter().enumerate() {
        for &b in &links[k + 1..] {
            if graph.conflicts(a, b) {
                return Err((a, b));
            }
        }
    }
    Ok(())
}

pub fn first_conflict(graph: &ConflictGraph, x: &[bool]) -> Option<(LinkId, LinkId)> {
    let on: Vec<LinkId> = x.iter().enumerate().filter(|(_, v)| **v).map(|(l, _)| l).collect();
    check_independent(graph, &on).err()
}

/// Data-slot update of the links in `m`, using only local carrier-sense memories.
pub fn data_schedule<R: Rng + ?Sized>(
    rng: &mut R,
    network: &Network,
    m: &[LinkId],
    x: &mut [bool],
    nodes: &[CsmaNodeState],
    weights: &[f64],
) -> Result<(), CsmaError> {
    for &l in m {
        let link = network.link(l);
        let free = !nodes[link.from].sensed_receiver && !nodes[link.to].sensed_sender;
        x[l] = if x[l] || free { rng.random::<f64>() < activation_probability(weights[l]) } else { false };
    }
    match first_conflict(network.conflict_graph(), x) {
        Some((a, b)) => Err(CsmaError::ConflictViolation(a, b)),
        None => Ok(()),
    }
}

/// Sets NS/NR from the data slot's activation: a node senses a sender (receiver)
/// when one is itself or a neighbour.
pub fn carrier_sense_update(network: &Network, x: &[bool], nodes: &mut [CsmaNodeState]) {
    for s in nodes.iter_mut() {
        s.sensed_sender = false;
        s.sensed_receiver = false;
    }
    for (l, _) in x.iter().enumerate().filter(|(_, on)| **on) {
        let link = network.link(l);
        nodes[link.from].sensed_sender = true;
        for &v in network.neighbors(link.from) {
            nodes[v].sensed_sender = true;
        }
        nodes[link.to].sensed_receiver = true;
        for &v in network.neighbors(link.to) {
            nodes[v].sensed_receiver = true;
        }
    }
}

/// Probability of each decision set under the RTD/CTD protocol.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionDistribution {
    /// `(mask, probability)` sorted by mask.
    pub entries: Vec<(u64, f64)>,
    pub exact: bool,
    /// Monte Carlo draws, 0 when exact.
    pub draws: u64,
}

impl DecisionDistribution {
    pub fn prob(&self, mask: u64) -> f64 {
        self.entries.binary_search_by_key(&mask, |e| e.0).map(|i| self.entries[i].1).unwrap_or(0.0)
    }

    /// Largest binomial standard error over the entries (0 when exact).
    pub fn max_std_error(&self) -> f64 {
        if self.exact {
            return 0.0;
        }
        self.entries.iter().map(|&(_, p)| (p * (1.0 - p) / self.draws as f64).sqrt()).fold(0.0, f64::max)
    }
}

fn collect(mut acc: Vec<(u64, f64)>) -> Vec<(u64, f64)> {
    acc.sort_by_key(|e| e.0);
    let mut out: Vec<(u64, f64)> = Vec::new();
    for (m, p) in acc {
        match out.last_mut() {
            Some(last) if last.0 == m => last.1 += p,
            _ => out.push((m, p)),
        }
    }
    out
}

/// Exact decision-set law by enumerating every combination of RTD intents.
pub fn decision_distribution_exact(network: &Network, beta: &[f64]) -> DecisionDistribution {
    assert!(network.link_count() <= 64);
    let n = network.node_count();
    let mut acc = Vec::new();
    let mut intents = vec![None; n];
    fn walk(network: &Network, beta: &[f64], v: usize, p: f64, intents: &mut Vec<Option<NodeId>>, acc: &mut Vec<(u64, f64)>) {
        if p == 0.0 {
            return;
        }
        if v == intents.len() {
            let mask = resolve_decision(network, intents).iter().fold(0u64, |m, &l| m | 1 << l);
            acc.push((mask, p));
            return;
        }
        let out = network.out_links(v);
        if out.is_empty() {
            intents[v] = None;
            walk(network, beta, v + 1, p, intents, acc);
            return;
        }
        intents[v] = None;
        walk(network, beta, v + 1, p * (1.0 - beta[v]), intents, acc);
        let each = beta[v] / out.len() as f64;
        for &l in out {
            intents[v] = Some(network.link(l).to);
            walk(network, beta, v + 1, p * each, intents, acc);
        }
        intents[v] = None;
    }
    walk(network, beta, 0, 1.0, &mut intents, &mut acc);
    DecisionDistribution { entries: collect(acc), exact: true, draws: 0 }
}

pub fn decision_distribution_monte_carlo<R: Rng + ?Sized>(
    rng: &mut R,
    network: &Network,
    beta: &[f64],
    draws: u64,
) -> DecisionDistribution {
    let w = 1.0 / draws as f64;
    let acc = (0..draws)
        .map(|_| {
            let intents = draw_rtd_intents(rng, network, beta);
            (resolve_decision(network, &intents).iter().fold(0u64, |m, &l| m | 1 << l), w)
        })
        .collect();
    DecisionDistribution { entries: collect(acc), exact: false, draws }
}

/// Exact when the network has at most 10 nodes, otherwise `10^6` Monte Carlo draws.
pub fn decision_distribution<R: Rng + ?Sized>(rng: &mut R, network: &Network, beta: &[f64]) -> DecisionDistribution {
    if network.node_count() <= 10 {
        decision_distribution_exact(network, beta)
    } else {
        decision_distribution_monte_carlo(rng, network, beta, 1_000_000)
    }
}
