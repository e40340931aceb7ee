//! Topology, routing, interference and schedule enumeration.
//!
//! Links are unit-rate directed pairs. Routing is a per-destination
//! next-hop table. Two links conflict when one lies in the other's
//! conflict set; schedules are the independent sets of that relation.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type NodeId = usize;
pub type LinkId = usize;

/// Default ceiling on the number of links for exhaustive schedule enumeration.
pub const DEFAULT_ENUMERATION_CAP: usize = 24;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSpec {
    pub node: NodeId,
    pub destination: NodeId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RouteTable {
    pub destination: NodeId,
    /// `(node, next_hop)` pairs. Nodes absent from the list have no route.
    pub next_hops: Vec<(NodeId, NodeId)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub nodes: usize,
    pub links: Vec<(NodeId, NodeId)>,
    pub sources: Vec<SourceSpec>,
    pub routes: Vec<RouteTable>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NetworkError {
    #[error("network has no nodes")]
    Empty,
    #[error("node {0} is out of range")]
    NodeOutOfRange(NodeId),
    #[error("link ({0},{1}) is a self-loop")]
    SelfLoop(NodeId, NodeId),
    #[error("link ({0},{1}) listed twice")]
    DuplicateLink(NodeId, NodeId),
    #[error("node {0} is listed as a source more than once")]
    DuplicateSource(NodeId),
    #[error("source {0} is its own destination")]
    SourceIsDestination(NodeId),
    #[error("routing table for destination {0} given twice")]
    DuplicateRouteTable(NodeId),
    #[error("routing table for destination {dest} has two entries for node {node}")]
    DuplicateRouteEntry { dest: NodeId, node: NodeId },
    #[error("routing table for destination {0} routes out of the destination itself")]
    RouteFromDestination(NodeId),
    #[error("destination {dest} routes over ({from},{to}), which is not a link")]
    DanglingRoute { dest: NodeId, from: NodeId, to: NodeId },
    #[error("routing table for destination {0} contains a cycle")]
    CyclicRoute(NodeId),
    #[error("link ({0},{1}) carries no destination")]
    UnusedLink(NodeId, NodeId),
    #[error("source {source_node} has no route to destination {dest}")]
    MissingRoute { source_node: NodeId, dest: NodeId },
    #[error("link ({0},{1}) is not in the network")]
    UnknownLink(NodeId, NodeId),
    #[error("{links} links exceed the enumeration cap of {cap}")]
    TooLarge { links: usize, cap: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Link {
    pub from: NodeId,
    pub to: NodeId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Source {
    pub node: NodeId,
    /// Index into [`Network::destinations`].
    pub dest: usize,
}

/// A validated network. Link ids follow the lexicographic order of `(from, to)`.
#[derive(Debug, Clone)]
pub struct Network {
    node_count: usize,
    links: Vec<Link>,
    link_index: BTreeMap<(NodeId, NodeId), LinkId>,
    destinations: Vec<NodeId>,
    next_hop: Vec<Vec<Option<LinkId>>>,
    link_dests: Vec<Vec<usize>>,
    sources: Vec<Source>,
    source_of_node: Vec<Option<usize>>,
    neighbors: Vec<Vec<NodeId>>,
    out_links: Vec<Vec<LinkId>>,
    conflicts: ConflictGraph,
}

pub fn build_network(spec: &NetworkSpec) -> Result<Network, NetworkError> {
    Network::new(spec)
}

impl Network {
    pub fn new(spec: &NetworkSpec) -> Result<Self, NetworkError> {
        let n = spec.nodes;
        if n == 0 {
            return Err(NetworkError::Empty);
        }
        let check = |v: NodeId| if v < n { Ok(()) } else { Err(NetworkError::NodeOutOfRange(v)) };

        let mut link_set = BTreeSet::new();
        for &(a, b) in &spec.links {
            check(a)?;
            check(b)?;
            if a == b {
                return Err(NetworkError::SelfLoop(a, b));
            }
            if !link_set.insert((a, b)) {
                return Err(NetworkError::DuplicateLink(a, b));
            }
        }
        let links: Vec<Link> = link_set.iter().map(|&(from, to)| Link { from, to }).collect();
        let link_index: BTreeMap<_, _> = link_set.iter().enumerate().map(|(i, &p)| (p, i)).collect();

        let mut dest_set = BTreeSet::new();
        let mut seen_sources = BTreeSet::new();
        for s in &spec.sources {
            check(s.node)?;
            check(s.destination)?;
            if s.node == s.destination {
                return Err(NetworkError::SourceIsDestination(s.node));
            }
            if !seen_sources.insert(s.node) {
                return Err(NetworkError::DuplicateSource(s.node));
            }
            dest_set.insert(s.destination);
        }
        let mut tables: BTreeMap<NodeId, &RouteTable> = BTreeMap::new();
        for t in &spec.routes {
            check(t.destination)?;
            if tables.insert(t.destination, t).is_some() {
                return Err(NetworkError::DuplicateRouteTable(t.destination));
            }
            dest_set.insert(t.destination);
        }
        let destinations: Vec<NodeId> = dest_set.into_iter().collect();

        let mut next_hop = vec![vec![None; n]; destinations.len()];
        for (k, &d) in destinations.iter().enumerate() {
            let Some(table) = tables.get(&d) else { continue };
            for &(node, hop) in &table.next_hops {
                check(node)?;
                check(hop)?;
                if node == d {
                    return Err(NetworkError::RouteFromDestination(d));
                }
                let Some(&l) = link_index.get(&(node, hop)) else {
                    return Err(NetworkError::DanglingRoute { dest: d, from: node, to: hop });
                };
                if next_hop[k][node].replace(l).is_some() {
                    return Err(NetworkError::DuplicateRouteEntry { dest: d, node });
                }
            }
            if !route_is_acyclic(&next_hop[k], &links) {
                return Err(NetworkError::CyclicRoute(d));
            }
        }

        let mut link_dests = vec![Vec::new(); links.len()];
        for (k, row) in next_hop.iter().enumerate() {
            for l in row.iter().flatten() {
                link_dests[*l].push(k);
            }
        }
        if let Some(l) = link_dests.iter().position(Vec::is_empty) {
            return Err(NetworkError::UnusedLink(links[l].from, links[l].to));
        }

        let mut sources = Vec::with_capacity(spec.sources.len());
        let mut source_of_node = vec![None; n];
        for s in &spec.sources {
            let k = destinations.binary_search(&s.destination).expect("destination registered");
            let mut v = s.node;
            while v != s.destination {
                match next_hop[k][v] {
                    Some(l) => v = links[l].to,
                    None => {
                        return Err(NetworkError::MissingRoute { source_node: s.node, dest: s.destination })
                    }
                }
            }
            source_of_node[s.node] = Some(sources.len());
            sources.push(Source { node: s.node, dest: k });
        }

        let mut neighbors = vec![BTreeSet::new(); n];
        let mut out_links = vec![Vec::new(); n];
        for (l, link) in links.iter().enumerate() {
            neighbors[link.from].insert(link.to);
            neighbors[link.to].insert(link.from);
            out_links[link.from].push(l);
        }
        let neighbors: Vec<Vec<NodeId>> = neighbors.into_iter().map(|s| s.into_iter().collect()).collect();

        let mut net = Network {
            node_count: n,
            links,
            link_index,
            destinations,
            next_hop,
            link_dests,
            sources,
            source_of_node,
            neighbors,
            out_links,
            conflicts: ConflictGraph::empty(0),
        };
        net.conflicts = net.build_conflict_graph();
        Ok(net)
    }

    fn build_conflict_graph(&self) -> ConflictGraph {
        let mut edges = Vec::new();
        for l in 0..self.links.len() {
            for m in self.raw_conflict_set(l) {
                if m > l {
                    edges.push((l, m));
                }
            }
        }
        ConflictGraph::from_edges(self.links.len(), &edges)
    }

    fn raw_conflict_set(&self, l: LinkId) -> Vec<LinkId> {
        let Link { from: i, to: j } = self.links[l];
        let ni = &self.neighbors[i];
        let nj = &self.neighbors[j];
        self.links
            .iter()
            .enumerate()
            .filter(|(_, x)| {
                let (a, b) = (x.from, x.to);
                nj.binary_search(&a).is_ok() || ni.binary_search(&b).is_ok() || a == i || a == j || b == i || b == j
            })
            .map(|(m, _)| m)
            .collect()
    }

    /// Links in the conflict set of `(i, j)`, the link itself included.
    pub fn conflict_set(&self, i: NodeId, j: NodeId) -> Result<Vec<LinkId>, NetworkError> {
        let l = self.link_id(i, j).ok_or(NetworkError::UnknownLink(i, j))?;
        Ok(self.raw_conflict_set(l))
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }
    pub fn link_count(&self) -> usize {
        self.links.len()
    }
    pub fn links(&self) -> &[Link] {
        &self.links
    }
    pub fn link(&self, l: LinkId) -> Link {
        self.links[l]
    }
    pub fn link_id(&self, from: NodeId, to: NodeId) -> Option<LinkId> {
        self.link_index.get(&(from, to)).copied()
    }
    /// Sorted destination node ids; "destination index" refers to positions here.
    pub fn destinations(&self) -> &[NodeId] {
        &self.destinations
    }
    pub fn dest_index(&self, d: NodeId) -> Option<usize> {
        self.destinations.binary_search(&d).ok()
    }
    pub fn next_hop(&self, dest: usize, node: NodeId) -> Option<LinkId> {
        self.next_hop[dest][node]
    }
    /// Destination indices routed over link `l`, ascending.
    pub fn link_dests(&self, l: LinkId) -> &[usize] {
        &self.link_dests[l]
    }
    pub fn sources(&self) -> &[Source] {
        &self.sources
    }
    pub fn source_at(&self, node: NodeId) -> Option<usize> {
        self.source_of_node[node]
    }
    /// Nodes sharing a link with `node` in either direction.
    pub fn neighbors(&self, node: NodeId) -> &[NodeId] {
        &self.neighbors[node]
    }
    pub fn out_links(&self, node: NodeId) -> &[LinkId] {
        &self.out_links[node]
    }
    pub fn conflict_graph(&self) -> &ConflictGraph {
        &self.conflicts
    }
    pub fn is_single_destination_per_node(&self) -> bool {
        self.destinations.len() == 1
    }

    /// Dense 0/1 routing matrix for destination index `dest`.
    pub fn routing_matrix(&self, dest: usize) -> Vec<Vec<u8>> {
        let n = self.node_count;
        let mut m = vec![vec![0u8; n]; n];
        for (v, hop) in self.next_hop[dest].iter().enumerate() {
            if let Some(l) = hop {
                m[v][self.links[*l].to] = 1;
            }
        }
        m
    }
}

fn route_is_acyclic(next: &[Option<LinkId>], links: &[Link]) -> bool {
    let n = next.len();
    (0..n).all(|start| {
        let mut v = start;
        for _ in 0..=n {
            match next[v] {
                Some(l) => v = links[l].to,
                None => return true,
            }
        }
        false
    })
}

/// Symmetric conflict relation over `n` vertices (links).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConflictGraph {
    adj: Vec<Vec<usize>>,
}

impl ConflictGraph {
    pub fn empty(n: usize) -> Self {
        ConflictGraph { adj: vec![Vec::new(); n] }
    }

    /// Builds an undirected graph; self-loops and repeated edges are ignored.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Self {
        let mut sets = vec![BTreeSet::new(); n];
        for &(a, b) in edges {
            assert!(a < n && b < n, "edge ({a},{b}) out of range for {n} vertices");
            if a != b {
                sets[a].insert(b);
                sets[b].insert(a);
            }
        }
        ConflictGraph { adj: sets.into_iter().map(|s| s.into_iter().collect()).collect() }
    }

    pub fn vertex_count(&self) -> usize {
        self.adj.len()
    }
    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.adj[v]
    }
    pub fn conflicts(&self, a: usize, b: usize) -> bool {
        self.adj[a].binary_search(&b).is_ok()
    }
    pub fn edge_count(&self) -> usize {
        self.adj.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn is_independent(&self, active: &[bool]) -> bool {
        active
            .iter()
            .enumerate()
            .filter(|(_, on)| **on)
            .all(|(v, _)| self.adj[v].iter().all(|&u| !active[u]))
    }

    pub fn is_independent_mask(&self, mask: u64) -> bool {
        let mut m = mask;
        while m != 0 {
            let v = m.trailing_zeros() as usize;
            if self.adj[v].iter().any(|&u| u < 64 && mask >> u & 1 == 1) {
                return false;
            }
            m &= m - 1;
        }
        true
    }

    /// `adj` as bitmasks; requires at most 64 vertices.
    pub fn masks(&self) -> Vec<u64> {
        assert!(self.adj.len() <= 64);
        self.adj.iter().map(|ns| ns.iter().fold(0u64, |m, &u| m | 1 << u)).collect()
    }
}

/// All independent sets, sorted by bitmask value (index 0 is the empty schedule).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScheduleSet {
    link_count: usize,
    masks: Vec<u64>,
}

impl ScheduleSet {
    pub fn len(&self) -> usize {
        self.masks.len()
    }
    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }
    pub fn link_count(&self) -> usize {
        self.link_count
    }
    pub fn masks(&self) -> &[u64] {
        &self.masks
    }
    pub fn mask(&self, idx: usize) -> u64 {
        self.masks[idx]
    }
    pub fn index_of(&self, mask: u64) -> Option<usize> {
        self.masks.binary_search(&mask).ok()
    }
    pub fn links_of(&self, idx: usize) -> Vec<LinkId> {
        mask_links(self.masks[idx])
    }
}

pub fn mask_links(mut mask: u64) -> Vec<LinkId> {
    let mut out = Vec::with_capacity(mask.count_ones() as usize);
    while mask != 0 {
        out.push(mask.trailing_zeros() as usize);
        mask &= mask - 1;
    }
    out
}

pub fn links_mask(links: &[LinkId]) -> u64 {
    links.iter().fold(0, |m, &l| m | 1 << l)
}

pub fn enumerate_schedules(graph: &ConflictGraph) -> Result<ScheduleSet, NetworkError> {
    enumerate_schedules_capped(graph, DEFAULT_ENUMERATION_CAP)
}

pub fn enumerate_schedules_capped(graph: &ConflictGraph, cap: usize) -> Result<ScheduleSet, NetworkError> {
    let n = graph.vertex_count();
    if n > cap.min(63) {
        return Err(NetworkError::TooLarge { links: n, cap: cap.min(63) });
    }
    let adj = graph.masks();
    let mut masks = Vec::new();
    // Each independent set is visited once by only adding vertices above the current maximum.
    fn grow(start: usize, cur: u64, blocked: u64, adj: &[u64], out: &mut Vec<u64>) {
        out.push(cur);
        for v in start..adj.len() {
            if blocked >> v & 1 == 0 {
                grow(v + 1, cur | 1 << v, blocked | adj[v], adj, out);
            }
        }
    }
    grow(0, 0, 0, &adj, &mut masks);
    masks.sort_unstable();
    Ok(ScheduleSet { link_count: n, masks })
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CapacityError {
    #[error("schedule mix weights must be nonnegative and sum to 1")]
    InvalidMix,
    #[error("mix entry {0} is not a feasible schedule")]
    InfeasibleSchedule(usize),
    #[error("destination split over-allocates link {0}")]
    InfeasibleSplit(LinkId),
    #[error("flow conservation violated at node {node} for destination {dest}")]
    NegativeLoad { node: NodeId, dest: NodeId },
    #[error("headroom factor must be finite and nonnegative")]
    InvalidTheta,
}

/// Fraction of each link's time share given to each routed destination.
#[derive(Debug, Clone, PartialEq)]
pub struct DestinationSplit {
    /// `fractions[l][k]`, indexed by link and destination index.
    pub fractions: Vec<Vec<f64>>,
}

impl DestinationSplit {
    /// Divides every link's share equally among the destinations it carries.
    pub fn equal(network: &Network) -> Self {
        let nd = network.destinations().len();
        let fractions = (0..network.link_count())
            .map(|l| {
                let carried = network.link_dests(l);
                let mut row = vec![0.0; nd];
                for &k in carried {
                    row[k] = 1.0 / carried.len() as f64;
                }
                row
            })
            .collect();
        DestinationSplit { fractions }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CapacityPoint {
    /// Link time shares of the unscaled mix.
    pub mu: Vec<f64>,
    /// `mu_dest[l][k]`.
    pub mu_dest: Vec<Vec<f64>>,
    /// Per-source loads, already scaled by `theta`.
    pub rho: Vec<f64>,
    pub theta: f64,
    /// True when `theta < 1`, i.e. the loads sit strictly inside the region.
    pub within_region: bool,
}

/// Builds loads from a convex mix of schedules and a per-destination split.
///
/// Values of `theta` at or above 1 are accepted so that overload runs can be
/// described; `within_region` records which side of the boundary the point is.
pub fn make_capacity_point(
    network: &Network,
    mix: &[(Vec<LinkId>, f64)],
    split: &DestinationSplit,
    theta: f64,
) -> Result<CapacityPoint, CapacityError> {
    const TOL: f64 = 1e-12;
    if !theta.is_finite() || theta < 0.0 {
        return Err(CapacityError::InvalidTheta);
    }
    let total: f64 = mix.iter().map(|(_, w)| *w).sum();
    if mix.iter().any(|(_, w)| !w.is_finite() || *w < 0.0) || (total - 1.0).abs() > 1e-9 {
        return Err(CapacityError::InvalidMix);
    }
    let nl = network.link_count();
    let nd = network.destinations().len();
    let graph = network.conflict_graph();
    let mut mu = vec![0.0; nl];
    for (idx, (links, w)) in mix.iter().enumerate() {
        let mut active = vec![false; nl];
        for &l in links {
            if l >= nl || active[l] {
                return Err(CapacityError::InfeasibleSchedule(idx));
            }
            active[l] = true;
        }
        if !graph.is_independent(&active) {
            return Err(CapacityError::InfeasibleSchedule(idx));
        }
        for &l in links {
            mu[l] += w;
        }
    }
    if split.fractions.len() != nl {
        return Err(CapacityError::InfeasibleSplit(0));
    }
    let mut mu_dest = vec![vec![0.0; nd]; nl];
    for l in 0..nl {
        let row = &split.fractions[l];
        if row.len() != nd || row.iter().any(|f| !f.is_finite() || *f < 0.0) {
            return Err(CapacityError::InfeasibleSplit(l));
        }
        if row.iter().sum::<f64>() > 1.0 + TOL {
            return Err(CapacityError::InfeasibleSplit(l));
        }
        for k in 0..nd {
            if row[k] > 0.0 && !network.link_dests(l).contains(&k) {
                return Err(CapacityError::InfeasibleSplit(l));
            }
            mu_dest[l][k] = row[k] * mu[l];
        }
    }

    // Net routed outflow per node and destination.
    let n = network.node_count();
    let mut net = vec![vec![0.0; nd]; n];
    for (l, link) in network.links().iter().enumerate() {
        for k in 0..nd {
            net[link.from][k] += mu_dest[l][k];
            net[link.to][k] -= mu_dest[l][k];
        }
    }
    let mut rho = vec![0.0; network.sources().len()];
    for v in 0..n {
        for k in 0..nd {
            if network.destinations()[k] == v {
                continue;
            }
            if net[v][k] < -TOL {
                return Err(CapacityError::NegativeLoad { node: v, dest: network.destinations()[k] });
            }
            if let Some(s) = network.source_at(v) {
                if network.sources()[s].dest == k {
                    rho[s] = theta * net[v][k].max(0.0);
                }
            }
        }
    }
    Ok(CapacityPoint { mu, mu_dest, rho, theta, within_region: theta < 1.0 })
}

impl CapacityPoint {
    /// Largest violation of the capacity inequalities (nonpositive when they all hold).
    pub fn max_violation(&self, network: &Network) -> f64 {
        let nd = network.destinations().len();
        let mut worst = f64::NEG_INFINITY;
        for l in 0..network.link_count() {
            let s: f64 = self.mu_dest[l].iter().sum();
            worst = worst.max(s - self.mu[l]);
            for k in 0..nd {
                worst = worst.max(-self.mu_dest[l][k]);
            }
        }
        for v in 0..network.node_count() {
            for k in 0..nd {
                if network.destinations()[k] == v {
                    continue;
                }
                let mut balance = 0.0;
                for (l, link) in network.links().iter().enumerate() {
                    if network.next_hop(k, link.from) != Some(l) {
                        continue;
                    }
                    if link.from == v {
                        balance += self.mu_dest[l][k];
                    }
                    if link.to == v {
                        balance -= self.mu_dest[l][k];
                    }
                }
                let demand = match network.source_at(v) {
                    Some(s) if network.sources()[s].dest == k => self.rho[s],
                    _ => 0.0,
                };
                worst = worst.max(demand - balance);
            }
        }
        worst
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    pub(crate) fn line(n: usize) -> NetworkSpec {
        NetworkSpec {
            nodes: n,
            links: (0..n - 1).map(|i| (i, i + 1)).collect(),
            sources: vec![SourceSpec { node: 0, destination: n - 1 }],
            routes: vec![RouteTable { destination: n - 1, next_hops: (0..n - 1).map(|i| (i, i + 1)).collect() }],
        }
    }

    #[test]
    fn three_node_line_routes() {
        let net = build_network(&line(3)).unwrap();
        assert_eq!(net.link_count(), 2);
        assert_eq!(net.next_hop(0, 0), Some(0));
        assert_eq!(net.next_hop(0, 1), Some(1));
        assert_eq!(net.next_hop(0, 2), None);
        assert_eq!(net.routing_matrix(0), vec![vec![0, 1, 0], vec![0, 0, 1], vec![0, 0, 0]]);
    }

    #[test]
    fn two_cycle_is_rejected() {
        let spec = NetworkSpec {
            nodes: 3,
            links: vec![(0, 1), (1, 0), (1, 2)],
            sources: vec![],
            routes: vec![RouteTable { destination: 2, next_hops: vec![(0, 1), (1, 0)] }],
        };
        assert_eq!(build_network(&spec).unwrap_err(), NetworkError::CyclicRoute(2));
    }

    #[test]
    fn unused_and_dangling_links() {
        let mut spec = line(3);
        spec.nodes = 5;
        spec.links.push((3, 4));
        assert_eq!(build_network(&spec).unwrap_err(), NetworkError::UnusedLink(3, 4));

        let mut spec = line(3);
        spec.routes[0].next_hops.push((1, 0));
        assert!(matches!(build_network(&spec).unwrap_err(), NetworkError::DanglingRoute { .. }));
    }

    #[test]
    fn other_validation_errors() {
        let mut spec = line(3);
        spec.sources[0].destination = 0;
        assert_eq!(build_network(&spec).unwrap_err(), NetworkError::SourceIsDestination(0));
        let mut spec = line(3);
        spec.routes[0].next_hops.pop();
        assert!(matches!(build_network(&spec).unwrap_err(), NetworkError::UnusedLink(1, 2)));
        let mut spec = line(3);
        spec.links.push((0, 0));
        assert_eq!(build_network(&spec).unwrap_err(), NetworkError::SelfLoop(0, 0));
        let spec = NetworkSpec { nodes: 0, links: vec![], sources: vec![], routes: vec![] };
        assert_eq!(build_network(&spec).unwrap_err(), NetworkError::Empty);
    }

    #[test]
    fn conflict_set_examples() {
        let net = build_network(&line(3)).unwrap();
        let cs = net.conflict_set(0, 1).unwrap();
        assert!(cs.contains(&1));
        assert!(cs.contains(&0));
        assert_eq!(net.conflict_set(2, 0).unwrap_err(), NetworkError::UnknownLink(2, 0));

        // Two far-apart bidirectional pairs only conflict with their own reverse.
        let spec = NetworkSpec {
            nodes: 4,
            links: vec![(0, 1), (1, 0), (2, 3), (3, 2)],
            sources: vec![SourceSpec { node: 0, destination: 1 }, SourceSpec { node: 2, destination: 3 }],
            routes: vec![
                RouteTable { destination: 1, next_hops: vec![(0, 1)] },
                RouteTable { destination: 0, next_hops: vec![(1, 0)] },
                RouteTable { destination: 3, next_hops: vec![(2, 3)] },
                RouteTable { destination: 2, next_hops: vec![(3, 2)] },
            ],
        };
        let net = build_network(&spec).unwrap();
        let l01 = net.link_id(0, 1).unwrap();
        let l10 = net.link_id(1, 0).unwrap();
        let mut cs = net.conflict_set(0, 1).unwrap();
        cs.sort();
        let mut want = vec![l01, l10];
        want.sort();
        assert_eq!(cs, want);
    }

    #[test]
    fn enumeration_small_cases() {
        let g = ConflictGraph::from_edges(2, &[(0, 1)]);
        assert_eq!(enumerate_schedules(&g).unwrap().masks(), &[0, 1, 2]);
        let g = ConflictGraph::from_edges(2, &[]);
        assert_eq!(enumerate_schedules(&g).unwrap().len(), 4);
        let g = ConflictGraph::from_edges(1, &[]);
        assert_eq!(enumerate_schedules(&g).unwrap().len(), 2);
        let g = ConflictGraph::from_edges(25, &[]);
        assert!(matches!(enumerate_schedules(&g), Err(NetworkError::TooLarge { links: 25, cap: 24 })));
    }

    #[test]
    fn capacity_point_examples() {
        let single = NetworkSpec {
            nodes: 2,
            links: vec![(0, 1)],
            sources: vec![SourceSpec { node: 0, destination: 1 }],
            routes: vec![RouteTable { destination: 1, next_hops: vec![(0, 1)] }],
        };
        let net = build_network(&single).unwrap();
        let split = DestinationSplit::equal(&net);
        let cp = make_capacity_point(&net, &[(vec![], 0.0), (vec![0], 1.0)], &split, 0.8).unwrap();
        assert!((cp.rho[0] - 0.8).abs() < 1e-15);

        let net = build_network(&line(3)).unwrap();
        let split = DestinationSplit::equal(&net);
        let mix = [(vec![0], 0.5), (vec![1], 0.5)];
        let cp = make_capacity_point(&net, &mix, &split, 0.6).unwrap();
        assert!((cp.rho[0] - 0.3).abs() < 1e-15);
        assert!(cp.max_violation(&net) <= 1e-12);
        let cp = make_capacity_point(&net, &mix, &split, 0.0).unwrap();
        assert_eq!(cp.rho, vec![0.0]);

        // More inflow than outflow at the relay.
        let mix = [(vec![0], 0.7), (vec![1], 0.3)];
        assert!(matches!(make_capacity_point(&net, &mix, &split, 0.5), Err(CapacityError::NegativeLoad { .. })));
        let over = DestinationSplit { fractions: vec![vec![1.5], vec![1.0]] };
        assert_eq!(make_capacity_point(&net, &[(vec![0], 1.0)], &over, 0.5), Err(CapacityError::InfeasibleSplit(0)));
        assert_eq!(make_capacity_point(&net, &[(vec![0, 1], 1.0)], &split, 0.5), Err(CapacityError::InfeasibleSchedule(0)));
    }

    fn random_spec(n: usize, edges: &[(usize, usize)]) -> Option<NetworkSpec> {
        // One destination (the last node) reached by a BFS tree over the given edges.
        let mut adj = vec![Vec::new(); n];
        for &(a, b) in edges {
            let (a, b) = (a % n, b % n);
            if a != b {
                adj[a].push(b);
                adj[b].push(a);
            }
        }
        let d = n - 1;
        let mut parent = vec![None; n];
        let mut seen = vec![false; n];
        seen[d] = true;
        let mut queue = std::collections::VecDeque::from([d]);
        while let Some(v) = queue.pop_front() {
            for &u in &adj[v] {
                if !seen[u] {
                    seen[u] = true;
                    parent[u] = Some(v);
                    queue.push_back(u);
                }
            }
        }
        let hops: Vec<(usize, usize)> = (0..n).filter_map(|v| parent[v].map(|p| (v, p))).collect();
        if hops.is_empty() {
            return None;
        }
        Some(NetworkSpec {
            nodes: n,
            links: hops.clone(),
            sources: vec![SourceSpec { node: hops[0].0, destination: d }],
            routes: vec![RouteTable { destination: d, next_hops: hops }],
        })
    }

    fn matrix_power_is_zero(m: &[Vec<u8>]) -> bool {
        let n = m.len();
        let mul = |a: &[Vec<u64>], b: &[Vec<u8>]| -> Vec<Vec<u64>> {
            (0..n).map(|i| (0..n).map(|j| (0..n).map(|k| a[i][k] * b[k][j] as u64).sum()).collect()).collect()
        };
        let mut p: Vec<Vec<u64>> = m.iter().map(|r| r.iter().map(|&x| x as u64).collect()).collect();
        for _ in 1..n {
            p = mul(&p, m);
        }
        p.iter().flatten().all(|&x| x == 0)
    }

    proptest! {
        #[test]
        fn conflict_relation_is_symmetric(n in 3usize..9, edges in proptest::collection::vec((0usize..9, 0usize..9), 1..20)) {
            if let Some(spec) = random_spec(n, &edges) {
                let net = build_network(&spec).unwrap();
                for l in net.links() {
                    let a = net.link_id(l.from, l.to).unwrap();
                    for &b in &net.conflict_set(l.from, l.to).unwrap() {
                        let other = net.link(b);
                        prop_assert!(net.conflict_set(other.from, other.to).unwrap().contains(&a));
                    }
                }
                prop_assert!(matrix_power_is_zero(&net.routing_matrix(0)));
            }
        }

        #[test]
        fn enumeration_matches_all_subsets(n in 1usize..13, edges in proptest::collection::vec((0usize..12, 0usize..12), 0..30)) {
            let edges: Vec<_> = edges.into_iter().filter(|(a, b)| *a < n && *b < n).collect();
            let g = ConflictGraph::from_edges(n, &edges);
            let got = enumerate_schedules(&g).unwrap();
            let naive: Vec<u64> = (0u64..1 << n)
                .filter(|&m| edges.iter().all(|&(a, b)| a == b || !(m >> a & 1 == 1 && m >> b & 1 == 1)))
                .collect();
            prop_assert_eq!(got.masks(), &naive[..]);
        }

        #[test]
        fn schedules_never_share_a_node(n in 3usize..9, edges in proptest::collection::vec((0usize..9, 0usize..9), 1..20)) {
            if let Some(spec) = random_spec(n, &edges) {
                let net = build_network(&spec).unwrap();
                let set = enumerate_schedules(net.conflict_graph()).unwrap();
                for &m in set.masks() {
                    let mut used = vec![false; n];
                    for l in mask_links(m) {
                        let link = net.link(l);
                        prop_assert!(!used[link.from] && !used[link.to]);
                        used[link.from] = true;
                        used[link.to] = true;
                    }
                }
            }
        }
    }
}
