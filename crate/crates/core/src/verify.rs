//! Built-in verification suites run at pinned seeds.
//!
//! Each check returns a [`CheckResult`]; a suite bundles them into a
//! [`Report`]. The scenarios used here are public so the CLI and external
//! tests can reproduce them.

use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::analysis::chain::{
    build_kernel, exact_stationary, gibbs, single_site_gap_bound_ln, multi_site_mixing_bound_ln, slem, stationary_by_solve,
    KernelVariant,
};
use crate::analysis::mixing::{csma_mixing_experiment, MixingConfig, MixingVerdict, Sampler};
use crate::analysis::oracle::brute_force_max_weight;
use crate::analysis::stats::{
    residual_moment_test, residual_moment_test_from_moments, stability_verdict, MomentBound, StabilityOptions,
    StabilityVerdict, VerdictTag,
};
use crate::analysis::{AnalysisError, CheckResult, Report};
use crate::csma::decision_distribution_exact;
use crate::engine::{AssertMode, Check, CheckTally, SchedulerConfig, SchedulerKind, SimConfig, Simulator};
use crate::net_model::{
    build_network, enumerate_schedules, make_capacity_point, ConflictGraph, DestinationSplit, Network, NetworkSpec,
    NodeId, RouteTable, SourceSpec,
};
use crate::scheduling::{compute_link_weights, max_weight_schedule, WeightFn};
use crate::transport::{
    inject_packets, ArrivalLaw, FileRecord, SourceTraffic, TrafficSpec, WindowConfig, WindowPolicy,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Oracles,
    CsmaMixing,
    Bounds,
    Stability,
    All,
}

impl FromStr for Suite {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "oracles" => Suite::Oracles,
            "csma_mixing" => Suite::CsmaMixing,
            "bounds" => Suite::Bounds,
            "stability" => Suite::Stability,
            "all" => Suite::All,
            other => return Err(format!("unknown suite {other:?} (expected oracles, csma_mixing, bounds, stability or all)")),
        })
    }
}

impl Suite {
    pub fn name(self) -> &'static str {
        match self {
            Suite::Oracles => "oracles",
            Suite::CsmaMixing => "csma_mixing",
            Suite::Bounds => "bounds",
            Suite::Stability => "stability",
            Suite::All => "all",
        }
    }
}

pub fn run_suite(suite: Suite) -> Result<Report, AnalysisError> {
    let checks = match suite {
        Suite::Oracles => oracle_checks()?,
        Suite::CsmaMixing => mixing_checks()?,
        Suite::Bounds => bound_checks()?,
        Suite::Stability => stability_checks()?,
        Suite::All => {
            let mut all = Vec::new();
            for s in [Suite::Oracles, Suite::CsmaMixing, Suite::Bounds, Suite::Stability] {
                for mut c in run_suite(s)?.checks {
                    c.name = format!("{}/{}", s.name(), c.name);
                    all.push(c);
                }
            }
            all
        }
    };
    Ok(Report::new(suite.name(), checks))
}

fn oracle_checks() -> Result<Vec<CheckResult>, AnalysisError> {
    let mut out = vec![max_weight_oracle(11, 5, 200)];
    out.push(multi_site_equivalence(12)?);
    let g = WeightFn::log_log();
    let v = g.g(1.0);
    out.push(CheckResult::new("weight_fn_reference_value", v == 0.564_851_698_250_634_2, v, 0.564_851_698_250_634_2, 0.0));
    Ok(out)
}

fn mixing_checks() -> Result<Vec<CheckResult>, AnalysisError> {
    let mut out = gibbs_stationarity(1)?;
    out.push(qcsma_stationarity(1)?);
    Ok(out)
}

fn bound_checks() -> Result<Vec<CheckResult>, AnalysisError> {
    let mut out = vec![single_site_gap(13)?, multi_site_mixing(14)?];
    let run = weight_gap_run(15, 1_000_000)?;
    out.extend(run.checks.clone());
    out.extend(residual_checks(16, 1_000_000)?);
    out.push(run.residual_check);
    Ok(out)
}

fn stability_checks() -> Result<Vec<CheckResult>, AnalysisError> {
    let mut out = Vec::new();
    for r in centralized_stability(&[1, 2, 3], 200_000)? {
        out.push(r.check());
    }
    for r in csma_stability(&[1, 2], 1_000_000)? {
        out.push(r.check());
    }
    Ok(out)
}

/// Runs `f` over `items` on scoped threads, keeping input order.
pub fn par_map<T: Sync, U: Send>(items: &[T], f: impl Fn(&T) -> U + Sync) -> Vec<U> {
    let threads = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1).min(items.len().max(1));
    let chunk = items.len().div_ceil(threads).max(1);
    std::thread::scope(|scope| {
        let handles: Vec<_> = items.chunks(chunk).map(|c| scope.spawn(|| c.iter().map(&f).collect::<Vec<U>>())).collect();
        handles.into_iter().flat_map(|h| h.join().expect("worker panicked")).collect()
    })
}

pub mod scenarios {
    //! Networks and traffic mixes shared by the suites and tests.

    use super::*;

    fn net(nodes: usize, links: &[(NodeId, NodeId)], sources: &[(NodeId, NodeId)], routes: &[(NodeId, &[(NodeId, NodeId)])]) -> Network {
        build_network(&NetworkSpec {
            nodes,
            links: links.to_vec(),
            sources: sources.iter().map(|&(node, destination)| SourceSpec { node, destination }).collect(),
            routes: routes.iter().map(|&(destination, hops)| RouteTable { destination, next_hops: hops.to_vec() }).collect(),
        })
        .expect("built-in scenario is valid")
    }

    /// Line `0 -> 1 -> 2 -> 3` with cross traffic `4 -> 1 -> 2`.
    pub fn cross_network() -> Network {
        net(
            5,
            &[(0, 1), (1, 2), (2, 3), (4, 1)],
            &[(0, 3), (4, 2)],
            &[(3, &[(0, 1), (1, 2), (2, 3)]), (2, &[(4, 1), (1, 2)])],
        )
    }

    /// Line `0 -> ... -> 4` with sources at 0, 1 and 2.
    pub fn line_network() -> Network {
        net(5, &[(0, 1), (1, 2), (2, 3), (3, 4)], &[(0, 4), (1, 4), (2, 4)], &[(4, &[(0, 1), (1, 2), (2, 3), (3, 4)])])
    }

    /// 2x3 grid (nodes numbered row by row) with one link per grid edge.
    pub fn grid_network() -> Network {
        net(
            6,
            &[(0, 1), (1, 2), (3, 4), (4, 5), (0, 3), (1, 4), (2, 5)],
            &[(0, 5), (3, 5)],
            &[(5, &[(0, 1), (1, 2), (2, 5), (3, 4), (4, 5)]), (3, &[(0, 3)]), (4, &[(1, 4)])],
        )
    }

    /// Hub 0 fed by nodes 1, 2, 3, with node 4 behind node 3.
    pub fn star_network() -> Network {
        net(5, &[(1, 0), (2, 0), (3, 0), (4, 3)], &[(1, 0), (2, 0), (4, 0)], &[(0, &[(1, 0), (2, 0), (3, 0), (4, 3)])])
    }

    pub fn ring5() -> ConflictGraph {
        ConflictGraph::from_edges(5, &[(0, 1), (1, 2), (2, 3), (3, 4), (0, 4)])
    }

    /// Random tree network routed towards one or two destinations.
    pub fn random_network<R: Rng + ?Sized>(rng: &mut R, nodes: usize, two_destinations: bool) -> Network {
        let parent: Vec<usize> = (0..nodes).map(|i| if i == 0 { 0 } else { rng.random_range(0..i) }).collect();
        let mut adj = vec![Vec::new(); nodes];
        for i in 1..nodes {
            adj[i].push(parent[i]);
            adj[parent[i]].push(i);
        }
        // Next hop towards `d` along the tree, by BFS from `d`.
        let towards = |d: usize| {
            let mut next = vec![usize::MAX; nodes];
            next[d] = d;
            let mut frontier = vec![d];
            while let Some(v) = frontier.pop() {
                for &u in &adj[v] {
                    if next[u] == usize::MAX {
                        next[u] = v;
                        frontier.push(u);
                    }
                }
            }
            next
        };
        let mut dests = vec![0];
        if two_destinations {
            dests.push(nodes - 1);
        }
        let mut links = Vec::new();
        let mut routes = Vec::new();
        for &d in &dests {
            let next = towards(d);
            let hops: Vec<(NodeId, NodeId)> = (0..nodes).filter(|&v| v != d).map(|v| (v, next[v])).collect();
            links.extend(hops.iter().copied());
            routes.push(RouteTable { destination: d, next_hops: hops });
        }
        links.sort_unstable();
        links.dedup();
        let mut sources: Vec<SourceSpec> = (0..nodes)
            .filter(|v| !dests.contains(v))
            .collect::<Vec<_>>()
            .into_iter()
            .filter_map(|node| {
                let keep = rng.random::<f64>() < 0.7;
                let destination = dests[rng.random_range(0..dests.len())];
                keep.then_some(SourceSpec { node, destination })
            })
            .collect();
        if sources.is_empty() {
            sources.push(SourceSpec { node: 1, destination: 0 });
        }
        build_network(&NetworkSpec { nodes, links, sources, routes }).expect("tree routes are valid")
    }

    fn rates(network: &Network, mix: &[(Vec<usize>, f64)], theta: f64, mean_size: f64) -> Vec<f64> {
        let point = make_capacity_point(network, mix, &DestinationSplit::equal(network), theta).expect("mix is feasible");
        point.rho.iter().map(|r| r / mean_size).collect()
    }

    pub const CROSS_ETAS: [f64; 2] = [1.0, 0.5];
    pub const CROSS_TYPE_PROBS: [f64; 2] = [0.5, 0.5];
    pub const CROSS_W_CONG: u32 = 5;

    /// Window policies exercised by the stability runs.
    pub fn window_policies() -> Vec<WindowPolicy> {
        vec![
            WindowPolicy::Fixed(1),
            WindowPolicy::Fixed(5),
            WindowPolicy::RandomBounded,
            WindowPolicy::AimdClipped { increase: 1.0, decrease: 0.5, threshold: 10 },
        ]
    }

    /// Cross-traffic network loaded to `theta` times a boundary point of its capacity region.
    pub fn cross_traffic(theta: f64, kind: SchedulerKind, policy: WindowPolicy, horizon: u64, seed: u64) -> SimConfig {
        let network = cross_network();
        // All four links conflict pairwise; this time share puts 0.2 of each flow on every hop.
        let mix = vec![(vec![0], 0.2), (vec![1], 0.4), (vec![2], 0.2), (vec![3], 0.2)];
        let mean_size: f64 = CROSS_TYPE_PROBS.iter().zip(CROSS_ETAS).map(|(p, e)| p / e).sum();
        let rates = rates(&network, &mix, theta, mean_size);
        let initial = match policy {
            WindowPolicy::Fixed(w) => w,
            _ => 1,
        };
        let nodes = network.node_count();
        SimConfig {
            // Bernoulli arrivals and short files keep the file-count trace fast mixing,
            // so half-window means are stable enough for the verdict's ratio rule.
            traffic: TrafficSpec {
                law: ArrivalLaw::Bernoulli,
                etas: CROSS_ETAS.to_vec(),
                sources: rates.into_iter().map(|rate| SourceTraffic { rate, type_probs: CROSS_TYPE_PROBS.to_vec() }).collect(),
            },
            window: WindowConfig { policy, w_cong: CROSS_W_CONG, initial },
            scheduler: SchedulerConfig::new(kind, WeightFn::log_log(), nodes),
            network: Arc::new(network),
            horizon,
            seed,
            metrics_every: 1,
            assertions: AssertMode::Record,
        }
    }

    pub const LINE_ETAS: [f64; 3] = [1.0, 0.5, 0.1];
    pub const LINE_TYPE_PROBS: [f64; 3] = [0.5, 0.3, 0.2];
    pub const LINE_W_CONG: u32 = 4;

    /// Three sources sharing a five-node line, half loaded.
    pub fn line_traffic(kind: SchedulerKind, horizon: u64, seed: u64) -> SimConfig {
        let network = line_network();
        let mix = vec![(vec![0, 3], 0.125), (vec![3], 0.25), (vec![1], 0.25), (vec![2], 0.375)];
        let mean_size: f64 = LINE_TYPE_PROBS.iter().zip(LINE_ETAS).map(|(p, e)| p / e).sum();
        let rates = rates(&network, &mix, 0.5, mean_size);
        let nodes = network.node_count();
        SimConfig {
            traffic: TrafficSpec {
                law: ArrivalLaw::Poisson,
                etas: LINE_ETAS.to_vec(),
                sources: rates.into_iter().map(|rate| SourceTraffic { rate, type_probs: LINE_TYPE_PROBS.to_vec() }).collect(),
            },
            window: WindowConfig { policy: WindowPolicy::RandomBounded, w_cong: LINE_W_CONG, initial: 1 },
            scheduler: SchedulerConfig::new(kind, WeightFn::log_log(), nodes),
            network: Arc::new(network),
            horizon,
            seed,
            metrics_every: 1,
            assertions: AssertMode::Record,
        }
    }
}

/// Centralized max-weight against exhaustive search on random networks and queue states.
pub fn max_weight_oracle(seed: u64, networks: usize, states_per_network: usize) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let wf = WeightFn::log_log();
    let mut mismatches = 0usize;
    let mut worst: f64 = 0.0;
    for k in 0..networks {
        let net = scenarios::random_network(&mut rng, 5 + k % 3, k % 2 == 0);
        let set = enumerate_schedules(net.conflict_graph()).expect("small network");
        for _ in 0..states_per_network {
            let q: Vec<Vec<u64>> = (0..net.node_count())
                .map(|_| {
                    (0..net.destinations().len())
                        .map(|_| if rng.random::<f64>() < 0.3 { 0 } else { rng.random_range(0..60) })
                        .collect()
                })
                .collect();
            let lw = compute_link_weights(&wf, &net, &q, Some(&mut rng));
            let choice = max_weight_schedule(&set, &lw, &mut rng).expect("non-empty schedule set");
            let best = brute_force_max_weight(net.conflict_graph(), &lw.weight);
            if choice.weight != best {
                mismatches += 1;
                worst = worst.max((choice.weight - best).abs());
            }
        }
    }
    CheckResult::new("max_weight_matches_exhaustive_search", mismatches == 0, worst, 0.0, 0.0)
}

/// Networks used for exact kernel comparisons.
pub fn exact_kernel_networks(seed: u64) -> Vec<Network> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut nets = vec![scenarios::cross_network(), scenarios::line_network(), scenarios::grid_network(), scenarios::star_network()];
    while nets.len() < 10 {
        let (size, two) = (rng.random_range(4..=8), rng.random::<bool>());
        let n = scenarios::random_network(&mut rng, size, two);
        let r = enumerate_schedules(n.conflict_graph()).map(|s| s.len()).unwrap_or(usize::MAX);
        if r <= 256 {
            nets.push(n);
        }
    }
    nets
}

/// Largest difference between the Q-CSMA and single-site stationary vectors.
pub fn multi_site_equivalence(seed: u64) -> Result<CheckResult, AnalysisError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for net in exact_kernel_networks(seed) {
        let graph = net.conflict_graph();
        let w: Vec<f64> = (0..net.link_count()).map(|_| rng.random_range(-1.0..2.0)).collect();
        let beta: Vec<f64> = (0..net.node_count()).map(|_| rng.random_range(0.2..0.8)).collect();
        let single = stationary_by_solve(&build_kernel(graph, &w, &KernelVariant::SingleSite)?)?;
        let multi_chain = build_kernel(graph, &w, &KernelVariant::MultiSite(decision_distribution_exact(&net, &beta)))?;
        let multi = stationary_by_solve(&multi_chain)?;
        let pi = gibbs(&multi_chain.schedules, &w);
        for ((a, b), c) in single.iter().zip(&multi).zip(&pi) {
            worst = worst.max((a - b).abs()).max((b - c).abs());
        }
    }
    Ok(CheckResult::new("qcsma_and_single_site_share_stationary_law", worst <= 1e-8, worst, 1e-8, 0.0))
}

/// Frozen-weight single-site CSMA occupancy on the ring and grid graphs.
pub fn gibbs_stationarity(seed: u64) -> Result<Vec<CheckResult>, AnalysisError> {
    let ring = scenarios::ring5();
    let grid = scenarios::grid_network();
    let cases: Vec<(&str, &ConflictGraph, Vec<f64>)> = vec![
        ("basic_csma_ring5_tv", &ring, vec![0.5, 1.0, 1.5, 2.0, 0.8]),
        ("basic_csma_grid_tv", grid.conflict_graph(), vec![1.2, 0.3, 0.9, -0.5, 1.5, 0.0, 0.7]),
    ];
    par_map(&cases, |(name, g, w)| {
        let cfg = MixingConfig { weights: w.clone(), slots: 1_000_000, burn_in: 10_000, seed, tolerance: 0.02 };
        let rep = csma_mixing_experiment(Sampler::Basic(g), &cfg)?;
        Ok(CheckResult::new(*name, rep.verdict == MixingVerdict::Pass, rep.tv, 0.02, 0.0))
    })
    .into_iter()
    .collect()
}

/// The full Q-CSMA protocol with frozen weights on the grid network.
pub fn qcsma_stationarity(seed: u64) -> Result<CheckResult, AnalysisError> {
    let grid = scenarios::grid_network();
    let beta = vec![0.5; grid.node_count()];
    let cfg = MixingConfig {
        weights: vec![1.2, 0.3, 0.9, -0.5, 1.5, 0.0, 0.7],
        slots: 1_000_000,
        burn_in: 10_000,
        seed,
        tolerance: 0.02,
    };
    let rep = csma_mixing_experiment(Sampler::QCsma { network: &grid, beta: &beta }, &cfg)?;
    Ok(CheckResult::new("qcsma_grid_tv", rep.verdict == MixingVerdict::Pass, rep.tv, 0.02, 0.0))
}

/// Random conflict graph with `n` vertices and edge probability `p`.
pub fn random_conflict_graph<R: Rng + ?Sized>(rng: &mut R, n: usize, p: f64) -> ConflictGraph {
    let mut edges = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            if rng.random::<f64>() < p {
                edges.push((a, b));
            }
        }
    }
    ConflictGraph::from_edges(n, &edges)
}

/// Spectral gap of the single-site chain against its lower bound on 20 random instances.
/// The statistic is the smallest `ln(1 - lambda*) - ln(bound)`; it must be positive.
pub fn single_site_gap(seed: u64) -> Result<CheckResult, AnalysisError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut margin = f64::INFINITY;
    for _ in 0..20 {
        let n = rng.random_range(2..=6);
        let g = random_conflict_graph(&mut rng, n, 0.4);
        let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.5)).collect();
        let w_max = w.iter().copied().fold(0.0, f64::max);
        let s = slem(&build_kernel(&g, &w, &KernelVariant::SingleSite)?)?;
        margin = margin.min((1.0 - s.lambda_star).ln() - single_site_gap_bound_ln(n, w_max));
    }
    Ok(CheckResult::new("single_site_gap_above_bound", margin > 0.0, margin, 0.0, 0.0))
}

/// Q-CSMA mixing time against its upper bound; statistic is the smallest log margin.
pub fn multi_site_mixing(seed: u64) -> Result<CheckResult, AnalysisError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut margin = f64::INFINITY;
    for net in exact_kernel_networks(seed).into_iter().take(6) {
        let w: Vec<f64> = (0..net.link_count()).map(|_| rng.random_range(0.0..1.0)).collect();
        let w_max = w.iter().copied().fold(0.0, f64::max);
        let beta = vec![0.5; net.node_count()];
        let chain = build_kernel(net.conflict_graph(), &w, &KernelVariant::MultiSite(decision_distribution_exact(&net, &beta)))?;
        let s = slem(&chain)?;
        margin = margin.min(multi_site_mixing_bound_ln(net.node_count(), w_max) - s.mixing_time.ln());
    }
    Ok(CheckResult::new("qcsma_mixing_time_below_bound", margin > 0.0, margin, 0.0, 0.0))
}

/// Injection residuals of fresh files under uniform windows, one check per `eta`.
pub fn residual_checks(seed: u64, events: u64) -> Result<Vec<CheckResult>, AnalysisError> {
    let w_cong = 5u32;
    let etas = [1.0f64, 0.5, 0.1];
    par_map(&etas, |&eta| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ eta.to_bits());
        let mut worst_pointwise: f64 = 0.0;
        let per_event = (w_cong as f64).powi(2).max(1.0 / (eta * eta));
        let trace: Vec<f64> = (0..events)
            .map(|_| {
                let mut file = FileRecord::new(0, 0, w_cong, 0);
                let space = rng.random_range(1..=w_cong);
                let b = inject_packets(&mut rng, &mut file, eta, space).residual;
                worst_pointwise = worst_pointwise.max(b * b / per_event);
                b
            })
            .collect();
        let bound = MomentBound { kappa: 1.0, nodes: 1, r_max: 1.0, w_cong, eta_min: eta };
        let rep = residual_moment_test(&trace, &bound)?;
        Ok(CheckResult::new(
            format!("residual_zero_mean_eta_{eta}"),
            rep.passed && worst_pointwise <= 1.0,
            rep.z,
            crate::analysis::stats::RESIDUAL_Z_LIMIT,
            0.0,
        ))
    })
    .into_iter()
    .collect()
}

/// Outcome of the long multihop run used for the weight-gap checks.
#[derive(Debug, Clone)]
pub struct WeightGapRun {
    pub checks: Vec<CheckResult>,
    pub residual_check: CheckResult,
    pub tallies: Vec<CheckTally>,
}

/// Long line-network CSMA run with every runtime check recorded.
pub fn weight_gap_run(seed: u64, slots: u64) -> Result<WeightGapRun, AnalysisError> {
    let cfg = scenarios::line_traffic(SchedulerKind::BasicCsma, slots, seed);
    let nodes = cfg.network.node_count();
    let eta_min = cfg.traffic.eta_min();
    let w_cong = cfg.window.w_cong;
    let rates: Vec<f64> = cfg.traffic.sources.iter().map(|s| s.rate).collect();
    let mut sim = Simulator::new(cfg).map_err(|e| AnalysisError::Engine(e.to_string()))?;
    sim.run_with(|_| {}).map_err(|e| AnalysisError::Engine(e.to_string()))?;
    let state = sim.state();
    let mut checks = Vec::new();
    for c in [Check::StateWeightGap, Check::ModifiedWeightGap, Check::MaxWeightUpper, Check::MaxWeightLower] {
        let t = state.check(c);
        checks.push(CheckResult::new(
            format!("{}_violations", c.name()),
            t.violations == 0 && t.evaluated == slots,
            t.violations as f64,
            0.0,
            0.0,
        ));
    }
    let mut worst: f64 = 0.0;
    let mut passed = true;
    for (s, m) in state.residuals.iter().enumerate() {
        // kappa: mean number of files arriving per slot at this source.
        let bound = MomentBound { kappa: rates[s], nodes, r_max: 1.0, w_cong, eta_min };
        let rep = residual_moment_test_from_moments(m, &bound)?;
        passed &= rep.passed;
        worst = worst.max(rep.z.abs());
    }
    Ok(WeightGapRun {
        checks,
        residual_check: CheckResult::new("engine_residual_moments", passed, worst, crate::analysis::stats::RESIDUAL_Z_LIMIT, 0.0),
        tallies: state.checks.clone(),
    })
}

/// A finished run reduced to its stability verdict.
#[derive(Debug, Clone)]
pub struct JudgedRun {
    pub label: String,
    pub expected: VerdictTag,
    pub verdict: StabilityVerdict,
    pub tallies: Vec<CheckTally>,
    pub mean_files: f64,
}

impl JudgedRun {
    pub fn passed(&self) -> bool {
        self.verdict.tag == self.expected
    }

    pub fn independence_violations(&self) -> u64 {
        self.tallies[Check::Independence as usize].violations
    }

    pub fn check(&self) -> CheckResult {
        CheckResult::new(self.label.clone(), self.passed(), self.verdict.slope, 0.0, 0.0)
    }
}

pub fn judge(label: String, cfg: SimConfig, expected: VerdictTag) -> Result<JudgedRun, AnalysisError> {
    let horizon = cfg.horizon as usize;
    let mut files = Vec::with_capacity(horizon);
    let mut total_q = Vec::with_capacity(horizon);
    let mut sim = Simulator::new(cfg).map_err(|e| AnalysisError::Engine(e.to_string()))?;
    sim.run_with(|f| {
        files.push(f.total_files as f64);
        total_q.push(f.total_q as f64);
    })
    .map_err(|e| AnalysisError::Engine(e.to_string()))?;
    let verdict = stability_verdict(&files, &total_q, StabilityOptions { slots_per_frame: 1, excess_load: None })?;
    let mean_files = files.iter().sum::<f64>() / files.len() as f64;
    Ok(JudgedRun { label, expected, verdict, tallies: sim.state().checks.clone(), mean_files })
}

/// Centralized scheduler on the cross network: every window policy at 0.7 load, then an overload.
pub fn centralized_stability(seeds: &[u64], slots: u64) -> Result<Vec<JudgedRun>, AnalysisError> {
    let mut jobs = Vec::new();
    for policy in scenarios::window_policies() {
        for &seed in seeds {
            jobs.push((format!("centralized_theta0.7_{policy:?}_seed{seed}"), 0.7, policy, seed, VerdictTag::Stable));
        }
    }
    jobs.push(("centralized_theta1.2_overload".into(), 1.2, WindowPolicy::Fixed(5), seeds[0], VerdictTag::Unstable));
    par_map(&jobs, |(label, theta, policy, seed, expected)| {
        judge(
            label.clone(),
            scenarios::cross_traffic(*theta, SchedulerKind::Centralized, *policy, slots, *seed),
            *expected,
        )
    })
    .into_iter()
    .collect()
}

/// Both CSMA variants on the cross network at half load.
pub fn csma_stability(seeds: &[u64], slots: u64) -> Result<Vec<JudgedRun>, AnalysisError> {
    let mut jobs = Vec::new();
    for kind in [SchedulerKind::BasicCsma, SchedulerKind::QCsma] {
        for &seed in seeds {
            jobs.push((format!("{kind:?}_theta0.5_seed{seed}"), kind, seed));
        }
    }
    par_map(&jobs, |(label, kind, seed)| {
        let cfg = scenarios::cross_traffic(0.5, *kind, WindowPolicy::RandomBounded, slots, *seed);
        judge(label.clone(), cfg, VerdictTag::Stable)
    })
    .into_iter()
    .collect()
}

/// Exact Gibbs law of a frozen-weight conflict graph, exposed for the sampler CLI.
pub fn frozen_gibbs(graph: &ConflictGraph, w: &[f64]) -> Result<(Vec<u64>, Vec<f64>), AnalysisError> {
    let st = exact_stationary(graph, w)?;
    Ok((st.schedules.masks().to_vec(), st.pi))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_names_round_trip() {
        for s in [Suite::Oracles, Suite::CsmaMixing, Suite::Bounds, Suite::Stability, Suite::All] {
            assert_eq!(s.name().parse::<Suite>().unwrap(), s);
        }
        assert!("nope".parse::<Suite>().is_err());
    }

    #[test]
    fn scenarios_are_valid_and_small() {
        for net in exact_kernel_networks(12) {
            assert!(enumerate_schedules(net.conflict_graph()).unwrap().len() <= 256);
            assert!(net.node_count() <= 10);
        }
        let cfg = scenarios::cross_traffic(0.7, SchedulerKind::Centralized, WindowPolicy::Fixed(5), 10, 0);
        assert!(cfg.validate().is_ok());
        // 0.7 * 0.2 packets per slot per source with mean size 1.5.
        for s in &cfg.traffic.sources {
            assert!((s.rate - 0.14 / 1.5).abs() < 1e-12);
        }
        assert!(scenarios::line_traffic(SchedulerKind::QCsma, 10, 0).validate().is_ok());
        // Every pair of links in the cross network conflicts.
        assert_eq!(scenarios::cross_network().conflict_graph().edge_count(), 6);
    }

    #[test]
    fn oracle_suite_passes() {
        let rep = run_suite(Suite::Oracles).unwrap();
        assert!(rep.passed, "{rep:?}");
    }

    #[test]
    fn par_map_keeps_order() {
        let xs: Vec<u32> = (0..37).collect();
        assert_eq!(par_map(&xs, |x| x * 2), xs.iter().map(|x| x * 2).collect::<Vec<_>>());
    }
}
