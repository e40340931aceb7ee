//! Brute-force references kept deliberately independent of the optimised paths.

use crate::net_model::ConflictGraph;
use crate::scheduling::WeightFn;

/// Every subset of links that contains no conflicting pair, by exhaustive filtering.
pub fn all_independent_sets(graph: &ConflictGraph) -> Vec<Vec<usize>> {
    let n = graph.vertex_count();
    assert!(n <= 20, "exhaustive oracle limited to 20 links");
    (0u32..1 << n)
        .map(|m| (0..n).filter(|&l| m >> l & 1 == 1).collect::<Vec<_>>())
        .filter(|s| s.iter().all(|&a| s.iter().all(|&b| a == b || !graph.conflicts(a, b))))
        .collect()
}

/// Maximum schedule weight by exhaustive search; sums run in ascending link order.
pub fn brute_force_max_weight(graph: &ConflictGraph, w: &[f64]) -> f64 {
    all_independent_sets(graph)
        .iter()
        .map(|s| s.iter().fold(0.0, |acc, &l| acc + w[l]))
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Weight-change rate `2 (1 + W) |L| g'(max(g^-1(g*) - 1 - W, 0))`.
pub fn weight_drift_rate(wf: &WeightFn, w_cong: u32, links: usize, g_star_next: f64) -> f64 {
    let w = w_cong as f64;
    let arg = (wf.g_inverse(g_star_next) - 1.0 - w).max(0.0);
    2.0 * (1.0 + w) * links as f64 * wf.g_prime(arg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn oracle_counts() {
        let g = ConflictGraph::from_edges(3, &[(0, 1), (1, 2)]);
        assert_eq!(all_independent_sets(&g).len(), 5);
        assert_eq!(brute_force_max_weight(&g, &[1.0, 3.0, 1.5]), 3.0);
        assert_eq!(brute_force_max_weight(&g, &[-1.0, -1.0, -1.0]), 0.0);
    }

    #[test]
    fn alpha_decreases_with_g_star() {
        let wf = WeightFn::log_log();
        let a = weight_drift_rate(&wf, 4, 5, 0.0);
        assert!((a - 2.0 * 5.0 * 5.0).abs() < 1e-12);
        assert!(weight_drift_rate(&wf, 4, 5, 3.0) < weight_drift_rate(&wf, 4, 5, 1.0));
    }
}
