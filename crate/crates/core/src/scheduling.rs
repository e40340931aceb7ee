//! Log-differential weights and the centralized max-weight scheduler.

use std::cell::RefCell;
use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::net_model::{LinkId, Network, ScheduleSet};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "h", rename_all = "snake_case", deny_unknown_fields)]
pub enum HChoice {
    One,
    LogLog,
    LogTheta { theta: f64 },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum WeightError {
    #[error("weight function evaluated at negative input {0}")]
    NegativeInput(f64),
    #[error("theta must lie in (0, 1), got {0}")]
    BadTheta(f64),
    #[error("weight function fails the {0} check")]
    ShapeViolation(&'static str),
    #[error("schedule set is empty")]
    EmptyScheduleSet,
}

/// `g(x) = ln(1 + x) / h(x)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightFn {
    h: HChoice,
    h0: f64,
}

impl WeightFn {
    pub fn new(h: HChoice) -> Result<Self, WeightError> {
        if let HChoice::LogTheta { theta } = h {
            if !(theta > 0.0 && theta < 1.0) {
                return Err(WeightError::BadTheta(theta));
            }
        }
        let mut wf = WeightFn { h, h0: 1.0 };
        wf.h0 = wf.h(0.0);
        wf.check_shape()?;
        Ok(wf)
    }

    pub fn one() -> Self {
        WeightFn { h: HChoice::One, h0: 1.0 }
    }

    pub fn log_log() -> Self {
        WeightFn { h: HChoice::LogLog, h0: 1.0 }
    }

    pub fn choice(&self) -> HChoice {
        self.h
    }

    pub fn h0(&self) -> f64 {
        self.h0
    }

    pub fn h(&self, x: f64) -> f64 {
        match self.h {
            HChoice::One => 1.0,
            HChoice::LogLog => (std::f64::consts::E + x.ln_1p()).ln(),
            HChoice::LogTheta { theta } => (std::f64::consts::E + x).ln().powf(theta),
        }
    }

    fn h_prime(&self, x: f64) -> f64 {
        let e = std::f64::consts::E;
        match self.h {
            HChoice::One => 0.0,
            HChoice::LogLog => 1.0 / ((e + x.ln_1p()) * (1.0 + x)),
            HChoice::LogTheta { theta } => {
                let l = (e + x).ln();
                theta * l.powf(theta - 1.0) / (e + x)
            }
        }
    }

    /// `g(x)`; callers guarantee `x >= 0`.
    pub fn g(&self, x: f64) -> f64 {
        debug_assert!(x >= 0.0);
        x.ln_1p() / self.h(x)
    }

    pub fn try_g(&self, x: f64) -> Result<f64, WeightError> {
        if x < 0.0 || x.is_nan() {
            return Err(WeightError::NegativeInput(x));
        }
        Ok(self.g(x))
    }

    pub fn g_prime(&self, x: f64) -> f64 {
        let h = self.h(x);
        (h / (1.0 + x) - x.ln_1p() * self.h_prime(x)) / (h * h)
    }

    /// Smallest `x >= 0` with `g(x) >= y`, by bisection.
    pub fn g_inverse(&self, y: f64) -> f64 {
        if y <= 0.0 {
            return 0.0;
        }
        let mut hi = 1.0;
        while self.g(hi) < y {
            hi *= 2.0;
            if hi > 1e300 {
                return f64::INFINITY;
            }
        }
        let mut lo = 0.0;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.g(mid) < y {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        hi
    }

    /// `G(u) = integral of g over [0, u]`.
    pub fn antiderivative(&self, u: f64) -> f64 {
        if u <= 0.0 {
            return 0.0;
        }
        match self.h {
            HChoice::One => (1.0 + u) * u.ln_1p() - u,
            _ => {
                let f = |x: f64| self.g(x);
                let (a, b) = (0.0, u);
                let m = 0.5 * (a + b);
                let (fa, fm, fb) = (f(a), f(m), f(b));
                let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
                adaptive_simpson(&f, a, b, fa, fm, fb, whole, 1e-10 * u.max(1.0), 40)
            }
        }
    }

    fn check_shape(&self) -> Result<(), WeightError> {
        let grid: Vec<f64> = (0..400).map(|i| 0.05 * i as f64 * (1.0 + 0.05 * i as f64)).collect();
        let vals: Vec<f64> = grid.iter().map(|&x| self.g(x)).collect();
        if vals[0] != 0.0 {
            return Err(WeightError::ShapeViolation("g(0) = 0"));
        }
        if vals.windows(2).any(|w| w[1] <= w[0]) {
            return Err(WeightError::ShapeViolation("monotonicity"));
        }
        for i in 1..grid.len() - 1 {
            // Chord slopes must not increase.
            let left = (vals[i] - vals[i - 1]) / (grid[i] - grid[i - 1]);
            let right = (vals[i + 1] - vals[i]) / (grid[i + 1] - grid[i]);
            if right > left + 1e-12 {
                return Err(WeightError::ShapeViolation("concavity"));
            }
        }
        // h(0) = 1 for every supported h, so h^{-1}(1) = 0.
        if grid.iter().any(|&x| self.g_prime(x) > 1.0 + 1e-12) {
            return Err(WeightError::ShapeViolation("slope"));
        }
        Ok(())
    }
}

#[allow(clippy::too_many_arguments)]
fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    adaptive_simpson(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
        + adaptive_simpson(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
}

/// Memoised `G` for repeated Lyapunov evaluations.
#[derive(Debug)]
pub struct AntiderivativeCache {
    wf: WeightFn,
    memo: RefCell<HashMap<u64, f64>>,
}

impl AntiderivativeCache {
    pub fn new(wf: WeightFn) -> Self {
        AntiderivativeCache { wf, memo: RefCell::new(HashMap::new()) }
    }

    pub fn eval(&self, u: f64) -> f64 {
        if matches!(self.wf.h, HChoice::One) || u <= 0.0 {
            return self.wf.antiderivative(u);
        }
        let mut memo = self.memo.borrow_mut();
        if memo.len() > 1 << 16 {
            memo.clear();
        }
        *memo.entry(u.to_bits()).or_insert_with(|| self.wf.antiderivative(u))
    }
}

/// Per-link weights derived from per-node, per-destination potentials.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkWeights {
    /// `per_dest[l][i]` pairs with `network.link_dests(l)[i]`.
    pub per_dest: Vec<Vec<f64>>,
    pub weight: Vec<f64>,
    /// Chosen destination index per link.
    pub chosen: Vec<usize>,
    /// Number of destinations tied at the maximum.
    pub ties: Vec<u32>,
}

impl LinkWeights {
    pub fn max_weight(&self) -> f64 {
        self.weight.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Sum of weights over the links of `mask`, in ascending link order.
    pub fn schedule_weight(&self, mask: u64) -> f64 {
        schedule_weight(&self.weight, mask)
    }
}

pub fn schedule_weight(w: &[f64], mut mask: u64) -> f64 {
    let mut total = 0.0;
    while mask != 0 {
        total += w[mask.trailing_zeros() as usize];
        mask &= mask - 1;
    }
    total
}

/// Weights from potentials `pot[node][dest]`. Destination ties go to `rng`
/// when given, otherwise to the lowest destination index.
pub fn weights_from_potentials<R: Rng + ?Sized>(network: &Network, pot: &[Vec<f64>], mut rng: Option<&mut R>) -> LinkWeights {
    let nl = network.link_count();
    let mut per_dest = Vec::with_capacity(nl);
    let mut weight = Vec::with_capacity(nl);
    let mut chosen = Vec::with_capacity(nl);
    let mut ties = Vec::with_capacity(nl);
    for l in 0..nl {
        let link = network.link(l);
        let dests = network.link_dests(l);
        let ws: Vec<f64> = dests.iter().map(|&k| pot[link.from][k] - pot[link.to][k]).collect();
        let best = ws.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let count = ws.iter().filter(|&&w| w == best).count();
        let pick = match (&mut rng, count) {
            (Some(r), c) if c > 1 => r.random_range(0..c),
            _ => 0,
        };
        let pos = ws.iter().enumerate().filter(|(_, &w)| w == best).nth(pick).map(|(i, _)| i).unwrap();
        per_dest.push(ws);
        weight.push(best);
        chosen.push(dests[pos]);
        ties.push(count as u32);
    }
    LinkWeights { per_dest, weight, chosen, ties }
}

/// `g` applied to every queue length.
pub fn potentials(wf: &WeightFn, q: &[Vec<u64>]) -> Vec<Vec<f64>> {
    q.iter().map(|row| row.iter().map(|&x| wf.g(x as f64)).collect()).collect()
}

pub fn compute_link_weights<R: Rng + ?Sized>(wf: &WeightFn, network: &Network, q: &[Vec<u64>], rng: Option<&mut R>) -> LinkWeights {
    weights_from_potentials(network, &potentials(wf, q), rng)
}

/// Diagnostic weights built from expected backlogs; destination ties resolve deterministically.
pub fn compute_state_weights(wf: &WeightFn, network: &Network, qbar: &[Vec<f64>]) -> LinkWeights {
    let pot: Vec<Vec<f64>> = qbar.iter().map(|row| row.iter().map(|&x| wf.g(x)).collect()).collect();
    weights_from_potentials::<rand_chacha::ChaCha8Rng>(network, &pot, None)
}

/// Bound on `|W - w|` for every link.
pub fn state_weight_gap_bound(wf: &WeightFn, eta_min: f64) -> f64 {
    (1.0 / eta_min).ln_1p() / wf.h0()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleChoice {
    pub index: usize,
    pub mask: u64,
    pub weight: f64,
    /// Number of schedules attaining the maximum.
    pub ties: usize,
    /// Destination served on each active link; `None` when inactive.
    pub assignment: Vec<Option<usize>>,
}

/// Picks a maximum-weight schedule, uniformly among exact ties.
pub fn max_weight_schedule<R: Rng + ?Sized>(
    set: &ScheduleSet,
    weights: &LinkWeights,
    rng: &mut R,
) -> Result<ScheduleChoice, WeightError> {
    if set.is_empty() {
        return Err(WeightError::EmptyScheduleSet);
    }
    let mut best = f64::NEG_INFINITY;
    let mut count = 0usize;
    for &m in set.masks() {
        let w = weights.schedule_weight(m);
        if w > best {
            best = w;
            count = 1;
        } else if w == best {
            count += 1;
        }
    }
    let pick = if count > 1 { rng.random_range(0..count) } else { 0 };
    let index = set
        .masks()
        .iter()
        .enumerate()
        .filter(|(_, &m)| weights.schedule_weight(m) == best)
        .nth(pick)
        .map(|(i, _)| i)
        .unwrap();
    let mask = set.mask(index);
    Ok(ScheduleChoice { index, mask, weight: best, ties: count, assignment: assignment(mask, weights) })
}

/// Drops zero-weight links from a maximizer; the total is unchanged.
pub fn prune_nonpositive(choice: &mut ScheduleChoice, set: &ScheduleSet, weights: &LinkWeights) {
    let mut mask = choice.mask;
    for l in crate::net_model::mask_links(choice.mask) {
        if weights.weight[l] <= 0.0 {
            mask &= !(1 << l);
        }
    }
    if mask != choice.mask && weights.schedule_weight(mask) >= choice.weight {
        choice.mask = mask;
        choice.index = set.index_of(mask).expect("schedule sets are hereditary");
        choice.weight = weights.schedule_weight(mask);
        choice.assignment = assignment(mask, weights);
    }
}

pub fn assignment(mask: u64, weights: &LinkWeights) -> Vec<Option<usize>> {
    (0..weights.weight.len()).map(|l| (mask >> l & 1 == 1).then(|| weights.chosen[l])).collect()
}

pub fn active_links(mask: u64) -> Vec<LinkId> {
    crate::net_model::mask_links(mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net_model::{build_network, enumerate_schedules, NetworkSpec, RouteTable, SourceSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn line3() -> Network {
        build_network(&NetworkSpec {
            nodes: 3,
            links: vec![(0, 1), (1, 2)],
            sources: vec![SourceSpec { node: 0, destination: 2 }],
            routes: vec![RouteTable { destination: 2, next_hops: vec![(0, 1), (1, 2)] }],
        })
        .unwrap()
    }

    #[test]
    fn g_examples() {
        for wf in [WeightFn::one(), WeightFn::log_log(), WeightFn::new(HChoice::LogTheta { theta: 0.5 }).unwrap()] {
            assert_eq!(wf.g(0.0), 0.0);
            assert_eq!(wf.h0(), 1.0);
        }
        let e = std::f64::consts::E;
        assert!((WeightFn::one().g(e - 1.0) - 1.0).abs() < 1e-15);
        // ln 2 / ln(e + ln 2).
        assert!((WeightFn::log_log().g(1.0) - 0.564_851_698_250_634).abs() < 1e-14);
        assert_eq!(WeightFn::one().try_g(-1.0), Err(WeightError::NegativeInput(-1.0)));
    }

    #[test]
    fn theta_domain() {
        assert_eq!(WeightFn::new(HChoice::LogTheta { theta: 1.0 }), Err(WeightError::BadTheta(1.0)));
        assert_eq!(WeightFn::new(HChoice::LogTheta { theta: 0.0 }), Err(WeightError::BadTheta(0.0)));
        assert!(WeightFn::new(HChoice::LogLog).is_ok());
    }

    #[test]
    fn derivative_and_inverse() {
        for wf in [WeightFn::one(), WeightFn::log_log(), WeightFn::new(HChoice::LogTheta { theta: 0.3 }).unwrap()] {
            for x in [0.0, 0.5, 3.0, 40.0, 1e4] {
                let d = 1e-6 * (1.0 + x);
                let num = (wf.g(x + d) - wf.g((x - d).max(0.0))) / (x + d - (x - d).max(0.0));
                assert!((wf.g_prime(x) - num).abs() < 1e-5 * (1.0 + num.abs()), "{x}");
                let y = wf.g(x);
                assert!((wf.g_inverse(y) - x).abs() < 1e-9 * (1.0 + x));
            }
        }
    }

    #[test]
    fn antiderivative_values() {
        let e = std::f64::consts::E;
        assert!((WeightFn::one().antiderivative(e - 1.0) - 1.0).abs() < 1e-14);
        assert_eq!(WeightFn::log_log().antiderivative(0.0), 0.0);
        // Composite trapezoid on a fine grid as an independent check.
        let wf = WeightFn::log_log();
        let u = 37.5;
        let n = 200_000;
        let h = u / n as f64;
        let trap: f64 = (0..n).map(|i| 0.5 * h * (wf.g(i as f64 * h) + wf.g((i + 1) as f64 * h))).sum();
        assert!((wf.antiderivative(u) - trap).abs() < 1e-6);
        let cache = AntiderivativeCache::new(wf);
        assert_eq!(cache.eval(u), wf.antiderivative(u));
    }

    #[test]
    fn link_weight_examples() {
        let net = line3();
        let wf = WeightFn::one();
        let w = compute_link_weights::<ChaCha8Rng>(&wf, &net, &[vec![10], vec![1], vec![0]], None);
        assert!((w.weight[0] - 5.5f64.ln()).abs() < 1e-14);
        assert!((w.weight[0] - 1.7047).abs() < 1e-4);
        assert!((w.weight[1] - 2f64.ln()).abs() < 1e-15);
        let w = compute_link_weights::<ChaCha8Rng>(&wf, &net, &[vec![3], vec![3], vec![5]], None);
        assert_eq!(w.weight[0], 0.0);
        assert!(w.weight[1] < 0.0);
    }

    #[test]
    fn max_weight_examples() {
        let net = line3();
        let set = enumerate_schedules(net.conflict_graph()).unwrap();
        let wf = WeightFn::one();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let w = compute_link_weights::<ChaCha8Rng>(&wf, &net, &[vec![10], vec![1], vec![0]], None);
        let c = max_weight_schedule(&set, &w, &mut rng).unwrap();
        assert_eq!(c.mask, 1);
        assert_eq!(c.assignment, vec![Some(0), None]);

        let zero = compute_link_weights::<ChaCha8Rng>(&wf, &net, &[vec![0], vec![0], vec![0]], None);
        let mut seen = [0u32; 3];
        for _ in 0..3000 {
            let c = max_weight_schedule(&set, &zero, &mut rng).unwrap();
            assert_eq!(c.weight, 0.0);
            assert_eq!(c.ties, 3);
            seen[c.index] += 1;
        }
        assert!(seen.iter().all(|&n| n > 900), "{seen:?}");
        let mut c = max_weight_schedule(&set, &zero, &mut rng).unwrap();
        prune_nonpositive(&mut c, &set, &zero);
        assert_eq!(c.mask, 0);
    }

    #[test]
    fn state_weight_gap() {
        assert!((state_weight_gap_bound(&WeightFn::one(), 1.0) - 2f64.ln()).abs() < 1e-15);
        let net = line3();
        let wf = WeightFn::log_log();
        let q = vec![vec![4u64], vec![2], vec![0]];
        let qbar: Vec<Vec<f64>> = q.iter().map(|r| r.iter().map(|&x| x as f64).collect()).collect();
        let w = compute_link_weights::<ChaCha8Rng>(&wf, &net, &q, None);
        assert_eq!(compute_state_weights(&wf, &net, &qbar), w);
    }

    #[test]
    fn weight_sign_follows_queue_difference() {
        let net = line3();
        let wf = WeightFn::one();
        for a in 0..20u64 {
            for b in 0..20u64 {
                for shift in [0u64, 7, 100] {
                    let w = compute_link_weights::<ChaCha8Rng>(&wf, &net, &[vec![a + shift], vec![b + shift], vec![0]], None);
                    assert_eq!(w.weight[0].partial_cmp(&0.0), Some(a.cmp(&b)));
                }
            }
        }
    }
}
