//! Exact Gibbs distributions and frozen-weight CSMA kernels over the schedule set.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::linalg::{dot, mat_vec, norm, solve};
use super::AnalysisError;
use crate::csma::{activation_probability, DecisionDistribution};
use crate::net_model::{enumerate_schedules, mask_links, ConflictGraph, ScheduleSet};
use crate::scheduling::schedule_weight;

/// Largest schedule set handled by the exact tools.
pub const MAX_EXACT_STATES: usize = 4096;

#[derive(Debug, Clone, PartialEq)]
pub struct Stationary {
    pub schedules: ScheduleSet,
    pub pi: Vec<f64>,
}

fn schedules_for(graph: &ConflictGraph) -> Result<ScheduleSet, AnalysisError> {
    let set = enumerate_schedules(graph).map_err(|_| AnalysisError::TooLarge { states: usize::MAX })?;
    if set.len() > MAX_EXACT_STATES {
        return Err(AnalysisError::TooLarge { states: set.len() });
    }
    Ok(set)
}

/// `pi(s) = exp(sum of w over s) / Z` with `Z` by enumeration.
pub fn exact_stationary(graph: &ConflictGraph, w: &[f64]) -> Result<Stationary, AnalysisError> {
    let schedules = schedules_for(graph)?;
    let pi = gibbs(&schedules, w);
    Ok(Stationary { schedules, pi })
}

pub fn gibbs(schedules: &ScheduleSet, w: &[f64]) -> Vec<f64> {
    let logw: Vec<f64> = schedules.masks().iter().map(|&m| schedule_weight(w, m)).collect();
    let top = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let un: Vec<f64> = logw.iter().map(|l| (l - top).exp()).collect();
    let z: f64 = un.iter().sum();
    un.into_iter().map(|u| u / z).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub enum KernelVariant {
    SingleSite,
    MultiSite(DecisionDistribution),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExactChain {
    pub schedules: ScheduleSet,
    /// Row-major `r x r`.
    pub kernel: Vec<f64>,
    /// Gibbs distribution for the frozen weights.
    pub pi: Vec<f64>,
}

impl ExactChain {
    pub fn states(&self) -> usize {
        self.schedules.len()
    }

    pub fn p(&self, from: usize, to: usize) -> f64 {
        self.kernel[from * self.states() + to]
    }

    pub fn max_row_error(&self) -> f64 {
        let r = self.states();
        (0..r).map(|i| (self.kernel[i * r..(i + 1) * r].iter().sum::<f64>() - 1.0).abs()).fold(0.0, f64::max)
    }

    /// `max |(pi P - pi)(s)|` for the given vector.
    pub fn invariance_error(&self, pi: &[f64]) -> f64 {
        let r = self.states();
        (0..r)
            .map(|j| ((0..r).map(|i| pi[i] * self.kernel[i * r + j]).sum::<f64>() - pi[j]).abs())
            .fold(0.0, f64::max)
    }

    pub fn detailed_balance_error(&self) -> f64 {
        let r = self.states();
        let mut worst: f64 = 0.0;
        for i in 0..r {
            for j in i + 1..r {
                worst = worst.max((self.pi[i] * self.p(i, j) - self.pi[j] * self.p(j, i)).abs());
            }
        }
        worst
    }

    pub fn is_identity(&self) -> bool {
        let r = self.states();
        (0..r).all(|i| self.kernel[i * r + i] == 1.0)
    }
}

pub fn build_kernel(graph: &ConflictGraph, w: &[f64], variant: &KernelVariant) -> Result<ExactChain, AnalysisError> {
    let schedules = schedules_for(graph)?;
    let r = schedules.len();
    let nl = graph.vertex_count();
    let adj = graph.masks();
    let p: Vec<f64> = w.iter().map(|&x| activation_probability(x)).collect();
    let mut kernel = vec![0.0; r * r];
    let idx = |m: u64| schedules.index_of(m).expect("update keeps independence");
    match variant {
        KernelVariant::SingleSite => {
            let each = 1.0 / nl as f64;
            for (i, &s) in schedules.masks().iter().enumerate() {
                for l in 0..nl {
                    if s & adj[l] != 0 {
                        kernel[i * r + i] += each;
                    } else {
                        kernel[i * r + idx(s | 1 << l)] += each * p[l];
                        kernel[i * r + idx(s & !(1 << l))] += each * (1.0 - p[l]);
                    }
                }
            }
        }
        KernelVariant::MultiSite(alpha) => {
            for &(m, a) in &alpha.entries {
                let sites = mask_links(m);
                for (i, &s) in schedules.masks().iter().enumerate() {
                    // Sites in a decision set never neighbour each other, so each
                    // site's blocking status depends on the current state only.
                    let base = s & !m;
                    let mut outcomes = vec![(base, a)];
                    for &l in &sites {
                        let mut next = Vec::with_capacity(outcomes.len() * 2);
                        for (mask, pr) in outcomes {
                            if s & adj[l] != 0 {
                                next.push((mask, pr));
                            } else {
                                next.push((mask | 1 << l, pr * p[l]));
                                next.push((mask, pr * (1.0 - p[l])));
                            }
                        }
                        outcomes = next;
                    }
                    for (mask, pr) in outcomes {
                        kernel[i * r + idx(mask)] += pr;
                    }
                }
            }
        }
    }
    let pi = gibbs(&schedules, w);
    Ok(ExactChain { schedules, kernel, pi })
}

/// Stationary vector of a kernel by solving `pi (P - I) = 0`, `sum pi = 1`.
pub fn stationary_by_solve(chain: &ExactChain) -> Result<Vec<f64>, AnalysisError> {
    let r = chain.states();
    let mut a = vec![0.0; r * r];
    for i in 0..r {
        for j in 0..r {
            a[j * r + i] = chain.kernel[i * r + j] - if i == j { 1.0 } else { 0.0 };
        }
    }
    for i in 0..r {
        a[(r - 1) * r + i] = 1.0;
    }
    let mut b = vec![0.0; r];
    b[r - 1] = 1.0;
    solve(a, b).ok_or(AnalysisError::Singular)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Slem {
    pub lambda_star: f64,
    pub mixing_time: f64,
    pub iterations: usize,
}

const SLEM_TOL: f64 = 1e-8;
const SLEM_MAX_ITER: usize = 500_000;

/// Second largest eigenvalue modulus of a reversible kernel.
///
/// The kernel is symmetrised with `pi`, the top eigenvector `sqrt(pi)` is
/// deflated, and power iteration runs on the square of the remainder so that
/// eigenvalues of both signs are handled.
pub fn slem(chain: &ExactChain) -> Result<Slem, AnalysisError> {
    let r = chain.states();
    let sq: Vec<f64> = chain.pi.iter().map(|x| x.sqrt()).collect();
    let mut b = vec![0.0; r * r];
    for i in 0..r {
        for j in 0..r {
            b[i * r + j] = sq[i] * chain.kernel[i * r + j] / sq[j] - sq[i] * sq[j];
        }
    }
    // Symmetrise away round-off.
    for i in 0..r {
        for j in i + 1..r {
            let m = 0.5 * (b[i * r + j] + b[j * r + i]);
            b[i * r + j] = m;
            b[j * r + i] = m;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x51e3);
    let mut v: Vec<f64> = (0..r).map(|_| rng.random::<f64>() - 0.5).collect();
    let apply = |v: &[f64]| mat_vec(&b, &mat_vec(&b, v));
    for it in 1..=SLEM_MAX_ITER {
        let nv = norm(&v);
        if nv == 0.0 {
            return Ok(finish(0.0, it));
        }
        v.iter_mut().for_each(|x| *x /= nv);
        let bv = apply(&v);
        let mu = dot(&v, &bv);
        let resid: f64 = bv.iter().zip(&v).map(|(a, x)| (a - mu * x).powi(2)).sum::<f64>().sqrt();
        if resid <= SLEM_TOL {
            return Ok(finish(mu.max(0.0).sqrt(), it));
        }
        v = bv;
    }
    Err(AnalysisError::ConvergenceFailure { iterations: SLEM_MAX_ITER })
}

fn finish(lambda: f64, iterations: usize) -> Slem {
    let lambda_star = lambda.min(1.0);
    Slem { lambda_star, mixing_time: 1.0 / (1.0 - lambda_star), iterations }
}

/// Lower bound on the single-site spectral gap, `16^-L exp(-4 L w_max)`, as a natural log.
pub fn single_site_gap_bound_ln(links: usize, w_max: f64) -> f64 {
    -(links as f64) * 16f64.ln() - 4.0 * links as f64 * w_max
}

/// Upper bound on the Q-CSMA mixing time, `64^V / 2 exp(4 V w_max)`, as a natural log.
pub fn multi_site_mixing_bound_ln(nodes: usize, w_max: f64) -> f64 {
    nodes as f64 * 64f64.ln() - 2f64.ln() + 4.0 * nodes as f64 * w_max
}

/// Half the L1 distance between two distributions over the same index set.
pub fn tv_distance(p: &[f64], q: &[f64]) -> Result<f64, AnalysisError> {
    if p.len() != q.len() {
        return Err(AnalysisError::DimensionMismatch { left: p.len(), right: q.len() });
    }
    Ok(0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>())
}

/// `max_s |ln(pi_b(s) / pi_a(s))|`.
pub fn max_log_ratio(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (y.ln() - x.ln()).abs()).fold(0.0, f64::max)
}
