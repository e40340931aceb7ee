//! File arrivals, per-file windows and packet injection.
//!
//! File sizes are never drawn up front. Each injected packet is the file's
//! last with probability `eta`, so the size is geometric with mean `1/eta`.

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ArrivalLaw {
    #[default]
    Poisson,
    Bernoulli,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrafficError {
    #[error("file type {0} has eta outside (0, 1]")]
    BadEta(usize),
    #[error("source {0} has a negative or non-finite arrival rate")]
    BadRate(usize),
    #[error("source {0} has a Bernoulli arrival rate above 1")]
    BernoulliRate(usize),
    #[error("type probabilities of source {0} must be nonnegative and sum to 1")]
    BadTypeProbs(usize),
    #[error("traffic lists {got} sources but the network has {expected}")]
    SourceCount { expected: usize, got: usize },
    #[error("no file types given")]
    NoTypes,
    #[error("window bound must be at least 1")]
    BadWindowBound,
    #[error("window policy parameters out of range: {0}")]
    BadPolicy(&'static str),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceTraffic {
    /// Mean file arrivals per slot.
    pub rate: f64,
    /// Probability of each file type.
    pub type_probs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrafficSpec {
    pub law: ArrivalLaw,
    /// Per-type termination probability; mean file size is `1/eta`.
    pub etas: Vec<f64>,
    /// Aligned with the network's sources.
    pub sources: Vec<SourceTraffic>,
}

impl TrafficSpec {
    pub fn validate(&self, source_count: usize) -> Result<(), TrafficError> {
        if self.etas.is_empty() {
            return Err(TrafficError::NoTypes);
        }
        if let Some(i) = self.etas.iter().position(|&e| !(e > 0.0 && e <= 1.0)) {
            return Err(TrafficError::BadEta(i));
        }
        if self.sources.len() != source_count {
            return Err(TrafficError::SourceCount { expected: source_count, got: self.sources.len() });
        }
        for (s, src) in self.sources.iter().enumerate() {
            if !src.rate.is_finite() || src.rate < 0.0 {
                return Err(TrafficError::BadRate(s));
            }
            if self.law == ArrivalLaw::Bernoulli && src.rate > 1.0 {
                return Err(TrafficError::BernoulliRate(s));
            }
            let sum: f64 = src.type_probs.iter().sum();
            if src.type_probs.len() != self.etas.len()
                || src.type_probs.iter().any(|p| !p.is_finite() || *p < 0.0)
                || (sum - 1.0).abs() > 1e-9
            {
                return Err(TrafficError::BadTypeProbs(s));
            }
        }
        Ok(())
    }

    /// Mean file size `m_s` at source `s`.
    pub fn mean_file_size(&self, s: usize) -> f64 {
        self.sources[s].type_probs.iter().zip(&self.etas).map(|(p, e)| p / e).sum()
    }

    /// Offered load `rho_s = kappa_s * m_s` in packets per slot.
    pub fn load(&self, s: usize) -> f64 {
        self.sources[s].rate * self.mean_file_size(s)
    }

    pub fn eta_min(&self) -> f64 {
        self.etas.iter().copied().fold(1.0, f64::min)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum WindowPolicy {
    Fixed(u32),
    RandomBounded,
    AimdClipped {
        increase: f64,
        decrease: f64,
        /// Congestion is signalled when the ingress queue holds more packets than this.
        threshold: u64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowConfig {
    pub policy: WindowPolicy,
    /// Upper bound on any window.
    pub w_cong: u32,
    pub initial: u32,
}

impl Default for WindowConfig {
    fn default() -> Self {
        WindowConfig { policy: WindowPolicy::Fixed(1), w_cong: 1, initial: 1 }
    }
}

impl WindowConfig {
    pub fn validate(&self) -> Result<(), TrafficError> {
        if self.w_cong < 1 {
            return Err(TrafficError::BadWindowBound);
        }
        match self.policy {
            WindowPolicy::AimdClipped { increase, decrease, .. } => {
                if !(increase.is_finite() && increase >= 0.0) {
                    return Err(TrafficError::BadPolicy("aimd increase must be finite and nonnegative"));
                }
                if !(decrease > 0.0 && decrease < 1.0) {
                    return Err(TrafficError::BadPolicy("aimd decrease must lie in (0, 1)"));
                }
            }
            WindowPolicy::Fixed(_) | WindowPolicy::RandomBounded => {}
        }
        Ok(())
    }

    pub fn initial_window(&self) -> u32 {
        self.initial.clamp(1, self.w_cong)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Feedback {
    Success,
    Congestion,
}

/// Next window size; always inside `[1, w_cong]`.
pub fn update_window<R: Rng + ?Sized>(cfg: &WindowConfig, current: u32, feedback: Feedback, rng: &mut R) -> u32 {
    let w = match cfg.policy {
        WindowPolicy::Fixed(w) => w,
        WindowPolicy::RandomBounded => rng.random_range(1..=cfg.w_cong),
        WindowPolicy::AimdClipped { increase, decrease, .. } => {
            let next = match feedback {
                Feedback::Success => current as f64 + increase,
                Feedback::Congestion => current as f64 * decrease,
            };
            next.floor().min(u32::MAX as f64) as u32
        }
    };
    w.clamp(1, cfg.w_cong)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileRecord {
    /// Unique per run, increasing in arrival order.
    pub id: u64,
    pub file_type: usize,
    pub window: u32,
    /// True while the file still has packets above the transport layer.
    pub active: bool,
    /// Packets of this file sitting in the source's ingress MAC queue.
    pub in_queue: u32,
    pub injected: u64,
    pub arrived: u64,
}

impl FileRecord {
    pub fn new(id: u64, file_type: usize, window: u32, arrived: u64) -> Self {
        FileRecord { id, file_type, window, active: true, in_queue: 0, injected: 0, arrived }
    }

    /// A file leaves the system once terminated and its last packet has left the ingress queue.
    pub fn is_complete(&self) -> bool {
        !self.active && self.in_queue == 0
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SourceState {
    /// Current files in arrival order; position `f` is file index `f + 1`.
    pub files: Vec<FileRecord>,
}

impl SourceState {
    pub fn reindex_files(&mut self) {
        self.files.retain(|f| !f.is_complete());
    }

    pub fn position_of(&self, id: u64) -> Option<usize> {
        self.files.binary_search_by_key(&id, |f| f.id).ok()
    }

    pub fn active_count(&self) -> usize {
        self.files.iter().filter(|f| f.active).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InjectionOutcome {
    pub injected: u32,
    /// The file's final packet was injected this slot.
    pub terminated: bool,
    pub expected_departure: f64,
    pub residual: f64,
    pub remaining_window: u32,
}

/// Injects up to `space` packets; each one ends the file with probability `eta`.
pub fn inject_packets<R: Rng + ?Sized>(rng: &mut R, file: &mut FileRecord, eta: f64, space: u32) -> InjectionOutcome {
    let mut injected = 0;
    let mut terminated = false;
    if file.active {
        while injected < space {
            injected += 1;
            if rng.random::<f64>() < eta {
                terminated = true;
                break;
            }
        }
    }
    file.in_queue += injected;
    file.injected += injected as u64;
    if terminated {
        file.active = false;
    }
    let expected_departure = if terminated { 1.0 / eta } else { 0.0 };
    InjectionOutcome {
        injected,
        terminated,
        expected_departure,
        residual: injected as f64 - expected_departure,
        remaining_window: space - injected,
    }
}

/// Number of new files at source `s` this slot.
pub fn sample_arrival_count<R: Rng + ?Sized>(rng: &mut R, spec: &TrafficSpec, s: usize) -> u64 {
    let rate = spec.sources[s].rate;
    if rate <= 0.0 {
        return 0;
    }
    match spec.law {
        ArrivalLaw::Bernoulli => (rng.random::<f64>() < rate) as u64,
        ArrivalLaw::Poisson => Poisson::new(rate).expect("rate validated").sample(rng) as u64,
    }
}

pub fn sample_file_type<R: Rng + ?Sized>(rng: &mut R, probs: &[f64]) -> usize {
    if probs.len() == 1 {
        return 0;
    }
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// Draws this slot's new files at source `s`, assigning ids from `next_id`.
pub fn sample_arrivals<R: Rng + ?Sized>(
    rng: &mut R,
    spec: &TrafficSpec,
    s: usize,
    window: u32,
    slot: u64,
    next_id: &mut u64,
) -> Vec<FileRecord> {
    let count = sample_arrival_count(rng, spec, s);
    (0..count)
        .map(|_| {
            let ty = sample_file_type(rng, &spec.sources[s].type_probs);
            let f = FileRecord::new(*next_id, ty, window, slot);
            *next_id += 1;
            f
        })
        .collect()
}

/// `q + sum of mean sizes of unfinished files` at a source's own destination, `q` elsewhere.
pub fn expected_backlog(q: u64, files: Option<(&[FileRecord], &[f64])>) -> f64 {
    let mut total = q as f64;
    if let Some((files, etas)) = files {
        for f in files.iter().filter(|f| f.active) {
            total += 1.0 / etas[f.file_type];
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn spec(law: ArrivalLaw, rate: f64) -> TrafficSpec {
        TrafficSpec { law, etas: vec![1.0], sources: vec![SourceTraffic { rate, type_probs: vec![1.0] }] }
    }

    #[test]
    fn zero_rate_never_arrives() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut id = 0;
        for t in 0..1000 {
            assert!(sample_arrivals(&mut rng, &spec(ArrivalLaw::Poisson, 0.0), 0, 1, t, &mut id).is_empty());
        }
    }

    #[test]
    fn bernoulli_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let sp = spec(ArrivalLaw::Bernoulli, 0.3);
        let n = 100_000;
        let total: u64 = (0..n).map(|_| sample_arrival_count(&mut rng, &sp, 0)).sum();
        let mean = total as f64 / n as f64;
        assert!((mean - 0.3).abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn poisson_dispersion() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let sp = spec(ArrivalLaw::Poisson, 2.0);
        let xs: Vec<f64> = (0..100_000).map(|_| sample_arrival_count(&mut rng, &sp, 0) as f64).collect();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
        assert!((var / mean - 1.0).abs() < 0.05, "mean {mean} var {var}");
    }

    #[test]
    fn injection_with_no_space() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut f = FileRecord::new(0, 0, 1, 0);
        let out = inject_packets(&mut rng, &mut f, 0.5, 0);
        assert_eq!((out.injected, out.terminated, out.residual), (0, false, 0.0));
        assert!(f.active);
    }

    #[test]
    fn unit_files_inject_one_packet() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for w in 1..5 {
            let mut f = FileRecord::new(0, 0, w, 0);
            let out = inject_packets(&mut rng, &mut f, 1.0, w);
            assert_eq!((out.injected, out.terminated, out.residual), (1, true, 0.0));
            assert!(!f.active);
        }
    }

    #[test]
    fn injection_outcome_distribution() {
        // w = 2, eta = 0.5: (1, I=1) half the time, (2, I=1) and (2, I=0) a quarter each.
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let n = 200_000;
        let mut counts = [0u32; 3];
        let mut sum_b = 0.0;
        for _ in 0..n {
            let mut f = FileRecord::new(0, 0, 2, 0);
            let out = inject_packets(&mut rng, &mut f, 0.5, 2);
            let k = match (out.injected, out.terminated) {
                (1, true) => 0,
                (2, true) => 1,
                (2, false) => 2,
                other => panic!("impossible outcome {other:?}"),
            };
            counts[k] += 1;
            sum_b += out.residual;
        }
        let freq: Vec<f64> = counts.iter().map(|&c| c as f64 / n as f64).collect();
        for (got, want) in freq.iter().zip([0.5, 0.25, 0.25]) {
            assert!((got - want).abs() < 0.005, "{freq:?}");
        }
        // Var(B) = 0.5 * 1 + 0.25 * 0 + 0.25 * 4 = 1.5.
        let se = (1.5f64 / n as f64).sqrt();
        assert!((sum_b / n as f64).abs() < 4.0 * se);
    }

    #[test]
    fn window_policies() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let fixed = WindowConfig { policy: WindowPolicy::Fixed(3), w_cong: 8, initial: 1 };
        assert_eq!(update_window(&fixed, 1, Feedback::Congestion, &mut rng), 3);
        let aimd = WindowConfig {
            policy: WindowPolicy::AimdClipped { increase: 1.0, decrease: 0.5, threshold: 5 },
            w_cong: 8,
            initial: 1,
        };
        assert_eq!(update_window(&aimd, 7, Feedback::Congestion, &mut rng), 3);
        assert_eq!(update_window(&aimd, 8, Feedback::Success, &mut rng), 8);
        assert_eq!(update_window(&aimd, 1, Feedback::Congestion, &mut rng), 1);
        let random = WindowConfig { policy: WindowPolicy::RandomBounded, w_cong: 4, initial: 1 };
        let mut seen = [false; 5];
        for _ in 0..200 {
            seen[update_window(&random, 1, Feedback::Success, &mut rng) as usize] = true;
        }
        assert_eq!(seen, [false, true, true, true, true]);
    }

    #[test]
    fn reindex_compacts_in_order() {
        let mut s = SourceState { files: (0..3).map(|i| FileRecord::new(i, 0, 1, 0)).collect() };
        s.reindex_files();
        assert_eq!(s.files.len(), 3);
        s.files[1].active = false;
        s.reindex_files();
        assert_eq!(s.files.iter().map(|f| f.id).collect::<Vec<_>>(), vec![0, 2]);
        for f in &mut s.files {
            f.active = false;
        }
        s.reindex_files();
        assert!(s.files.is_empty());
    }

    #[test]
    fn expected_backlog_examples() {
        assert_eq!(expected_backlog(7, None), 7.0);
        let etas = [0.5];
        let files: Vec<_> = (0..2).map(|i| FileRecord::new(i, 0, 1, 0)).collect();
        assert_eq!(expected_backlog(4, Some((&files, &etas))), 8.0);
        let done: Vec<_> = files.iter().cloned().map(|mut f| { f.active = false; f }).collect();
        assert_eq!(expected_backlog(4, Some((&done, &etas))), 4.0);
    }

    #[test]
    fn traffic_validation() {
        assert!(spec(ArrivalLaw::Poisson, 0.5).validate(1).is_ok());
        assert_eq!(spec(ArrivalLaw::Bernoulli, 1.5).validate(1), Err(TrafficError::BernoulliRate(0)));
        assert_eq!(spec(ArrivalLaw::Poisson, -1.0).validate(1), Err(TrafficError::BadRate(0)));
        let mut bad = spec(ArrivalLaw::Poisson, 0.5);
        bad.etas[0] = 0.0;
        assert_eq!(bad.validate(1), Err(TrafficError::BadEta(0)));
        let mut two = spec(ArrivalLaw::Poisson, 0.2);
        two.etas = vec![1.0, 0.1];
        two.sources[0].type_probs = vec![0.5, 0.5];
        assert!((two.mean_file_size(0) - 5.5).abs() < 1e-12);
        assert!((two.load(0) - 1.1).abs() < 1e-12);
        assert_eq!(two.eta_min(), 0.1);
    }
}
