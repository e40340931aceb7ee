//! Residual moment tests and trend-based stability verdicts.

use serde::{Deserialize, Serialize};

use super::AnalysisError;

pub const MIN_RESIDUAL_SAMPLES: u64 = 100_000;
pub const MIN_STABILITY_FRAMES: usize = 10_000;
/// Batches used for the slope confidence interval.
pub const SLOPE_BATCHES: usize = 20;
/// Two-sided 99% Student t quantile with `SLOPE_BATCHES - 2` degrees of freedom.
const T_QUANTILE_99_DF18: f64 = 2.878_440_472_713_585;
pub const STABLE_GROWTH_RATIO: f64 = 1.1;
pub const UNSTABLE_BACKLOG_FRACTION: f64 = 0.1;

/// Running count, sum and sum of squares.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RunningMoments {
    pub count: u64,
    pub sum: f64,
    pub sum_sq: f64,
}

impl RunningMoments {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        self.sum += x;
        self.sum_sq += x * x;
    }

    pub fn from_slice(xs: &[f64]) -> Self {
        let mut m = RunningMoments::default();
        xs.iter().for_each(|&x| m.push(x));
        m
    }

    pub fn mean(&self) -> f64 {
        if self.count == 0 { 0.0 } else { self.sum / self.count as f64 }
    }

    pub fn second_moment(&self) -> f64 {
        if self.count == 0 { 0.0 } else { self.sum_sq / self.count as f64 }
    }

    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            return 0.0;
        }
        let n = self.count as f64;
        ((self.sum_sq - self.sum * self.sum / n) / (n - 1.0)).max(0.0)
    }

    pub fn std_error(&self) -> f64 {
        (self.variance() / self.count as f64).sqrt()
    }
}

/// Parameters of the second-moment bound `(kappa + N^2 r_max^2) max(W^2, 1/eta_min^2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentBound {
    pub kappa: f64,
    pub nodes: usize,
    pub r_max: f64,
    pub w_cong: u32,
    pub eta_min: f64,
}

impl MomentBound {
    pub fn value(&self) -> f64 {
        let n = self.nodes as f64;
        let w = self.w_cong as f64;
        (self.kappa + n * n * self.r_max * self.r_max) * (w * w).max(1.0 / (self.eta_min * self.eta_min))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    pub samples: u64,
    pub mean: f64,
    pub std_error: f64,
    pub z: f64,
    pub second_moment: f64,
    pub moment_bound: f64,
    pub passed: bool,
}

pub const RESIDUAL_Z_LIMIT: f64 = 4.0;

pub fn residual_moment_test(trace: &[f64], bound: &MomentBound) -> Result<ResidualReport, AnalysisError> {
    residual_moment_test_from_moments(&RunningMoments::from_slice(trace), bound)
}

pub fn residual_moment_test_from_moments(m: &RunningMoments, bound: &MomentBound) -> Result<ResidualReport, AnalysisError> {
    if m.count < MIN_RESIDUAL_SAMPLES {
        return Err(AnalysisError::InsufficientSamples { got: m.count, need: MIN_RESIDUAL_SAMPLES });
    }
    let se = m.std_error();
    let z = if se > 0.0 {
        m.mean() / se
    } else if m.mean() == 0.0 {
        0.0
    } else {
        f64::INFINITY
    };
    let moment_bound = bound.value();
    let second_moment = m.second_moment();
    Ok(ResidualReport {
        samples: m.count,
        mean: m.mean(),
        std_error: se,
        z,
        second_moment,
        moment_bound,
        passed: z.abs() < RESIDUAL_Z_LIMIT && second_moment <= moment_bound,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictTag {
    Stable,
    Unstable,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityVerdict {
    pub tag: VerdictTag,
    pub first_half_files: f64,
    pub second_half_files: f64,
    pub first_half_q: f64,
    pub second_half_q: f64,
    /// Slope of the file count over the second half, per slot.
    pub slope: f64,
    pub slope_ci: (f64, f64),
    pub final_q: f64,
    /// Growth rate of the total queue used by the unstable test, packets per slot.
    pub excess_load: f64,
    pub slots: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StabilityOptions {
    /// Slots between consecutive frames.
    pub slots_per_frame: u64,
    /// Known excess load; estimated from the queue trend when absent.
    pub excess_load: Option<f64>,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Least squares fit of `ys` against `xs`: `(slope, standard error)`.
fn ols(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let (mx, my) = (mean(xs), mean(ys));
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let rss: f64 = xs.iter().zip(ys).map(|(x, y)| (y - my - slope * (x - mx)).powi(2)).sum();
    let se = (rss / (xs.len() as f64 - 2.0) / sxx).sqrt();
    (slope, se)
}

/// Batch-means slope over the second half of a series, with its 99% interval.
fn second_half_trend(series: &[f64], step: f64) -> (f64, (f64, f64)) {
    let half = &series[series.len() / 2..];
    let per = half.len() / SLOPE_BATCHES;
    let offset = (series.len() / 2) as f64;
    let (xs, ys): (Vec<f64>, Vec<f64>) = (0..SLOPE_BATCHES)
        .map(|b| {
            let chunk = &half[b * per..(b + 1) * per];
            ((offset + b as f64 * per as f64 + 0.5 * (per as f64 - 1.0)) * step, mean(chunk))
        })
        .unzip();
    let (slope, se) = ols(&xs, &ys);
    let half_width = T_QUANTILE_99_DF18 * se;
    (slope, (slope - half_width, slope + half_width))
}

pub fn stability_verdict(files: &[f64], total_q: &[f64], opts: StabilityOptions) -> Result<StabilityVerdict, AnalysisError> {
    if files.len() < MIN_STABILITY_FRAMES || total_q.len() != files.len() {
        return Err(AnalysisError::InsufficientData { got: files.len(), need: MIN_STABILITY_FRAMES });
    }
    let step = opts.slots_per_frame.max(1) as f64;
    let mid = files.len() / 2;
    let first_half_files = mean(&files[..mid]);
    let second_half_files = mean(&files[mid..]);
    let first_half_q = mean(&total_q[..mid]);
    let second_half_q = mean(&total_q[mid..]);
    let (slope, ci) = second_half_trend(files, step);
    let excess_load = opts.excess_load.unwrap_or_else(|| second_half_trend(total_q, step).0);
    let slots = files.len() as f64 * step;
    let final_q = *total_q.last().unwrap();

    // A trend that is significantly negative is still not growth.
    let not_growing = ci.0 <= 0.0;
    let tag = if not_growing && second_half_files <= STABLE_GROWTH_RATIO * first_half_files {
        VerdictTag::Stable
    } else if ci.0 > 0.0 && final_q >= UNSTABLE_BACKLOG_FRACTION * slots * excess_load {
        VerdictTag::Unstable
    } else {
        VerdictTag::Inconclusive
    };
    Ok(StabilityVerdict {
        tag,
        first_half_files,
        second_half_files,
        first_half_q,
        second_half_q,
        slope,
        slope_ci: ci,
        final_q,
        excess_load,
        slots,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn bound() -> MomentBound {
        MomentBound { kappa: 0.1, nodes: 2, r_max: 1.0, w_cong: 2, eta_min: 0.5 }
    }

    #[test]
    fn moment_bound_value() {
        assert_eq!(bound().value(), (0.1 + 4.0) * 4.0);
    }

    #[test]
    fn residual_examples() {
        let zeros = vec![0.0; 100_000];
        assert!(residual_moment_test(&zeros, &bound()).unwrap().passed);
        assert!(matches!(
            residual_moment_test(&zeros[..10], &bound()),
            Err(AnalysisError::InsufficientSamples { got: 10, .. })
        ));
        // Exact outcome law for w = 2, eta = 0.5.
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let trace: Vec<f64> = (0..200_000)
            .map(|_| {
                let u: f64 = rng.random();
                if u < 0.5 { -1.0 } else if u < 0.75 { 0.0 } else { 2.0 }
            })
            .collect();
        let rep = residual_moment_test(&trace, &bound()).unwrap();
        assert!(rep.passed, "{rep:?}");
        let shifted: Vec<f64> = trace.iter().map(|b| b + 0.1).collect();
        assert!(!residual_moment_test(&shifted, &bound()).unwrap().passed);
    }

    #[test]
    fn verdict_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let n = 20_000;
        let flat: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..10.0)).collect();
        let v = stability_verdict(&flat, &flat, StabilityOptions::default()).unwrap();
        assert_eq!(v.tag, VerdictTag::Stable, "{v:?}");

        let growing: Vec<f64> = (0..n).map(|t| 0.01 * t as f64 + rng.random_range(-1.0..1.0)).collect();
        let v = stability_verdict(&growing, &growing, StabilityOptions::default()).unwrap();
        assert_eq!(v.tag, VerdictTag::Unstable, "{v:?}");

        let draining: Vec<f64> = (0..n).map(|t| 200.0 - 0.01 * t as f64 + rng.random_range(-1.0..1.0)).collect();
        let v = stability_verdict(&draining, &draining, StabilityOptions::default()).unwrap();
        assert_eq!(v.tag, VerdictTag::Stable, "{v:?}");

        assert!(matches!(
            stability_verdict(&flat[..100], &flat[..100], StabilityOptions::default()),
            Err(AnalysisError::InsufficientData { got: 100, .. })
        ));
    }

    #[test]
    fn all_zero_trace_is_stable() {
        let z = vec![0.0; 10_000];
        assert_eq!(stability_verdict(&z, &z, StabilityOptions::default()).unwrap().tag, VerdictTag::Stable);
    }
}
