//! Monte Carlo validation of the threshold-count concentration bound and
//! Gaussian-fit diagnostics for the statistical top-k input distribution.

use super::{report::SCHEMA_VERSION, trial_rng};
use crate::error::{Error, Result};
use crate::tensor::RealVector;
use crate::topk::{exact_topk, topk_threshold};
use crate::Real;

use rand::Rng;
use rand_distr::StandardNormal;

/// Which count the Monte Carlo records per trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum CountRule {
    /// Entries strictly above the statistical threshold `theta(x, k)`.
    StatThreshold,
    /// Active entries of the exact sort-based top-k; always exactly `k`,
    /// provided as an oracle sanity mode for the trial pipeline.
    ExactTopk,
}

/// Parameters of one Monte Carlo run.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct MonteCarloConfig {
    pub d: usize,
    pub k: usize,
    pub mu: Real,
    pub sigma: Real,
    pub trials: usize,
    pub delta: Real,
    pub seed: u64,
    pub threads: usize,
    pub count_rule: CountRule,
}

impl MonteCarloConfig {
    pub fn new(d: usize, k: usize, trials: usize, delta: Real) -> Self {
        MonteCarloConfig {
            d,
            k,
            mu: 0.0,
            sigma: 1.0,
            trials,
            delta,
            seed: 0,
            threads: 1,
            count_rule: CountRule::StatThreshold,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.d < 2 || self.k == 0 || self.k > self.d - 1 {
            return Err(Error::parameter(
                "theorem1_montecarlo",
                format!(
                    "k must satisfy 1 <= k <= d-1, got k={}, d={}",
                    self.k, self.d
                ),
            ));
        }
        if self.trials == 0 {
            return Err(Error::parameter(
                "theorem1_montecarlo",
                "trials must be positive",
            ));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::parameter(
                "theorem1_montecarlo",
                "delta must lie in (0, 1)",
            ));
        }
        if !(self.sigma > 0.0) {
            return Err(Error::parameter(
                "theorem1_montecarlo",
                "sigma must be positive",
            ));
        }
        if self.threads == 0 {
            return Err(Error::parameter(
                "theorem1_montecarlo",
                "threads must be positive",
            ));
        }
        Ok(())
    }
}

/// Outcome of a Monte Carlo run against the concentration bound.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct ValidationReport {
    pub schema_version: u32,
    pub d: usize,
    pub k: usize,
    pub mu: Real,
    pub sigma: Real,
    pub trials: usize,
    pub delta: Real,
    /// Absolute bound on `|count - k|` at confidence `1 - delta`.
    pub bound_abs: Real,
    /// Fraction of trials with `|count - k|` within the bound.
    pub satisfied_fraction: Real,
    /// Mean of `|count - k| / d` over trials.
    pub mean_abs_gap_frac: Real,
    pub max_abs_gap: u64,
    /// `|count - k|` per trial, in trial order.
    pub abs_gaps: Vec<u64>,
}

impl ValidationReport {
    /// Bound satisfied in at least a `1 - delta` fraction of trials.
    pub fn passes(&self) -> bool {
        self.satisfied_fraction >= 1.0 - self.delta
    }

    /// One CSV row per trial.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("schema_version,trial,abs_gap,within_bound\n");
        for (i, gap) in self.abs_gaps.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{},{}\n",
                self.schema_version,
                i,
                gap,
                (*gap as Real) <= self.bound_abs
            ));
        }
        out
    }
}

/// The concentration bound on `|count - k|` for `d` iid Gaussian entries at
/// confidence `1 - delta`:
/// `4 sqrt(d log(6/delta)) (1 + sqrt(-2 log min(k/d, 1 - k/d)))`.
pub fn theorem_bound(d: usize, k: usize, delta: Real) -> Real {
    let d = d as Real;
    let k = k as Real;
    let tail = (k / d).min(1.0 - k / d);
    4.0 * (d * (6.0 / delta).ln()).sqrt() * (1.0 + (-2.0 * tail.ln()).sqrt())
}

/// Number of entries of `x` strictly above the statistical threshold
/// `theta(x, k)` - the quantity the concentration bound controls.
pub fn threshold_exceed_count(x: &RealVector, k: usize) -> Result<usize> {
    let theta = topk_threshold(x, k)?;
    Ok(x.iter().filter(|&&v| v > theta).count())
}

/// Seeded iid standard-normal vector for synthetic diagnostics.
pub fn synthetic_gaussian_vector(d: usize, seed: u64) -> Result<RealVector> {
    if d == 0 {
        return Err(Error::EmptyInput("synthetic_gaussian_vector"));
    }
    let mut rng = trial_rng(seed, 0);
    RealVector::new(
        (0..d)
            .map(|_| rng.sample::<Real, _>(StandardNormal))
            .collect(),
    )
}

/// Draw `trials` iid `N(mu, sigma^2)` vectors, count entries above the
/// statistical threshold, and report how the gaps `|count - k|` compare to
/// the concentration bound. Per-trial seeds are counter-derived, so the
/// trial set is identical for any `threads` value.
pub fn theorem1_montecarlo(cfg: &MonteCarloConfig) -> Result<ValidationReport> {
    cfg.validate()?;
    let bound = theorem_bound(cfg.d, cfg.k, cfg.delta);

    let run_trial = |index: usize| -> Result<u64> {
        let mut rng = trial_rng(cfg.seed, index as u64);
        let data: Vec<Real> = (0..cfg.d)
            .map(|_| cfg.mu + cfg.sigma * rng.sample::<Real, _>(StandardNormal))
            .collect();
        let x = RealVector::new(data)?;
        let count = match cfg.count_rule {
            CountRule::StatThreshold => threshold_exceed_count(&x, cfg.k)?,
            CountRule::ExactTopk => exact_topk(&x, cfg.k)?.active_count(),
        };
        Ok((count as i64 - cfg.k as i64).unsigned_abs())
    };

    let gaps: Vec<u64> = if cfg.threads <= 1 {
        (0..cfg.trials).map(run_trial).collect::<Result<_>>()?
    } else {
        let chunk = cfg.trials.div_ceil(cfg.threads);
        let mut results: Vec<Result<Vec<u64>>> = Vec::new();
        std::thread::scope(|scope| {
            let mut handles = Vec::new();
            for worker in 0..cfg.threads {
                let start = worker * chunk;
                let end = ((worker + 1) * chunk).min(cfg.trials);
                if start >= end {
                    continue;
                }
                handles.push(scope.spawn(move || (start..end).map(run_trial).collect()));
            }
            for handle in handles {
                results.push(handle.join().expect("trial worker panicked"));
            }
        });
        let mut gaps = Vec::with_capacity(cfg.trials);
        for r in results {
            gaps.extend(r?);
        }
        gaps
    };

    let within = gaps.iter().filter(|&&g| (g as Real) <= bound).count();
    let mean_abs_gap_frac =
        gaps.iter().map(|&g| g as Real).sum::<Real>() / (gaps.len() as Real * cfg.d as Real);

    Ok(ValidationReport {
        schema_version: SCHEMA_VERSION,
        d: cfg.d,
        k: cfg.k,
        mu: cfg.mu,
        sigma: cfg.sigma,
        trials: cfg.trials,
        delta: cfg.delta,
        bound_abs: bound,
        satisfied_fraction: within as Real / gaps.len() as Real,
        mean_abs_gap_frac,
        max_abs_gap: gaps.iter().copied().max().unwrap_or(0),
        abs_gaps: gaps,
    })
}

// ---------------------------------------------------------------------------
// Distribution-fit diagnostics
// ---------------------------------------------------------------------------

/// Comparison of the exact k-th-largest cutoff with the Gaussian-fitted
/// threshold, plus a histogram of the input for distribution inspection.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct FitReport {
    pub schema_version: u32,
    pub d: usize,
    pub k: usize,
    /// Value of the k-th largest entry (exact top-k oracle).
    pub empirical_cutoff: Real,
    /// `theta(x, k)` from the Gaussian fit.
    pub fitted_cutoff: Real,
    /// `|empirical - fitted| / (|empirical| + 1e-12)`.
    pub relative_gap: Real,
    /// The sample standard deviation vanished (constant input); reported
    /// rather than erroring.
    pub degenerate_std: bool,
    /// Histogram counts with Freedman-Diaconis bin width.
    pub histogram: Vec<u64>,
    pub bin_lo: Real,
    pub bin_width: Real,
}

impl FitReport {
    /// One CSV row per histogram bin.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("schema_version,bin,lo,hi,count\n");
        for (i, count) in self.histogram.iter().enumerate() {
            let lo = self.bin_lo + self.bin_width * i as Real;
            let hi = lo + self.bin_width;
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                self.schema_version, i, lo, hi, count
            ));
        }
        out
    }
}

/// Compare the Gaussian-fitted threshold against the exact k-th-largest
/// cutoff of `x` and bin the entries for inspection.
pub fn gaussian_fit_report(x: &RealVector, k: usize) -> Result<FitReport> {
    let d = x.len();
    if d < 2 {
        return Err(Error::DegenerateInput {
            op: "gaussian_fit_report",
            len: d,
        });
    }
    if k == 0 || k > d - 1 {
        return Err(Error::parameter(
            "gaussian_fit_report",
            format!("k must satisfy 1 <= k <= d-1, got k={k}, d={d}"),
        ));
    }

    let exact = exact_topk(x, k)?;
    let empirical_cutoff = exact
        .iter_active()
        .map(|(_, v)| v)
        .fold(Real::INFINITY, Real::min);

    let moments = crate::topk::sample_moments(x)?;
    let degenerate_std = moments.std() == Some(0.0);
    let fitted_cutoff = topk_threshold(x, k)?;
    let relative_gap = (empirical_cutoff - fitted_cutoff).abs() / (empirical_cutoff.abs() + 1e-12);

    let (histogram, bin_lo, bin_width) = freedman_diaconis_histogram(x.as_slice());

    Ok(FitReport {
        schema_version: SCHEMA_VERSION,
        d,
        k,
        empirical_cutoff,
        fitted_cutoff,
        relative_gap,
        degenerate_std,
        histogram,
        bin_lo,
        bin_width,
    })
}

/// Histogram with Freedman-Diaconis bin width `2 IQR / n^(1/3)`, capped at
/// 1024 bins. Degenerate spreads collapse to a single bin.
fn freedman_diaconis_histogram(xs: &[Real]) -> (Vec<u64>, Real, Real) {
    let mut sorted = xs.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite entries"));
    let n = sorted.len();
    let lo = sorted[0];
    let hi = sorted[n - 1];
    let span = hi - lo;
    let iqr = percentile(&sorted, 0.75) - percentile(&sorted, 0.25);
    let width = 2.0 * iqr / (n as Real).powf(1.0 / 3.0);
    if span <= 0.0 || width <= 0.0 {
        return (vec![n as u64], lo, span.max(Real::EPSILON));
    }
    let bins = ((span / width).ceil() as usize).clamp(1, 1024);
    let width = span / bins as Real;
    let mut histogram = vec![0u64; bins];
    for &v in xs {
        let idx = (((v - lo) / width) as usize).min(bins - 1);
        histogram[idx] += 1;
    }
    (histogram, lo, width)
}

/// Linear-interpolated percentile of sorted data, `q` in [0, 1].
fn percentile(sorted: &[Real], q: Real) -> Real {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q * (n - 1) as Real;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as Real;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}
