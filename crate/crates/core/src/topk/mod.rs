//! Statistical top-k: Gaussian threshold estimation, soft/hard thresholding,
//! Huber smoothing, gradients, the exact sort-based oracle, and sharded
//! variants.
//!
//! The operator fits a Gaussian to the entries of the input via sample
//! moments and thresholds at `theta(x, k) = mean(x) + std(x) * Q(1 - k/d)`,
//! where `Q` is the standard-normal quantile. Approximately `k` of `d`
//! entries land above the threshold when the entries look Gaussian, at a
//! cost of one pass over the data instead of a sort.

mod normal;

pub use normal::{gaussian_quantile, normal_cdf, normal_pdf};

use crate::error::{Error, Result};
use crate::tensor::{FillMode, RealVector, SparseActivation};
use crate::Real;

// ---------------------------------------------------------------------------
// Moments
// ---------------------------------------------------------------------------

/// Running `(count, mean, m2)` triple where `m2` is the sum of squared
/// deviations from the mean. Supports exact pooled aggregation across shards,
/// so distributed moment collection reproduces the unsharded statistics up to
/// rounding.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    pub count: usize,
    pub mean: Real,
    pub m2: Real,
}

impl Moments {
    /// Accumulate moments over a slice with Welford's recurrence (single pass).
    pub fn of_slice(xs: &[Real]) -> Moments {
        let mut count = 0usize;
        let mut mean = 0.0 as Real;
        let mut m2 = 0.0 as Real;
        for &x in xs {
            count += 1;
            let delta = x - mean;
            mean += delta / count as Real;
            m2 += delta * (x - mean);
        }
        Moments { count, mean, m2 }
    }

    /// Pooled combination of two shards' moments.
    pub fn merge(self, other: Moments) -> Moments {
        if other.count == 0 {
            return self;
        }
        if self.count == 0 {
            return other;
        }
        let count = self.count + other.count;
        let delta = other.mean - self.mean;
        let mean = self.mean + delta * (other.count as Real / count as Real);
        let m2 = self.m2
            + other.m2
            + delta * delta * (self.count as Real * other.count as Real / count as Real);
        Moments { count, mean, m2 }
    }

    /// Sample variance with the `(count - 1)` divisor. `None` for fewer than
    /// two samples.
    pub fn variance(&self) -> Option<Real> {
        if self.count < 2 {
            None
        } else {
            Some(self.m2 / (self.count - 1) as Real)
        }
    }

    pub fn std(&self) -> Option<Real> {
        self.variance().map(|v| v.sqrt())
    }
}

/// Sample mean and standard deviation of the entries of `x`.
pub fn sample_moments(x: &RealVector) -> Result<Moments> {
    if x.len() < 2 {
        return Err(Error::DegenerateInput {
            op: "sample_moments",
            len: x.len(),
        });
    }
    Ok(Moments::of_slice(x.as_slice()))
}

/// Pool a list of per-shard moments into global moments. Reduction runs in
/// fixed left-to-right part order so multi-threaded shard processing stays
/// deterministic.
pub fn combine_moments(parts: &[Moments]) -> Result<Moments> {
    if parts.is_empty() {
        return Err(Error::EmptyInput("combine_moments"));
    }
    let pooled = parts[1..]
        .iter()
        .fold(parts[0], |acc, part| acc.merge(*part));
    if pooled.count < 2 {
        return Err(Error::DegenerateInput {
            op: "combine_moments",
            len: pooled.count,
        });
    }
    Ok(pooled)
}

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

/// Tie handling at the threshold. Entries exactly at the threshold soft-map
/// to zero in zero-fill mode and are kept (unshifted) in neg-inf mode, so a
/// constant input keeps full support and a downstream softmax stays defined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TieRule {
    #[default]
    KeepAtThreshold,
}

/// Bundled parameters for the top-k operators.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TopkParams {
    pub k: usize,
    pub delta_huber: Real,
    pub fill: FillMode,
    pub tie_rule: TieRule,
}

impl TopkParams {
    pub fn new(k: usize, delta_huber: Real, fill: FillMode) -> Result<Self> {
        if k == 0 {
            return Err(Error::parameter("TopkParams::new", "k must be positive"));
        }
        if !(delta_huber >= 0.0) {
            return Err(Error::parameter(
                "TopkParams::new",
                "delta_huber must be nonnegative",
            ));
        }
        Ok(TopkParams {
            k,
            delta_huber,
            fill,
            tie_rule: TieRule::KeepAtThreshold,
        })
    }

    /// Check `1 <= k <= d - 1` against a concrete vector length.
    pub fn validate_for_len(&self, d: usize) -> Result<()> {
        check_k_range(self.k, d, "TopkParams")
    }

    /// Apply the configured operator to `x`.
    pub fn apply(&self, x: &RealVector) -> Result<SparseActivation> {
        match self.fill {
            FillMode::Zero => stat_topk(x, self.k),
            FillMode::NegInf => stat_topk_neg_inf(x, self.k),
        }
    }
}

fn check_k_range(k: usize, d: usize, op: &'static str) -> Result<()> {
    if d < 2 {
        return Err(Error::DegenerateInput { op, len: d });
    }
    if k == 0 || k > d - 1 {
        return Err(Error::parameter(
            op,
            format!("k must satisfy 1 <= k <= d-1, got k={k}, d={d}"),
        ));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Threshold and thresholding operators
// ---------------------------------------------------------------------------

/// Gaussian-fit threshold `theta(x, k) = mean(x) + std(x) * Q(1 - k/d)`.
/// One pass over `x` plus one quantile evaluation.
pub fn topk_threshold(x: &RealVector, k: usize) -> Result<Real> {
    check_k_range(k, x.len(), "topk_threshold")?;
    let m = Moments::of_slice(x.as_slice());
    let std = m.std().expect("len >= 2 checked above");
    let p = 1.0 - k as Real / x.len() as Real;
    Ok(m.mean + std * gaussian_quantile(p)?)
}

/// Elementwise `max(x - theta, 0)`.
pub fn soft_threshold(x: &RealVector, theta: Real) -> RealVector {
    let data: Vec<Real> = x
        .iter()
        .map(|&v| {
            let shifted = v - theta;
            if shifted > 0.0 {
                shifted
            } else {
                0.0
            }
        })
        .collect();
    RealVector::new(data).expect("soft threshold of finite input is finite")
}

/// Statistical top-k with zero fill: soft-threshold at `theta(x, k)`.
///
/// `active[i]` is `x[i] > theta`; entries exactly at the threshold carry
/// value 0 and are inactive, consistent with their soft-thresholded value.
pub fn stat_topk(x: &RealVector, k: usize) -> Result<SparseActivation> {
    let theta = topk_threshold(x, k)?;
    let values = soft_threshold(x, theta);
    let active: Vec<bool> = x.iter().map(|&v| v > theta).collect();
    SparseActivation::zero_fill(values, active, k)
}

/// Statistical top-k with `-inf` fill for attention logits: entries at or
/// above `theta(x, k)` keep their original (unshifted) values, the rest
/// become `-inf`. Keeping values unshifted is immaterial to a downstream
/// softmax, which is shift invariant.
///
/// The `>=` rule keeps full support on constant input. If no entry clears
/// the threshold (possible for heavy-tailed input where the Gaussian fit
/// overshoots the maximum), the maximum entry is kept so the output always
/// has support.
pub fn stat_topk_neg_inf(x: &RealVector, k: usize) -> Result<SparseActivation> {
    let theta = topk_threshold(x, k)?;
    let mut active: Vec<bool> = x.iter().map(|&v| v >= theta).collect();
    if !active.iter().any(|a| *a) {
        // lowest index among maximal entries, matching exact_topk's tie rule
        let mut argmax = 0;
        for (i, &v) in x.iter().enumerate() {
            if v > x[argmax] {
                argmax = i;
            }
        }
        active[argmax] = true;
    }
    let values: Vec<Real> = x
        .iter()
        .zip(&active)
        .map(|(&v, &a)| if a { v } else { Real::NEG_INFINITY })
        .collect();
    let values = RealVector::from_logits(values).expect("finite or -inf by construction");
    SparseActivation::neg_inf_fill(values, active, k)
}

/// Huber-smoothed statistical top-k: elementwise `huber(y; delta) / delta`
/// on `y = stat_topk(x, k)`. Continuously differentiable for `delta > 0` and
/// converges to `stat_topk` as `delta -> 0`; callers wanting `delta = 0`
/// should use [`stat_topk`] directly.
pub fn huber_stat_topk(x: &RealVector, k: usize, delta: Real) -> Result<RealVector> {
    if !(delta > 0.0) {
        return Err(Error::parameter(
            "huber_stat_topk",
            format!("delta must be positive, got {delta}; use stat_topk for delta = 0"),
        ));
    }
    let sparse = stat_topk(x, k)?;
    let data: Vec<Real> = sparse
        .values()
        .iter()
        .map(|&y| huber(y, delta) / delta)
        .collect();
    RealVector::new(data)
}

/// Huber function: `x^2/2` inside `|x| < delta`, `delta * (|x| - delta/2)`
/// outside.
pub fn huber(x: Real, delta: Real) -> Real {
    let a = x.abs();
    if a < delta {
        0.5 * x * x
    } else {
        delta * (a - 0.5 * delta)
    }
}

// ---------------------------------------------------------------------------
// Gradients
// ---------------------------------------------------------------------------

/// Whether the vector-Jacobian product propagates through the threshold's
/// dependence on `x`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GradientMode {
    /// Propagate through `theta(x, k)` via the mean and standard deviation.
    #[default]
    Full,
    /// Treat the threshold as a constant (stop-gradient ablation).
    StopThreshold,
}

/// Result of [`stat_topk_vjp`]. `at_kink` is raised when some entry of `x`
/// coincides exactly with the threshold; the gradient there follows the
/// subgradient convention that `max(x - theta, 0)` has derivative 0 at the
/// kink.
#[derive(Debug, Clone, PartialEq)]
pub struct StatTopkVjp {
    pub grad: RealVector,
    pub at_kink: bool,
}

/// Vector-Jacobian product of [`stat_topk`] at `x` against `cotangent`.
///
/// For active entries `y_i = x_i - theta(x)`, so the pullback of `u` is
/// `u_j * [x_j > theta] - (sum of active u) * d(theta)/d(x_j)` with
/// `d(theta)/d(x_j) = 1/d + Q(1 - k/d) * (x_j - mean) / ((d-1) * std)`.
pub fn stat_topk_vjp(
    x: &RealVector,
    k: usize,
    cotangent: &RealVector,
    mode: GradientMode,
) -> Result<StatTopkVjp> {
    if cotangent.len() != x.len() {
        return Err(Error::ShapeMismatch {
            op: "stat_topk_vjp",
            expected: x.len(),
            got: cotangent.len(),
        });
    }
    let d = x.len();
    let theta = topk_threshold(x, k)?;
    let moments = Moments::of_slice(x.as_slice());
    let std = moments.std().expect("len >= 2 checked by topk_threshold");

    let at_kink = std == 0.0 || x.iter().any(|&v| v == theta);

    let mut grad = vec![0.0 as Real; d];
    let mut active_cotangent_sum = 0.0 as Real;
    for (g, (&v, &u)) in grad.iter_mut().zip(x.iter().zip(cotangent.iter())) {
        if v > theta {
            *g = u;
            active_cotangent_sum += u;
        }
    }

    if mode == GradientMode::Full && active_cotangent_sum != 0.0 && std > 0.0 {
        let q = gaussian_quantile(1.0 - k as Real / d as Real)?;
        for (g, &v) in grad.iter_mut().zip(x.iter()) {
            let dtheta = 1.0 / d as Real + q * (v - moments.mean) / ((d - 1) as Real * std);
            *g -= active_cotangent_sum * dtheta;
        }
    }

    Ok(StatTopkVjp {
        grad: RealVector::new(grad)?,
        at_kink,
    })
}

// ---------------------------------------------------------------------------
// Exact oracle
// ---------------------------------------------------------------------------

/// Exact sort-based top-k: keeps the `k` largest entries (unshifted), with
/// ties at the k-th value broken by lowest index. Oracle against which the
/// statistical operator's selection accuracy is measured.
pub fn exact_topk(x: &RealVector, k: usize) -> Result<SparseActivation> {
    let d = x.len();
    if k == 0 || k > d {
        return Err(Error::parameter(
            "exact_topk",
            format!("k must satisfy 1 <= k <= d, got k={k}, d={d}"),
        ));
    }
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| {
        x[b].partial_cmp(&x[a])
            .expect("finite entries")
            .then(a.cmp(&b))
    });
    let mut active = vec![false; d];
    for &i in &order[..k] {
        active[i] = true;
    }
    let values: Vec<Real> = x
        .iter()
        .zip(&active)
        .map(|(&v, &a)| if a { v } else { 0.0 })
        .collect();
    SparseActivation::zero_fill(RealVector::new(values)?, active, k)
}

// ---------------------------------------------------------------------------
// Sharded variants
// ---------------------------------------------------------------------------

/// Global sharded statistical top-k: shards exchange `(count, mean, m2)`,
/// pool them into global moments, and each applies the soft threshold with
/// the single global theta. Output concatenation equals the unsharded
/// operator up to rounding.
pub fn sharded_stat_topk_global(shards: &[RealVector], k: usize) -> Result<Vec<SparseActivation>> {
    if shards.is_empty() {
        return Err(Error::EmptyInput("sharded_stat_topk_global"));
    }
    let parts: Vec<Moments> = shards
        .iter()
        .map(|s| Moments::of_slice(s.as_slice()))
        .collect();
    let pooled = combine_moments(&parts)?;
    let total = pooled.count;
    check_k_range(k, total, "sharded_stat_topk_global")?;
    let std = pooled.std().expect("total >= 2 checked above");
    let theta = pooled.mean + std * gaussian_quantile(1.0 - k as Real / total as Real)?;

    shards
        .iter()
        .map(|shard| {
            let values = soft_threshold(shard, theta);
            let active: Vec<bool> = shard.iter().map(|&v| v > theta).collect();
            SparseActivation::zero_fill(values, active, k)
        })
        .collect()
}

/// Local sharded statistical top-k: each shard independently applies
/// `stat_topk` with `k' = ceil(k / m)` and no cross-shard communication.
/// `k'` is recorded as each output's `nominal_k`. Cheaper than the global
/// variant but diverges from it when the shards are not exchangeable.
pub fn sharded_stat_topk_local(shards: &[RealVector], k: usize) -> Result<Vec<SparseActivation>> {
    if shards.is_empty() {
        return Err(Error::EmptyInput("sharded_stat_topk_local"));
    }
    if k == 0 {
        return Err(Error::parameter(
            "sharded_stat_topk_local",
            "k must be positive",
        ));
    }
    let m = shards.len();
    let k_local = k.div_ceil(m);
    for shard in shards {
        if shard.len() < 2 || k_local > shard.len() - 1 {
            return Err(Error::parameter(
                "sharded_stat_topk_local",
                format!(
                    "per-shard k'={k_local} out of range for shard length {}",
                    shard.len()
                ),
            ));
        }
    }
    shards
        .iter()
        .map(|shard| stat_topk(shard, k_local))
        .collect()
}

// Tolerances throughout assume the default 64-bit scalar.
#[cfg(all(test, not(feature = "scalar32")))]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};
    use rand_distr::StandardNormal;

    fn vec_of(data: &[Real]) -> RealVector {
        RealVector::new(data.to_vec()).unwrap()
    }

    fn gaussian_vec(rng: &mut StdRng, d: usize) -> RealVector {
        RealVector::new((0..d).map(|_| rng.sample(StandardNormal)).collect()).unwrap()
    }

    // -- moments --

    #[test]
    fn moments_hand_cases() {
        let m = sample_moments(&vec_of(&[1.0, 2.0, 3.0, 4.0])).unwrap();
        assert!((m.mean - 2.5).abs() < 1e-15);
        // std = sqrt(5/3)
        assert!((m.std().unwrap() - 1.2909944487358056).abs() < 1e-12);

        let c = sample_moments(&vec_of(&[3.25; 4])).unwrap();
        assert_eq!(c.mean, 3.25);
        assert_eq!(c.std().unwrap(), 0.0);

        let a = 1.75;
        let s = sample_moments(&vec_of(&[-a, a])).unwrap();
        assert!(s.mean.abs() < 1e-15);
        assert!((s.std().unwrap() - a * (2.0 as Real).sqrt()).abs() < 1e-12);

        assert!(matches!(
            sample_moments(&vec_of(&[1.0])),
            Err(Error::DegenerateInput { .. })
        ));
    }

    #[test]
    fn combine_matches_concatenated_recomputation() {
        let a = Moments::of_slice(&[1.0, 2.0]);
        let b = Moments::of_slice(&[3.0, 4.0]);
        let pooled = combine_moments(&[a, b]).unwrap();
        let whole = sample_moments(&vec_of(&[1.0, 2.0, 3.0, 4.0])).unwrap();
        assert!((pooled.mean - whole.mean).abs() < 1e-12);
        assert!((pooled.m2 - whole.m2).abs() < 1e-12);
        assert_eq!(pooled.count, 4);
    }

    #[test]
    fn combine_single_part_is_identity() {
        let a = Moments::of_slice(&[5.0, 7.0, 9.0]);
        assert_eq!(combine_moments(&[a]).unwrap(), a);
    }

    #[test]
    fn combine_constant_parts() {
        let a = Moments::of_slice(&[0.0, 0.0]);
        let b = Moments::of_slice(&[2.0, 2.0]);
        let pooled = combine_moments(&[a, b]).unwrap();
        assert!((pooled.mean - 1.0).abs() < 1e-15);
        assert!((pooled.m2 - 4.0).abs() < 1e-15);
        assert!((pooled.variance().unwrap() - 4.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn combine_rejects_empty_and_degenerate() {
        assert!(matches!(combine_moments(&[]), Err(Error::EmptyInput(_))));
        let single = Moments::of_slice(&[1.0]);
        assert!(combine_moments(&[single]).is_err());
    }

    #[test]
    fn combine_is_order_insensitive_up_to_rounding() {
        let mut rng = StdRng::seed_from_u64(3);
        let parts: Vec<Moments> = (0..6)
            .map(|_| {
                let len = rng.random_range(1..50);
                let data: Vec<Real> = (0..len).map(|_| rng.random_range(-4.0..4.0)).collect();
                Moments::of_slice(&data)
            })
            .collect();
        let forward = combine_moments(&parts).unwrap();
        let mut reversed = parts.clone();
        reversed.reverse();
        let backward = combine_moments(&reversed).unwrap();
        assert_eq!(forward.count, backward.count);
        assert!((forward.mean - backward.mean).abs() < 1e-12);
        assert!((forward.m2 - backward.m2).abs() < 1e-9);
    }

    // -- params --

    #[test]
    fn topk_params_validate_and_dispatch() {
        assert!(TopkParams::new(0, 0.0, FillMode::Zero).is_err());
        assert!(TopkParams::new(3, -1.0, FillMode::Zero).is_err());

        let params = TopkParams::new(2, 0.0, FillMode::Zero).unwrap();
        assert!(params.validate_for_len(4).is_ok());
        assert!(params.validate_for_len(2).is_err());
        let x = vec_of(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(params.apply(&x).unwrap(), stat_topk(&x, 2).unwrap());

        let neg = TopkParams::new(2, 0.0, FillMode::NegInf).unwrap();
        assert_eq!(neg.apply(&x).unwrap(), stat_topk_neg_inf(&x, 2).unwrap());
    }

    // -- threshold --

    #[test]
    fn threshold_hand_case_is_mean() {
        // k = d/2 makes Q(0.5) = 0, so theta = mean = 2.5
        let theta = topk_threshold(&vec_of(&[1.0, 2.0, 3.0, 4.0]), 2).unwrap();
        assert!((theta - 2.5).abs() < 1e-12);
    }

    #[test]
    fn threshold_of_constant_vector_is_the_constant() {
        for k in [1, 2, 3] {
            let theta = topk_threshold(&vec_of(&[7.5; 4]), k).unwrap();
            assert_eq!(theta, 7.5);
        }
    }

    #[test]
    fn threshold_converges_to_quantile_for_large_gaussian_input() {
        // 13824 iid N(0,1) draws, k = 1106: theta ~ Q(0.92) = 1.4051 with
        // O(d^{-1/2}) fluctuation.
        let mut rng = StdRng::seed_from_u64(42);
        let x = gaussian_vec(&mut rng, 13824);
        let theta = topk_threshold(&x, 1106).unwrap();
        assert!(
            (theta - 1.4051).abs() < 0.05,
            "theta={theta} too far from Q(0.92)"
        );
    }

    #[test]
    fn threshold_k_range_errors() {
        let x = vec_of(&[1.0, 2.0, 3.0, 4.0]);
        assert!(topk_threshold(&x, 0).is_err());
        assert!(topk_threshold(&x, 4).is_err());
        assert!(topk_threshold(&vec_of(&[1.0]), 1).is_err());
    }

    // -- soft threshold --

    #[test]
    fn soft_threshold_cases() {
        assert_eq!(
            soft_threshold(&vec_of(&[3.0, -1.0, 0.5]), 1.0).as_slice(),
            &[2.0, 0.0, 0.0]
        );
        // zero threshold is ReLU
        assert_eq!(
            soft_threshold(&vec_of(&[-2.0, 0.0, 2.0]), 0.0).as_slice(),
            &[0.0, 0.0, 2.0]
        );
        assert_eq!(
            soft_threshold(&vec_of(&[1.0, 2.0]), 5.0).as_slice(),
            &[0.0, 0.0]
        );
    }

    // -- stat_topk --

    #[test]
    fn stat_topk_hand_case() {
        let out = stat_topk(&vec_of(&[1.0, 2.0, 3.0, 4.0]), 2).unwrap();
        let vals = out.values().as_slice();
        assert!((vals[0]).abs() < 1e-12 && (vals[1]).abs() < 1e-12);
        assert!((vals[2] - 0.5).abs() < 1e-12);
        assert!((vals[3] - 1.5).abs() < 1e-12);
        assert_eq!(out.active(), &[false, false, true, true]);
        assert_eq!(out.nominal_k(), 2);
    }

    #[test]
    fn stat_topk_constant_vector_is_all_zero() {
        let out = stat_topk(&vec_of(&[2.0; 8]), 3).unwrap();
        assert_eq!(out.active_count(), 0);
        assert!(out.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn stat_topk_count_concentrates_for_gaussian_input() {
        let (d, k, delta) = (13824usize, 1106usize, 0.01 as Real);
        let bound = 4.0
            * ((d as Real) * (6.0 / delta).ln()).sqrt()
            * (1.0
                + (-2.0
                    * (k as Real / d as Real)
                        .min(1.0 - k as Real / d as Real)
                        .ln())
                .sqrt());
        let mut rng = StdRng::seed_from_u64(7);
        for _ in 0..20 {
            let x = gaussian_vec(&mut rng, d);
            let count = stat_topk(&x, k).unwrap().active_count();
            let gap = (count as Real - k as Real).abs();
            assert!(gap <= bound, "count={count} gap={gap} bound={bound}");
        }
    }

    #[test]
    fn stat_topk_selection_is_scale_shift_equivariant() {
        let mut rng = StdRng::seed_from_u64(19);
        for &(a, b) in &[(2.0 as Real, 1.0 as Real), (0.5, -3.0), (4.0, 10.0)] {
            let x = gaussian_vec(&mut rng, 256);
            let base = stat_topk(&x, 20).unwrap();
            let scaled = RealVector::new(x.iter().map(|&v| a * v + b).collect()).unwrap();
            let out = stat_topk(&scaled, 20).unwrap();
            assert_eq!(base.active(), out.active(), "a={a} b={b}");
        }
    }

    // -- stat_topk_neg_inf --

    #[test]
    fn neg_inf_hand_case() {
        let out = stat_topk_neg_inf(&vec_of(&[1.0, 2.0, 3.0, 4.0]), 2).unwrap();
        let vals = out.values().as_slice();
        assert_eq!(vals[0], Real::NEG_INFINITY);
        assert_eq!(vals[1], Real::NEG_INFINITY);
        assert_eq!(vals[2], 3.0);
        assert_eq!(vals[3], 4.0);
    }

    #[test]
    fn neg_inf_constant_vector_keeps_everything() {
        let out = stat_topk_neg_inf(&vec_of(&[5.0; 4]), 2).unwrap();
        assert_eq!(out.active_count(), 4);
        assert!(out.values().iter().all(|&v| v == 5.0));
    }

    #[test]
    fn neg_inf_fallback_keeps_the_maximum() {
        // One large negative outlier drags the mean down and inflates the
        // std enough that theta overshoots the maximum: nothing clears the
        // >= rule, so the fallback must keep the argmax.
        let mut data = vec![0.0 as Real; 99];
        data.push(-100.0);
        let x = RealVector::new(data).unwrap();
        let theta = topk_threshold(&x, 1).unwrap();
        let max = x.iter().cloned().fold(Real::NEG_INFINITY, Real::max);
        assert!(theta > max, "construction should place theta above max");
        let out = stat_topk_neg_inf(&x, 1).unwrap();
        assert_eq!(out.active_count(), 1);
        assert!(out.is_active(0));
    }

    // -- huber --

    #[test]
    fn huber_scalar_branches() {
        assert!((huber(0.5, 1.0) / 1.0 - 0.125).abs() < 1e-15);
        assert!((huber(2.0, 1.0) / 1.0 - 1.5).abs() < 1e-15);
    }

    #[test]
    fn huber_stat_topk_converges_to_stat_topk() {
        let mut rng = StdRng::seed_from_u64(5);
        let x = gaussian_vec(&mut rng, 64);
        let sharp = stat_topk(&x, 8).unwrap();
        let smooth = huber_stat_topk(&x, 8, 1e-8).unwrap();
        for (s, h) in sharp.values().iter().zip(smooth.iter()) {
            assert!((s - h).abs() < 1e-7, "sharp={s} smooth={h}");
        }
    }

    #[test]
    fn huber_rejects_nonpositive_delta() {
        let x = vec_of(&[1.0, 2.0, 3.0]);
        assert!(huber_stat_topk(&x, 1, 0.0).is_err());
        assert!(huber_stat_topk(&x, 1, -0.5).is_err());
    }

    // -- vjp --

    #[test]
    fn vjp_zero_when_support_is_empty() {
        // constant input: theta = mean, nothing strictly above, so the
        // output is locally pinned at zero along the active branch
        let x = vec_of(&[1.0; 8]);
        let u = vec_of(&[1.0; 8]);
        let vjp = stat_topk_vjp(&x, 2, &u, GradientMode::Full).unwrap();
        assert!(vjp.grad.iter().all(|&g| g == 0.0));
        assert!(vjp.at_kink);
    }

    #[test]
    fn vjp_is_linear_in_the_cotangent() {
        let mut rng = StdRng::seed_from_u64(23);
        let x = gaussian_vec(&mut rng, 32);
        let u = gaussian_vec(&mut rng, 32);
        let v = gaussian_vec(&mut rng, 32);
        let (a, b) = (1.75 as Real, -0.5 as Real);
        let combo = RealVector::new(
            u.iter()
                .zip(v.iter())
                .map(|(&p, &q)| a * p + b * q)
                .collect(),
        )
        .unwrap();
        let vjp_combo = stat_topk_vjp(&x, 5, &combo, GradientMode::Full).unwrap();
        let vjp_u = stat_topk_vjp(&x, 5, &u, GradientMode::Full).unwrap();
        let vjp_v = stat_topk_vjp(&x, 5, &v, GradientMode::Full).unwrap();
        for i in 0..32 {
            let expect = a * vjp_u.grad[i] + b * vjp_v.grad[i];
            assert!((vjp_combo.grad[i] - expect).abs() < 1e-10);
        }
    }

    #[test]
    fn vjp_matches_central_finite_differences() {
        let mut rng = StdRng::seed_from_u64(31);
        let (d, k) = (64usize, 8usize);
        let h = 1e-5 as Real;
        for _ in 0..10 {
            let x = kink_free_instance(&mut rng, d, k, 1e-3);
            let u = gaussian_vec(&mut rng, d);
            let vjp = stat_topk_vjp(&x, k, &u, GradientMode::Full).unwrap();
            assert!(!vjp.at_kink);

            let f = |xs: &[Real]| -> Real {
                let xv = RealVector::new(xs.to_vec()).unwrap();
                let y = stat_topk(&xv, k).unwrap();
                y.values().iter().zip(u.iter()).map(|(&a, &b)| a * b).sum()
            };
            let mut fd = vec![0.0 as Real; d];
            let mut xs = x.as_slice().to_vec();
            for j in 0..d {
                let orig = xs[j];
                xs[j] = orig + h;
                let up = f(&xs);
                xs[j] = orig - h;
                let down = f(&xs);
                xs[j] = orig;
                fd[j] = (up - down) / (2.0 * h);
            }
            let num: Real = fd
                .iter()
                .zip(vjp.grad.iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<Real>()
                .sqrt();
            let den: Real = fd.iter().map(|a| a * a).sum::<Real>().sqrt();
            assert!(num / den <= 1e-4, "relative error {}", num / den);
        }
    }

    #[test]
    fn vjp_stop_threshold_mode_is_a_pure_mask() {
        let mut rng = StdRng::seed_from_u64(37);
        let x = gaussian_vec(&mut rng, 32);
        let u = gaussian_vec(&mut rng, 32);
        let theta = topk_threshold(&x, 4).unwrap();
        let vjp = stat_topk_vjp(&x, 4, &u, GradientMode::StopThreshold).unwrap();
        for i in 0..32 {
            let expect = if x[i] > theta { u[i] } else { 0.0 };
            assert_eq!(vjp.grad[i], expect);
        }
    }

    /// Draw Gaussian instances until every entry clears the threshold by the
    /// given margin, so finite differences never step across the kink.
    pub(super) fn kink_free_instance(
        rng: &mut StdRng,
        d: usize,
        k: usize,
        margin: Real,
    ) -> RealVector {
        loop {
            let x = RealVector::new(
                (0..d)
                    .map(|_| rng.sample::<Real, _>(StandardNormal))
                    .collect(),
            )
            .unwrap();
            let theta = topk_threshold(&x, k).unwrap();
            if x.iter().all(|&v| (v - theta).abs() > margin) {
                return x;
            }
        }
    }

    // -- exact oracle --

    #[test]
    fn exact_topk_cases() {
        let out = exact_topk(&vec_of(&[1.0, 2.0, 3.0, 4.0]), 2).unwrap();
        assert_eq!(out.active(), &[false, false, true, true]);

        let all = exact_topk(&vec_of(&[1.0, 2.0, 3.0]), 3).unwrap();
        assert_eq!(all.active_count(), 3);

        // ties at the k-th value break by lowest index
        let tie = exact_topk(&vec_of(&[5.0, 5.0, 1.0]), 1).unwrap();
        assert_eq!(tie.active(), &[true, false, false]);

        assert!(exact_topk(&vec_of(&[1.0, 2.0]), 0).is_err());
        assert!(exact_topk(&vec_of(&[1.0, 2.0]), 3).is_err());
    }

    // -- variational form --

    #[test]
    fn soft_threshold_minimizes_the_variational_objective() {
        // coordinate-wise argmin over z >= 0 of theta*z + (x-z)^2/2,
        // located by dense grid search with step 1e-4
        let mut rng = StdRng::seed_from_u64(41);
        for _ in 0..5 {
            let x = gaussian_vec(&mut rng, 6);
            let theta: Real = rng.random_range(0.05..1.5);
            let out = soft_threshold(&x, theta);
            for i in 0..x.len() {
                let mut best_z = 0.0 as Real;
                let mut best = theta * best_z + 0.5 * (x[i] - best_z) * (x[i] - best_z);
                let upper = (x[i].max(0.0) + 1.0) / 1e-4;
                for step in 0..=(upper as usize) {
                    let z = step as Real * 1e-4;
                    let obj = theta * z + 0.5 * (x[i] - z) * (x[i] - z);
                    if obj < best {
                        best = obj;
                        best_z = z;
                    }
                }
                assert!(
                    (best_z - out[i]).abs() <= 1e-4,
                    "grid minimizer {best_z} vs soft threshold {}",
                    out[i]
                );
            }
        }
    }

    // -- sharded --

    #[test]
    fn sharded_global_single_shard_matches_unsharded_exactly() {
        let mut rng = StdRng::seed_from_u64(43);
        let x = gaussian_vec(&mut rng, 64);
        let sharded = sharded_stat_topk_global(std::slice::from_ref(&x), 9).unwrap();
        let whole = stat_topk(&x, 9).unwrap();
        assert_eq!(sharded.len(), 1);
        assert_eq!(sharded[0], whole);
    }

    #[test]
    fn sharded_global_hand_case() {
        let shards = [vec_of(&[1.0, 2.0]), vec_of(&[3.0, 4.0])];
        let out = sharded_stat_topk_global(&shards, 2).unwrap();
        let concat: Vec<Real> = out
            .iter()
            .flat_map(|s| s.values().iter().copied())
            .collect();
        let whole = stat_topk(&vec_of(&[1.0, 2.0, 3.0, 4.0]), 2).unwrap();
        for (a, b) in concat.iter().zip(whole.values().iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn sharded_global_matches_unsharded_on_random_shardings() {
        let mut rng = StdRng::seed_from_u64(47);
        for _ in 0..25 {
            let d = rng.random_range(8..200);
            let k = rng.random_range(1..d - 1);
            let x = gaussian_vec(&mut rng, d);
            // random contiguous sharding
            let m = rng.random_range(1..6.min(d));
            let mut cuts: Vec<usize> = (0..m - 1).map(|_| rng.random_range(1..d)).collect();
            cuts.push(0);
            cuts.push(d);
            cuts.sort_unstable();
            cuts.dedup();
            let shards: Vec<RealVector> = cuts
                .windows(2)
                .map(|w| RealVector::new(x.as_slice()[w[0]..w[1]].to_vec()).unwrap())
                .collect();
            let sharded = sharded_stat_topk_global(&shards, k).unwrap();
            let whole = stat_topk(&x, k).unwrap();
            let concat: Vec<Real> = sharded
                .iter()
                .flat_map(|s| s.values().iter().copied())
                .collect();
            for (a, b) in concat.iter().zip(whole.values().iter()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sharded_global_is_invariant_to_shard_permutation() {
        // theta depends only on the pooled moments, so shard order
        // only moves where each block's output lands
        let mut rng = StdRng::seed_from_u64(61);
        let a = gaussian_vec(&mut rng, 24);
        let b = gaussian_vec(&mut rng, 40);
        let c = gaussian_vec(&mut rng, 8);
        let fwd = sharded_stat_topk_global(&[a.clone(), b.clone(), c.clone()], 11).unwrap();
        let rev = sharded_stat_topk_global(&[c, b, a], 11).unwrap();
        for (x, y) in [(&fwd[0], &rev[2]), (&fwd[1], &rev[1]), (&fwd[2], &rev[0])] {
            assert_eq!(x.active(), y.active());
            for (p, q) in x.values().iter().zip(y.values().iter()) {
                assert!((p - q).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sharded_local_single_shard_matches_unsharded() {
        let mut rng = StdRng::seed_from_u64(53);
        let x = gaussian_vec(&mut rng, 32);
        let out = sharded_stat_topk_local(std::slice::from_ref(&x), 5).unwrap();
        assert_eq!(out[0], stat_topk(&x, 5).unwrap());
    }

    #[test]
    fn sharded_local_records_ceil_k_per_shard() {
        let mut rng = StdRng::seed_from_u64(59);
        let shards: Vec<RealVector> = (0..4).map(|_| gaussian_vec(&mut rng, 600)).collect();
        let out = sharded_stat_topk_local(&shards, 1106).unwrap();
        for s in &out {
            assert_eq!(s.nominal_k(), 277); // ceil(1106 / 4)
        }
        let total: usize = out.iter().map(|s| s.active_count()).sum();
        // four independent concentrations around k' = 277
        assert!(
            (total as isize - 1108).unsigned_abs() < 300,
            "total={total}"
        );
    }

    #[test]
    fn sharded_local_diverges_on_adversarial_sharding() {
        // all large values on shard 0: the local variant is forced to keep
        // an entry of the small shard, the global variant is not
        let shards = [
            vec_of(&[10.0, 11.0, 12.0, 13.0]),
            vec_of(&[0.0, 0.1, 0.2, 0.3]),
        ];
        let local = sharded_stat_topk_local(&shards, 2).unwrap();
        let global = sharded_stat_topk_global(&shards, 2).unwrap();
        assert!(local[1].active_count() > 0);
        assert_eq!(global[1].active_count(), 0);
        let local_active: Vec<&[bool]> = local.iter().map(|s| s.active()).collect();
        let global_active: Vec<&[bool]> = global.iter().map(|s| s.active()).collect();
        assert_ne!(local_active, global_active);
    }

    #[test]
    fn sharded_local_rejects_out_of_range_k() {
        let shards = [vec_of(&[1.0, 2.0]), vec_of(&[3.0, 4.0])];
        assert!(sharded_stat_topk_local(&shards, 4).is_err());
    }
}
