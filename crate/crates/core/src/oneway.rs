//! One-Way and One-Way+ protocols: each node sends a uniformly quantized
//! observation once, the leader reconstructs cell midpoints and thresholds
//! the signed sum. Errors can only occur in cells straddling the separating
//! hyperplane; both the straddle probability and the exact error probability
//! are computed in closed combinatorial form, alongside Monte Carlo
//! estimates and a rate planner.
//!
//! Internally everything is analyzed in the sign-folded domain: replacing
//! each negatively weighted input by its reflection makes all weights
//! positive and shifts the threshold to `a + (n-m)`, without changing the
//! joint distribution or the decision rule's outcome.

use num_bigint::BigInt;
use num_traits::{Signed, ToPrimitive, Zero};
use rayon::prelude::*;
use serde::Serialize;

use crate::approx::erf;
use crate::error::{Error, Result};
use crate::model::{ClassLabel, DyadicRational, ProblemConfig, UnitFixed64};
use crate::montecarlo::{wilson_interval, SeedSpec};

/// State-vector cap for the dense bin-sum convolution; larger problems use
/// the exact inclusion-exclusion counting route instead.
const DP_STATE_LIMIT: usize = 1 << 22;

/// Exact error probabilities are limited to small networks: the alternating
/// Irwin-Hall sum loses all precision beyond this.
pub const PE_EXACT_MAX_NODES: u32 = 30;

/// Uniform quantizer with `bins` cells of width `1/bins` on `[0,1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QuantizerSpec {
    pub bins: u64,
    pub delta: f64,
    pub per_node_bits: f64,
}

impl QuantizerSpec {
    pub fn new(bins: u64) -> Self {
        QuantizerSpec {
            bins,
            delta: 1.0 / bins as f64,
            per_node_bits: (bins as f64).log2(),
        }
    }
}

/// Whether the leader's label is broadcast back to the nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OneWayVariant {
    OneWay,
    OneWayPlus,
}

/// Monte Carlo error-probability estimate with a Wilson 95% interval.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct PeEstimate {
    pub errors: u64,
    pub reps: u64,
    pub p: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

/// Full evaluation of a one-way protocol instance.
///
/// Whether reported rates should charge `log2(bins)` or `ceil(log2(bins))`
/// bits per node is a reporting convention; both are carried.
#[derive(Debug, Clone, Serialize)]
pub struct OneWayResult {
    pub config: ProblemConfig,
    pub quantizer: QuantizerSpec,
    pub variant: OneWayVariant,
    /// Rate with fractional per-node bits `log2(bins)`.
    pub sum_rate_bits: f64,
    /// Rate with integer per-node bits `ceil(log2(bins))`.
    pub sum_rate_bits_ceil: f64,
    /// Exact error probability; absent beyond the supported exact regime.
    pub pe_exact: Option<f64>,
    /// Monte Carlo estimate; absent when no repetitions were requested.
    pub pe_mc: Option<PeEstimate>,
    /// Probability that the input's cell straddles the separating
    /// hyperplane; errors are confined to such cells.
    pub boundary_prob: f64,
}

/// Planner output: the chosen resolution, the analytic floor, and the
/// evaluated protocol.
#[derive(Debug, Clone, Serialize)]
pub struct RatePlan {
    pub bins: u64,
    /// Analytic lower bound on the One-Way+ sum rate at the target error.
    pub eq13_floor_bits: f64,
    pub result: OneWayResult,
}

/// Bin index `floor(x * bins)` in `{0, ..., bins-1}`, exact.
pub fn quantize(x: UnitFixed64, bins: u64) -> u64 {
    ((x.raw() as u128 * bins as u128) >> 64) as u64
}

/// Leader decision from midpoint reconstruction: 1 iff
/// `sum_i w_i (l_i + 1/2)/bins >= a`, in exact integer arithmetic
/// (ties resolve to 1, mirroring the classifier's boundary rule).
pub fn decide_label(config: &ProblemConfig, bin_indices: &[u64], bins: u64) -> Result<ClassLabel> {
    if bin_indices.len() != config.n() as usize {
        return Err(Error::LengthMismatch { expected: config.n() as usize, got: bin_indices.len() });
    }
    // signed sum of (2 l_i + 1), compared against a * 2 * bins
    let mut num: i128 = 0;
    for (i, &l) in bin_indices.iter().enumerate() {
        debug_assert!(l < bins);
        num += config.weight(i) as i128 * (2 * l as i128 + 1);
    }
    let a = config.threshold();
    let lhs = num
        .checked_shl(a.exponent())
        .expect("decision comparison overflow");
    let rhs = a.numerator() * 2 * bins as i128;
    Ok(ClassLabel::from(lhs >= rhs))
}

/// Threshold in the sign-folded all-positive domain: `a + (n - m)`.
pub fn folded_threshold(config: &ProblemConfig) -> DyadicRational {
    config
        .threshold()
        .add(&DyadicRational::from_int((config.n() - config.m()) as i128))
}

/// pmf of the sum of `n` iid uniform bin indices, by repeated convolution
/// with fresh prefix sums each step (values are probabilities).
fn bin_sum_pmf(n: u32, bins: u64) -> Result<Vec<f64>> {
    let states = n as usize * (bins as usize - 1) + 1;
    if bins == 0 {
        return Err(Error::Domain("bins must be >= 1".into()));
    }
    if states > DP_STATE_LIMIT {
        return Err(Error::Unsupported(format!(
            "bin-sum pmf needs {states} states, over the {DP_STATE_LIMIT} cap"
        )));
    }
    let m = bins as usize;
    let inv = 1.0 / bins as f64;
    let mut pmf = vec![1.0f64];
    let mut prefix: Vec<f64> = Vec::new();
    for _ in 0..n {
        let old_len = pmf.len();
        prefix.clear();
        prefix.reserve(old_len + 1);
        prefix.push(0.0);
        // compensated running sum keeps the prefix array accurate enough to
        // hold the 1e-12 normalization even at millions of states
        let mut acc = 0.0f64;
        let mut comp = 0.0f64;
        for &p in &pmf {
            let y = p - comp;
            let t = acc + y;
            comp = (t - acc) - y;
            acc = t;
            prefix.push(acc - comp);
        }
        let new_len = old_len + m - 1;
        let mut next = vec![0.0f64; new_len];
        for (s, slot) in next.iter_mut().enumerate() {
            let hi = prefix[(s + 1).min(old_len)];
            let lo = if s >= m { prefix[s + 1 - m] } else { 0.0 };
            *slot = (hi - lo) * inv;
        }
        pmf = next;
    }
    let total: f64 = {
        let mut acc = 0.0f64;
        let mut comp = 0.0f64;
        for &p in &pmf {
            let y = p - comp;
            let t = acc + y;
            comp = (t - acc) - y;
            acc = t;
        }
        acc - comp
    };
    if (total - 1.0).abs() > 1e-12 {
        return Err(Error::Numerical(format!("bin-sum pmf drifted from 1 by {:e}", total - 1.0)));
    }
    Ok(pmf)
}

/// Number of `(l_1..l_n)` with `0 <= l_i < bins` and `sum l_i <= s`, exact.
fn count_sum_at_most(n: u32, bins: u64, s: i128) -> BigInt {
    if s < 0 {
        return BigInt::zero();
    }
    let max_sum = n as i128 * (bins as i128 - 1);
    if s >= max_sum {
        return BigInt::from(bins).pow(n);
    }
    // inclusion-exclusion over how many coordinates overflow their range
    let mut total = BigInt::zero();
    let mut n_choose_k = BigInt::from(1u32);
    for k in 0..=n as i128 {
        let rem = s - k * bins as i128;
        if rem < 0 {
            break;
        }
        // C(rem + n, n)
        let mut c = BigInt::from(1u32);
        for i in 1..=n as i128 {
            c = c * BigInt::from(rem + i);
        }
        for i in 1..=n as i128 {
            c = c / BigInt::from(i);
        }
        let term = &n_choose_k * c;
        if k % 2 == 0 {
            total += term;
        } else {
            total -= term;
        }
        n_choose_k = n_choose_k * BigInt::from(n as i128 - k) / BigInt::from(k + 1);
    }
    total
}

/// `count / bins^n` as f64, via a scaled big-integer division.
fn count_ratio(count: &BigInt, n: u32, bins: u64) -> f64 {
    if count.is_zero() {
        return 0.0;
    }
    debug_assert!(!count.is_negative());
    let denom = BigInt::from(bins).pow(n);
    let shift = (denom.bits() as i64 - count.bits() as i64 + 64).max(0) as u64;
    let q = (count << shift) / denom;
    q.to_f64().unwrap_or(f64::MAX) * (-(shift as f64)).exp2()
}

/// Exact probability that the input's quantization cell straddles the
/// hyperplane, i.e. that the folded bin sum `s` satisfies
/// `a' * bins - n <= s < a' * bins` for the folded threshold `a'`.
///
/// Degenerate thresholds outside `(0, n)` classify trivially: returns 0.
pub fn boundary_cell_prob(n: u32, bins: u64, folded_a: &DyadicRational) -> Result<f64> {
    if bins == 0 {
        return Err(Error::Domain("bins must be >= 1".into()));
    }
    if *folded_a <= DyadicRational::ZERO || *folded_a >= DyadicRational::from_int(n as i128) {
        return Ok(0.0);
    }
    let scaled = folded_a.mul_int(bins as i128);
    // integers in [scaled - n, scaled)
    let lo = scaled.sub(&DyadicRational::from_int(n as i128)).ceil();
    let hi = scaled.ceil() - 1;
    let max_sum = n as i128 * (bins as i128 - 1);
    let lo = lo.max(0);
    let hi = hi.min(max_sum);
    if lo > hi {
        return Ok(0.0);
    }

    let states = n as usize * (bins as usize - 1) + 1;
    if states <= DP_STATE_LIMIT {
        let pmf = bin_sum_pmf(n, bins)?;
        Ok(pmf[lo as usize..=hi as usize].iter().sum())
    } else {
        let count = count_sum_at_most(n, bins, hi) - count_sum_at_most(n, bins, lo - 1);
        Ok(count_ratio(&count, n, bins))
    }
}

/// CDF of the sum of `n` iid uniform(0,1) variables.
///
/// The alternating series is evaluated on the lower half and reflected,
/// with compensated summation; usable up to ~30 terms before cancellation
/// dominates.
pub fn irwin_hall_cdf(t: f64, n: u32) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    let nf = n as f64;
    if t >= nf {
        return 1.0;
    }
    if t > nf / 2.0 {
        return 1.0 - irwin_hall_cdf(nf - t, n);
    }
    let mut ln_factorial = 0.0f64;
    for i in 1..=n as u64 {
        ln_factorial += (i as f64).ln();
    }
    let factorial = ln_factorial.exp();
    let mut sum = 0.0f64;
    let mut comp = 0.0f64; // Kahan correction
    let mut binom = 1.0f64;
    for k in 0..=(t.floor() as u32) {
        let term = binom * (t - k as f64).powi(n as i32) * if k % 2 == 0 { 1.0 } else { -1.0 };
        let y = term - comp;
        let s = sum + y;
        comp = (s - sum) - y;
        sum = s;
        binom = binom * (nf - k as f64) / (k as f64 + 1.0);
    }
    (sum / factorial).clamp(0.0, 1.0)
}

/// Exact error probability of the midpoint-reconstruction rule.
///
/// Conditioned on the folded bin sum `s`, the signed sum is `(s + W)/bins`
/// with `W` an Irwin-Hall sum of the in-cell offsets, so the misclassified
/// volume fraction per sum value is an Irwin-Hall tail and the total is a
/// finite weighted sum.
pub fn pe_exact(config: &ProblemConfig, bins: u64) -> Result<f64> {
    let n = config.n();
    if n > PE_EXACT_MAX_NODES {
        return Err(Error::Unsupported(format!(
            "exact error probability supports n <= {PE_EXACT_MAX_NODES}; use the Monte Carlo estimate for n = {n}"
        )));
    }
    let folded = folded_threshold(config);
    let scaled = folded.mul_int(bins as i128); // a' * bins, dyadic
    let pmf = bin_sum_pmf(n, bins)?;
    let half_n = DyadicRational::new(n as i128, 1);
    let mut pe = 0.0f64;
    for (s, &p) in pmf.iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        // within-cell threshold on the offset sum
        let t = scaled.sub(&DyadicRational::from_int(s as i128));
        let t_f = t.to_f64();
        let w = if t <= half_n {
            // leader says 1; error iff the true sum falls below
            irwin_hall_cdf(t_f, n)
        } else {
            // leader says 0; error iff the true sum reaches the threshold
            1.0 - irwin_hall_cdf(t_f, n)
        };
        pe += p * w;
    }
    Ok(pe)
}

/// Monte Carlo error probability with a Wilson 95% interval. Deterministic
/// for fixed `(config, bins, reps, seed)` independent of parallelism.
pub fn pe_mc(config: &ProblemConfig, bins: u64, reps: u64, seed: u64) -> Result<PeEstimate> {
    if reps == 0 {
        return Err(Error::Domain("reps must be >= 1".into()));
    }
    let seeds = SeedSpec::new(seed);
    let n = config.n();
    const BATCH: u64 = 4096;
    let batches = reps.div_ceil(BATCH);
    let errors: u64 = (0..batches)
        .into_par_iter()
        .map(|b| {
            let mut local = 0u64;
            let mut bin_buf = vec![0u64; n as usize];
            for trial in b * BATCH..((b + 1) * BATCH).min(reps) {
                let mut rng = seeds.stream(trial);
                let x = crate::montecarlo::sample_input(config, &mut rng);
                for (slot, v) in bin_buf.iter_mut().zip(x.values()) {
                    *slot = quantize(*v, bins);
                }
                let g = decide_label(config, &bin_buf, bins).expect("length matches");
                let f = config.classify(&x).expect("length matches");
                if g != f {
                    local += 1;
                }
            }
            local
        })
        .sum();
    let (ci_lo, ci_hi) = wilson_interval(errors, reps);
    Ok(PeEstimate { errors, reps, p: errors as f64 / reps as f64, ci_lo, ci_hi })
}

/// Analytic floor on the One-Way+ sum rate at a target error probability
/// (balanced case): `n (log2(1/pe) + log2(12n/pi)/2 + 1)`.
pub fn analytic_rate_floor(n: u32, pe_target: f64) -> f64 {
    n as f64
        * ((1.0 / pe_target).log2() + 0.5 * (12.0 * n as f64 / std::f64::consts::PI).log2() + 1.0)
}

/// Predicted error probability used by the planner: half the linear bound
/// on the erf form, `(1/sqrt(pi)) sqrt(12 n / (bins^2 - 1))` in the balanced
/// case; a Gaussian straddle estimate otherwise.
fn predicted_pe(config: &ProblemConfig, bins: u64) -> f64 {
    let n = config.n() as f64;
    if bins <= 1 {
        return 1.0;
    }
    let balanced = 2 * config.m() == config.n() && config.threshold() == DyadicRational::ZERO;
    if balanced {
        let b2 = (bins as f64) * (bins as f64) - 1.0;
        (12.0 * n / b2).sqrt() / std::f64::consts::PI.sqrt()
    } else {
        // Gaussian estimate of the straddle window for the folded bin sum
        let folded = folded_threshold(config).to_f64() * bins as f64;
        let mu = n * (bins as f64 - 1.0) / 2.0;
        let var = n * ((bins as f64) * (bins as f64) - 1.0) / 12.0;
        let sd = var.sqrt();
        let phi = |z: f64| 0.5 * (1.0 + erf(z / std::f64::consts::SQRT_2));
        0.5 * (phi((folded - mu) / sd) - phi((folded - n - mu) / sd))
    }
}

/// Smallest resolution whose predicted error probability meets the target,
/// with the analytic floor and a full evaluation of the resulting protocol.
///
/// `reps = 0` skips the Monte Carlo estimate.
pub fn plan_rate(
    config: &ProblemConfig,
    pe_target: f64,
    variant: OneWayVariant,
    reps: u64,
    seed: u64,
) -> Result<RatePlan> {
    if !(0.0..1.0).contains(&pe_target) || pe_target <= 0.0 {
        return Err(Error::Domain(format!("pe target {pe_target} outside (0, 1)")));
    }
    let n = config.n();
    let balanced = 2 * config.m() == n && config.threshold() == DyadicRational::ZERO;
    let bins = if predicted_pe(config, 1) <= pe_target {
        1
    } else if balanced {
        // invert the linear bound: bins^2 - 1 >= 12 n / (pi pe^2)
        let target = 12.0 * n as f64 / (std::f64::consts::PI * pe_target * pe_target) + 1.0;
        (target.sqrt().ceil() as u64).max(2)
    } else {
        let mut lo = 2u64;
        let mut hi = 2u64;
        while predicted_pe(config, hi) > pe_target {
            hi = hi.checked_mul(2).ok_or_else(|| {
                Error::Domain(format!("no feasible resolution for pe target {pe_target}"))
            })?;
        }
        while lo < hi {
            let mid = lo + (hi - lo) / 2;
            if predicted_pe(config, mid) <= pe_target {
                hi = mid;
            } else {
                lo = mid + 1;
            }
        }
        lo
    };
    Ok(RatePlan {
        bins,
        eq13_floor_bits: analytic_rate_floor(n, pe_target),
        result: evaluate(config, bins, variant, reps, seed)?,
    })
}

/// Evaluates a one-way protocol at a fixed resolution: rates under both
/// per-node-bit conventions, exact and Monte Carlo error probabilities
/// where available, and the boundary-cell probability.
pub fn evaluate(
    config: &ProblemConfig,
    bins: u64,
    variant: OneWayVariant,
    reps: u64,
    seed: u64,
) -> Result<OneWayResult> {
    if bins == 0 {
        return Err(Error::Domain("bins must be >= 1".into()));
    }
    let n = config.n() as f64;
    let quantizer = QuantizerSpec::new(bins);
    let extra = match variant {
        OneWayVariant::OneWay => 0.0,
        OneWayVariant::OneWayPlus => 1.0,
    };
    let per_node_ceil = quantizer.per_node_bits.ceil();
    let states = config.n() as usize * (bins as usize - 1) + 1;
    let pe_exact_value = if config.n() <= PE_EXACT_MAX_NODES && states <= DP_STATE_LIMIT {
        Some(pe_exact(config, bins)?)
    } else {
        None
    };
    let pe_mc_value = if reps > 0 { Some(pe_mc(config, bins, reps, seed)?) } else { None };
    let boundary_prob = boundary_cell_prob(config.n(), bins, &folded_threshold(config))?;
    if let Some(pe) = pe_exact_value {
        if pe > boundary_prob + 1e-12 {
            return Err(Error::Numerical(format!(
                "exact error probability {pe} exceeds boundary-cell probability {boundary_prob}"
            )));
        }
    }
    Ok(OneWayResult {
        config: config.clone(),
        quantizer,
        variant,
        sum_rate_bits: n * (quantizer.per_node_bits + extra),
        sum_rate_bits_ceil: n * (per_node_ceil + extra),
        pe_exact: pe_exact_value,
        pe_mc: pe_mc_value,
        boundary_prob,
    })
}
