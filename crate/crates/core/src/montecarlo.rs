//! Deterministic, parallelizable Monte Carlo harness.
//!
//! Each trial draws from its own counter-derived ChaCha stream, so results
//! depend only on `(master seed, trial index)` and never on thread count or
//! scheduling. Work is split into fixed-size batches whose partial
//! aggregates are merged in batch order, which makes even the floating-point
//! reductions bit-reproducible.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::interactive::{self, RateAccounting, SessionOutcome, Signal};
use crate::model::{InputVector, ProblemConfig, UnitFixed64};

const BATCH: u64 = 1024;

/// Largest tail index tracked by the streaming statistics.
pub const TAIL_K_MAX: usize = 64;

/// Counter-based stream derivation: trial `i` gets an independent ChaCha
/// stream of the master seed.
#[derive(Debug, Clone, Copy)]
pub struct SeedSpec {
    pub master_seed: u64,
}

impl SeedSpec {
    pub fn new(master_seed: u64) -> Self {
        SeedSpec { master_seed }
    }

    pub fn stream(&self, trial: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master_seed);
        rng.set_stream(trial);
        rng
    }

    /// An unrelated seed namespace for auxiliary estimators that must not
    /// share randomness with the primary trials.
    pub fn derived(&self, tag: u64) -> SeedSpec {
        SeedSpec { master_seed: self.master_seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15) }
    }
}

/// Uniform observation vector for a configuration, one 64-bit fixed-point
/// draw per node.
pub fn sample_input(config: &ProblemConfig, rng: &mut impl RngCore) -> InputVector {
    InputVector((0..config.n()).map(|_| UnitFixed64(rng.next_u64())).collect())
}

/// Streaming moments plus stopping-time tail counts.
///
/// Merging is exact in the counts and associative to floating-point
/// round-off in the moments; merges are always performed in a fixed order.
#[derive(Debug, Clone)]
pub struct TrialStats {
    count: u64,
    mean: f64,
    m2: f64,
    tail_counts: Vec<u64>,
    excluded: u64,
}

impl Default for TrialStats {
    fn default() -> Self {
        TrialStats { count: 0, mean: 0.0, m2: 0.0, tail_counts: vec![0; TAIL_K_MAX], excluded: 0 }
    }
}

impl TrialStats {
    pub fn new() -> Self {
        Self::default()
    }

    /// Welford update with a decided stopping time.
    pub fn push_decided(&mut self, stop_time: u32) {
        self.count += 1;
        let x = stop_time as f64;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
        let kmax = (stop_time as usize).saturating_sub(1).min(TAIL_K_MAX);
        for slot in &mut self.tail_counts[..kmax] {
            *slot += 1;
        }
    }

    pub fn push_exhausted(&mut self) {
        self.excluded += 1;
    }

    pub fn merge(&mut self, other: &TrialStats) {
        if other.count > 0 {
            if self.count == 0 {
                self.mean = other.mean;
                self.m2 = other.m2;
                self.count = other.count;
            } else {
                let total = self.count + other.count;
                let delta = other.mean - self.mean;
                self.mean += delta * other.count as f64 / total as f64;
                self.m2 += other.m2
                    + delta * delta * self.count as f64 * other.count as f64 / total as f64;
                self.count = total;
            }
        }
        for (a, b) in self.tail_counts.iter_mut().zip(&other.tail_counts) {
            *a += b;
        }
        self.excluded += other.excluded;
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            return 0.0;
        }
        self.m2 / (self.count - 1) as f64
    }

    pub fn ci95_halfwidth(&self) -> f64 {
        if self.count < 2 {
            return f64::INFINITY;
        }
        1.96 * (self.variance() / self.count as f64).sqrt()
    }

    pub fn excluded(&self) -> u64 {
        self.excluded
    }

    /// Count of decided sessions with stopping time `> k`, `1 <= k <= 64`.
    pub fn tail_count(&self, k: usize) -> u64 {
        self.tail_counts[k - 1]
    }

    pub fn tail_prob(&self, k: usize) -> f64 {
        if self.count == 0 {
            return 0.0;
        }
        self.tail_count(k) as f64 / self.count as f64
    }
}

/// Serializable snapshot of streaming statistics.
#[derive(Debug, Clone, Serialize)]
pub struct StatsSummary {
    pub count: u64,
    pub mean: f64,
    pub variance: f64,
    pub ci95_halfwidth: f64,
    pub excluded: u64,
}

impl From<&TrialStats> for StatsSummary {
    fn from(s: &TrialStats) -> Self {
        StatsSummary {
            count: s.count(),
            mean: s.mean(),
            variance: s.variance(),
            ci95_halfwidth: s.ci95_halfwidth(),
            excluded: s.excluded(),
        }
    }
}

/// Wilson 95% score interval for a binomial proportion.
pub fn wilson_interval(successes: u64, trials: u64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let z = 1.959963984540054f64;
    let nf = trials as f64;
    let p = successes as f64 / nf;
    let z2 = z * z;
    let denom = 1.0 + z2 / nf;
    let center = (p + z2 / (2.0 * nf)) / denom;
    let half = z * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt() / denom;
    let lo = if successes == 0 { 0.0 } else { (center - half).max(0.0) };
    let hi = if successes == trials { 1.0 } else { (center + half).min(1.0) };
    (lo, hi)
}

/// Stopping-time estimate over independent sessions.
#[derive(Debug, Clone)]
pub struct StopTimeReport {
    pub config: ProblemConfig,
    pub reps: u64,
    pub seed: u64,
    pub stats: TrialStats,
}

impl StopTimeReport {
    /// Mean session rate in bits under the given accounting.
    pub fn mean_rate(&self, accounting: RateAccounting) -> f64 {
        interactive::mean_rate(self.config.n(), self.stats.mean(), accounting)
    }
}

/// Runs `reps` independent sessions and aggregates stopping times. Sessions
/// that exhaust the input precision are excluded from the moments and
/// reported separately.
pub fn estimate_mean_stop(config: &ProblemConfig, reps: u64, seed: u64) -> Result<StopTimeReport> {
    if reps < 2 {
        return Err(Error::Domain("reps must be >= 2".into()));
    }
    let seeds = SeedSpec::new(seed);
    let batches = reps.div_ceil(BATCH);
    let partials: Vec<TrialStats> = (0..batches)
        .into_par_iter()
        .map(|b| {
            let mut stats = TrialStats::new();
            for trial in b * BATCH..((b + 1) * BATCH).min(reps) {
                let mut rng = seeds.stream(trial);
                let x = sample_input(config, &mut rng);
                let trace = interactive::run_session(config, &x, interactive::MAX_ROUNDS)
                    .expect("sampled input matches config");
                match trace.outcome {
                    SessionOutcome::Decided => stats.push_decided(trace.stop_time),
                    SessionOutcome::PrecisionExhausted => stats.push_exhausted(),
                }
            }
            stats
        })
        .collect();
    let mut stats = TrialStats::new();
    for p in &partials {
        stats.merge(p);
    }
    if stats.count() == 0 {
        return Err(Error::Numerical(
            "every session exhausted the input precision; cannot estimate".into(),
        ));
    }
    Ok(StopTimeReport { config: config.clone(), reps, seed, stats })
}

/// One row of a tail estimate.
#[derive(Debug, Clone, Serialize)]
pub struct TailRow {
    pub k: u32,
    /// Empirical `Pr[stopping time > k]` with Wilson interval.
    pub p_stop_gt: f64,
    pub stop_ci: (f64, f64),
    /// Independent empirical probability that the round-`k` aggregate lies
    /// strictly inside the continue window, with Wilson interval.
    pub p_window: f64,
    pub window_ci: (f64, f64),
}

#[derive(Debug, Clone)]
pub struct TailReport {
    pub config: ProblemConfig,
    pub reps: u64,
    pub seed: u64,
    pub rows: Vec<TailRow>,
}

/// Estimates the stopping-time tail and, from an independent sample, the
/// per-round window probabilities that dominate it.
pub fn estimate_tail(config: &ProblemConfig, k_max: u32, reps: u64, seed: u64) -> Result<TailReport> {
    if k_max as usize > TAIL_K_MAX {
        return Err(Error::Domain(format!("k_max must be <= {TAIL_K_MAX}")));
    }
    let report = estimate_mean_stop(config, reps, seed)?;
    let decided = report.stats.count();

    let window_seeds = SeedSpec::new(seed).derived(1);
    let batches = reps.div_ceil(BATCH);
    let window_counts: Vec<u64> = (0..batches)
        .into_par_iter()
        .map(|b| {
            let mut counts = vec![0u64; k_max as usize];
            for trial in b * BATCH..((b + 1) * BATCH).min(reps) {
                let mut rng = window_seeds.stream(trial);
                let x = sample_input(config, &mut rng);
                let path = interactive::aggregate_trajectory(config, &x, k_max)
                    .expect("sampled input matches config");
                for (idx, (_, z)) in path.iter().enumerate() {
                    if interactive::decide_signal(config, z, idx as u32 + 1) == Signal::Continue {
                        counts[idx] += 1;
                    }
                }
            }
            counts
        })
        .reduce(
            || vec![0u64; k_max as usize],
            |mut a, b| {
                for (x, y) in a.iter_mut().zip(&b) {
                    *x += y;
                }
                a
            },
        );

    let rows = (1..=k_max)
        .map(|k| {
            let tail = report.stats.tail_count(k as usize);
            let stop_ci = wilson_interval(tail, decided);
            let inside = window_counts[k as usize - 1];
            let window_ci = wilson_interval(inside, reps);
            TailRow {
                k,
                p_stop_gt: tail as f64 / decided as f64,
                stop_ci,
                p_window: inside as f64 / reps as f64,
                window_ci,
            }
        })
        .collect();
    Ok(TailReport { config: config.clone(), reps, seed, rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::DyadicRational;
    use proptest::prelude::*;

    fn cfg(n: u32, m: u32, a: i128) -> ProblemConfig {
        ProblemConfig::new(n, m, DyadicRational::from_int(a)).unwrap()
    }

    #[test]
    fn sampling_is_deterministic_per_trial() {
        let c = cfg(4, 2, 0);
        let seeds = SeedSpec::new(99);
        let a = sample_input(&c, &mut seeds.stream(17));
        let b = sample_input(&c, &mut seeds.stream(17));
        assert_eq!(a, b);
        let other = sample_input(&c, &mut seeds.stream(18));
        assert_ne!(a, other);
    }

    #[test]
    fn sample_moments_are_uniform() {
        let c = cfg(2, 1, 0);
        let seeds = SeedSpec::new(5);
        let mut sum = 0f64;
        let mut first_bit = 0u64;
        let reps = 500_000;
        for trial in 0..reps {
            let x = sample_input(&c, &mut seeds.stream(trial));
            sum += x.values()[0].to_f64();
            if x.values()[0].bit(1) {
                first_bit += 1;
            }
        }
        let mean = sum / reps as f64;
        assert!((mean - 0.5).abs() < 0.002, "mean {mean}");
        let p = first_bit as f64 / reps as f64;
        assert!((p - 0.5).abs() < 0.005, "first-bit rate {p}");
    }

    #[test]
    fn estimate_matches_known_mean_for_two_nodes() {
        let report = estimate_mean_stop(&cfg(2, 1, 0), 100_000, 1).unwrap();
        let se = (report.stats.variance() / report.stats.count() as f64).sqrt();
        assert!((report.stats.mean() - 2.0).abs() <= 4.0 * se);
        assert_eq!(report.stats.excluded(), 0);
        // known variance of the geometric stopping time is 2
        assert!((report.stats.variance() - 2.0).abs() < 0.1);
    }

    #[test]
    fn estimate_matches_exact_solver_small_n() {
        let report = estimate_mean_stop(&cfg(4, 2, 0), 100_000, 2).unwrap();
        let se = (report.stats.variance() / report.stats.count() as f64).sqrt();
        assert!((report.stats.mean() - 20.0 / 7.0).abs() <= 4.0 * se);
    }

    #[test]
    fn results_identical_across_worker_counts() {
        let c = cfg(8, 4, 0);
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            pool.install(|| estimate_mean_stop(&c, 20_000, 7).unwrap())
        };
        let one = run(1);
        let two = run(2);
        let eight = run(8);
        assert_eq!(one.stats.mean().to_bits(), two.stats.mean().to_bits());
        assert_eq!(one.stats.variance().to_bits(), two.stats.variance().to_bits());
        assert_eq!(one.stats.mean().to_bits(), eight.stats.mean().to_bits());
        for k in 1..=10 {
            assert_eq!(one.stats.tail_count(k), eight.stats.tail_count(k));
        }
    }

    #[test]
    fn tail_estimate_containment_and_monotonicity() {
        let report = estimate_tail(&cfg(2, 1, 0), 10, 100_000, 3).unwrap();
        let mut last = 1.0f64;
        for row in &report.rows {
            // tail is non-increasing
            assert!(row.p_stop_gt <= last + 1e-12);
            last = row.p_stop_gt;
            // containment: Pr[T > k] <= Pr[window at k] + 3 SE
            let se = (row.p_window * (1.0 - row.p_window) / report.reps as f64).sqrt();
            assert!(
                row.p_stop_gt <= row.p_window + 3.0 * se,
                "k={}: tail {} vs window {}",
                row.k,
                row.p_stop_gt,
                row.p_window
            );
            // known closed-form tail for two nodes
            let want = 0.5f64.powi(row.k as i32);
            let se_tail = (want * (1.0 - want) / report.reps as f64).sqrt();
            assert!((row.p_stop_gt - want).abs() <= 3.0 * se_tail);
        }
    }

    #[test]
    fn ci_scales_as_sqrt_reps() {
        let c = cfg(4, 2, 0);
        let mut ratios = Vec::new();
        for trial in 0..10u64 {
            let full = estimate_mean_stop(&c, 40_000, 100 + trial).unwrap();
            let half = estimate_mean_stop(&c, 20_000, 200 + trial).unwrap();
            ratios.push(half.stats.ci95_halfwidth() / full.stats.ci95_halfwidth());
        }
        let mean_ratio = ratios.iter().sum::<f64>() / ratios.len() as f64;
        assert!(
            (mean_ratio - std::f64::consts::SQRT_2).abs() < 0.2 * std::f64::consts::SQRT_2,
            "mean ratio {mean_ratio}"
        );
    }

    #[test]
    fn wilson_interval_sane() {
        let (lo, hi) = wilson_interval(0, 100);
        assert_eq!(lo, 0.0);
        assert!(hi > 0.0 && hi < 0.05);
        let (lo, hi) = wilson_interval(50, 100);
        assert!(lo < 0.5 && 0.5 < hi);
        let (lo, hi) = wilson_interval(100, 100);
        assert!(lo > 0.95 && hi == 1.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn merge_is_associative_and_order_independent(
            data in prop::collection::vec(1u32..20, 3..100),
            split1 in 1usize..50,
            split2 in 1usize..50,
        ) {
            let mut whole = TrialStats::new();
            for &t in &data {
                whole.push_decided(t);
            }
            let s1 = split1.min(data.len() - 1);
            let s2 = (s1 + split2).min(data.len());
            let mut parts = [TrialStats::new(), TrialStats::new(), TrialStats::new()];
            for (i, &t) in data.iter().enumerate() {
                let idx = if i < s1 { 0 } else if i < s2 { 1 } else { 2 };
                parts[idx].push_decided(t);
            }
            // ((a . b) . c)
            let mut left = parts[0].clone();
            left.merge(&parts[1]);
            left.merge(&parts[2]);
            // (a . (b . c))
            let mut right_tail = parts[1].clone();
            right_tail.merge(&parts[2]);
            let mut right = parts[0].clone();
            right.merge(&right_tail);

            prop_assert_eq!(left.count(), whole.count());
            prop_assert!((left.mean() - whole.mean()).abs() < 1e-12);
            prop_assert!((right.mean() - whole.mean()).abs() < 1e-12);
            prop_assert!((left.variance() - whole.variance()).abs() < 1e-10);
            prop_assert!((left.variance() - right.variance()).abs() < 1e-10);
            for k in 1..=10 {
                prop_assert_eq!(left.tail_count(k), whole.tail_count(k));
                prop_assert_eq!(right.tail_count(k), whole.tail_count(k));
            }
        }
    }
}
