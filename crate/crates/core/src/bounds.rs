//! Lower bounds on the interactive sum rate.
//!
//! Two families: the two-node tight bound obtained by minimizing the entropy
//! of self-similar zero-error rectangle partitions, and the general
//! max-rectangle argument where the entropy of any zero-error partition is
//! floored by the log-probability of its largest rectangle.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::ProblemConfig;

/// `-sum p log2 p`, with `0 log 0 := 0`.
fn entropy_bits(probs: &[f64]) -> f64 {
    probs.iter().filter(|&&p| p > 0.0).map(|&p| -p * p.log2()).sum()
}

/// Entropy rate of the self-similar corner partition at corner parameter
/// `v`: `H([v^2, 2v(1-v), (1-v)^2]) / (2v(1-v))` bits.
pub fn ternary_entropy_ratio(v: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&v) || v == 0.0 || v == 1.0 {
        return Err(Error::Domain(format!("corner parameter {v} outside (0, 1)")));
    }
    let p = [v * v, 2.0 * v * (1.0 - v), (1.0 - v) * (1.0 - v)];
    Ok(entropy_bits(&p) / (2.0 * v * (1.0 - v)))
}

/// Golden-section minimization of the corner entropy rate over `(0, 1)`.
/// Returns `(v_star, minimum_bits)`; the minimum is 3 bits at `v = 1/2`.
pub fn minimize_entropy_ratio() -> (f64, f64) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut lo, mut hi) = (1e-9, 1.0 - 1e-9);
    let mut c = hi - inv_phi * (hi - lo);
    let mut d = lo + inv_phi * (hi - lo);
    let mut fc = ternary_entropy_ratio(c).unwrap();
    let mut fd = ternary_entropy_ratio(d).unwrap();
    while hi - lo > 1e-10 {
        if fc < fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - inv_phi * (hi - lo);
            fc = ternary_entropy_ratio(c).unwrap();
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + inv_phi * (hi - lo);
            fd = ternary_entropy_ratio(d).unwrap();
        }
    }
    let v = 0.5 * (lo + hi);
    (v, ternary_entropy_ratio(v).unwrap())
}

/// Tight two-node bound: one bit for the class indicator plus the minimized
/// conditional partition entropy. Evaluates to 4 bits.
pub fn sum_rate_lower_bound_n2() -> f64 {
    // the two classes are equiprobable, so the class indicator carries 1 bit
    1.0 + minimize_entropy_ratio().1
}

/// Corner entropy analysis report.
#[derive(Debug, Clone, Serialize)]
pub struct PartitionEntropyReport {
    pub v_star: f64,
    /// Minimized conditional partition entropy (3 bits).
    pub conditional_entropy_bits: f64,
    /// Class bit plus conditional entropy (4 bits).
    pub total_bound_bits: f64,
    /// Sampled `(v, ratio)` curve for reporting.
    pub curve: Vec<(f64, f64)>,
}

pub fn partition_entropy_report() -> PartitionEntropyReport {
    let (v_star, min_bits) = minimize_entropy_ratio();
    let curve = (1..200)
        .map(|i| {
            let v = i as f64 / 200.0;
            (v, ternary_entropy_ratio(v).unwrap())
        })
        .collect();
    PartitionEntropyReport {
        v_star,
        conditional_entropy_bits: min_bits,
        total_bound_bits: 1.0 + min_bits,
        curve,
    }
}

/// Largest-rectangle bound for a configuration.
#[derive(Debug, Clone, Serialize)]
pub struct RectangleBound {
    pub config: ProblemConfig,
    /// Probability of the largest axis-aligned box inside the zero class.
    pub p1: f64,
    /// `log2(1/p1)`: a floor on any zero-error partition's entropy.
    pub entropy_floor_bits: f64,
    /// Maximizing per-group coordinates `(u on the positive group, w on the
    /// negative group)`.
    pub maximizer: (f64, f64),
}

/// Maximizes `(1-u)^m w^(n-m)` subject to `m u - (n-m) w = a` over the unit
/// square. Within-group exchangeability and log-concavity put the maximizer
/// on equal coordinates per group, reducing to a one-dimensional ternary
/// search over the feasible segment.
pub fn max_rectangle_prob(config: &ProblemConfig) -> Result<RectangleBound> {
    let n = config.n() as f64;
    let m = config.m() as f64;
    let a = config.threshold().to_f64();
    let neg = n - m;

    let objective = |u: f64, w: f64| -> f64 { (1.0 - u).powf(m) * w.powf(neg) };

    let (u, w) = if config.m() == 0 {
        // all-negative weights: constraint -(n)w = a
        (0.0, -a / n)
    } else if config.m() == config.n() {
        (a / n, 0.0)
    } else {
        // parametrize by w: u(w) = (a + (n-m) w) / m, with u, w in [0,1]
        let u_of = |w: f64| (a + neg * w) / m;
        let mut lo = 0f64.max(-a / neg);
        let mut hi = 1f64.min((m - a) / neg);
        if lo >= hi {
            return Err(Error::Domain(format!("empty feasible segment for {config}")));
        }
        while hi - lo > 1e-12 {
            let w1 = lo + (hi - lo) / 3.0;
            let w2 = hi - (hi - lo) / 3.0;
            if objective(u_of(w1), w1) < objective(u_of(w2), w2) {
                lo = w1;
            } else {
                hi = w2;
            }
        }
        let w = 0.5 * (lo + hi);
        (u_of(w), w)
    };

    let p1 = objective(u, w);
    if !(p1 > 0.0) {
        return Err(Error::Domain(format!("degenerate rectangle for {config}")));
    }
    Ok(RectangleBound {
        config: config.clone(),
        p1,
        entropy_floor_bits: -p1.log2(),
        maximizer: (u, w),
    })
}

/// Entropy floor from a decreasing probability sequence with tail bounds:
/// `sum_{i<cut} p_i log2(1/p_i) + g(cut) log2(cut / (1 - g(cut+1)))`.
///
/// `g_cut` and `g_next` are the supplied tail-bound values at `cut` and
/// `cut + 1` (1-indexed).
pub fn lemma9_entropy_bound(probs: &[f64], g_cut: f64, g_next: f64, cut: usize) -> Result<f64> {
    if cut < 1 {
        return Err(Error::Domain("cut must be >= 1".into()));
    }
    if probs.windows(2).any(|w| w[0] < w[1]) {
        return Err(Error::Domain("probabilities must be in decreasing order".into()));
    }
    if !(0.0..=1.0).contains(&g_cut) || !(0.0..=1.0).contains(&g_next) {
        return Err(Error::Domain("tail bounds must lie in [0, 1]".into()));
    }
    if g_next >= 1.0 {
        return Err(Error::Domain("tail bound at cut+1 must be < 1".into()));
    }
    let head: f64 = probs
        .iter()
        .take(cut - 1)
        .filter(|&&p| p > 0.0)
        .map(|&p| p * (1.0 / p).log2())
        .sum();
    Ok(head + g_cut * (cut as f64 / (1.0 - g_next)).log2())
}
