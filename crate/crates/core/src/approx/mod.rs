//! Central-limit approximation of the stopping-time tail and the
//! closed-form asymptotic bound on the mean stopping time.
//!
//! The scaled round-`k` aggregate is approximately Gaussian; the probability
//! that it stays strictly inside the continue window is a difference of two
//! `erf` terms, and summing those over rounds approximates the mean stopping
//! time. The asymptotic bound has three branches in the normalized offset
//! `gamma`: logarithmic growth at `gamma = 0` and a constant otherwise.

mod erf;

pub use erf::erf;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::ProblemConfig;

const SQRT_PI: f64 = 1.7724538509055159;

/// Gaussian parameters of the scaled aggregate `Z(j)/sqrt(n)`.
#[derive(Debug, Clone, Copy)]
pub struct CltParams {
    pub round: u32,
    /// `sqrt(n) (m/n - 1/2)(1 - 2^-j)`
    pub mean: f64,
    /// `(1 - 4^-j)/12`
    pub variance: f64,
    /// Unscaled deviation `sqrt(n (1 - 4^-j)/12)` of `Z(j)` itself.
    pub sigma_unscaled: f64,
}

impl CltParams {
    pub fn new(n: u32, m: u32, round: u32) -> Self {
        let beta = m as f64 / n as f64;
        let shrink = 1.0 - (-(round as f64)).exp2();
        let variance = (1.0 - (-2.0 * round as f64).exp2()) / 12.0;
        CltParams {
            round,
            mean: (n as f64).sqrt() * (beta - 0.5) * shrink,
            variance,
            sigma_unscaled: (n as f64 * variance).sqrt(),
        }
    }
}

fn sigma(n: u32, k: u32) -> f64 {
    (n as f64 * (1.0 - (-2.0 * k as f64).exp2()) / 12.0).sqrt()
}

/// Gaussian estimate of the probability that the round-`k` aggregate stays
/// strictly inside the continue window, at normalized offset `gamma`.
pub fn gaussian_tail_term(n: u32, k: u32, gamma: f64) -> f64 {
    let s = sigma(n, k);
    let half_width = (-(k as f64 + 1.0)).exp2();
    let scale = n as f64 / (std::f64::consts::SQRT_2 * s);
    0.5 * (erf((gamma + half_width) * scale) - erf((gamma - half_width) * scale))
}

/// Which branch of the asymptotic bound applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundBranch {
    /// `gamma = 0`: grows like `log2(n)/2`.
    LogGrowth,
    /// `0 < gamma <= 1/4`: bounded, `1 + kappa`.
    OnePlusKappa,
    /// `1/4 < gamma <= 1/2`: bounded, `1`.
    One,
}

impl BoundBranch {
    pub fn as_str(&self) -> &'static str {
        match self {
            BoundBranch::LogGrowth => "log_growth",
            BoundBranch::OnePlusKappa => "one_plus_kappa",
            BoundBranch::One => "one",
        }
    }
}

/// Largest round index for which the Gaussian window inequality
/// `(gamma - 2^-(k+1)) n / (sqrt(2) sigma_k) <= -sqrt(pi)/2` holds; zero if
/// none does. Bounded in `n`.
pub fn kappa(n: u32, gamma: f64) -> u32 {
    let mut best = 0;
    for k in 1..=64u32 {
        let s = sigma(n, k);
        let lhs = (gamma - (-(k as f64 + 1.0)).exp2()) * n as f64 / (std::f64::consts::SQRT_2 * s);
        if lhs <= -SQRT_PI / 2.0 {
            best = k;
        }
    }
    best
}

/// Closed-form asymptotic bound on the tail sum, with vanishing terms set to
/// zero. This is the limit expression, not a certified finite-`n` bound.
/// Requires `0 <= gamma <= 1/2`; callers fold negative offsets by the
/// label-swap symmetry first.
pub fn asymptotic_tail_bound(n: u32, gamma: f64) -> Result<(f64, BoundBranch)> {
    if !(0.0..=0.5).contains(&gamma) {
        return Err(Error::Domain(format!("gamma {gamma} outside [0, 1/2]")));
    }
    if gamma == 0.0 {
        let ratio = 6.0 * n as f64 / std::f64::consts::PI;
        let value = 0.5 * (ratio + 1.0).log2() + (3.0 / (1.0 + 1.0 / ratio)).sqrt();
        Ok((value, BoundBranch::LogGrowth))
    } else if gamma <= 0.25 {
        Ok((1.0 + kappa(n, gamma) as f64, BoundBranch::OnePlusKappa))
    } else {
        Ok((1.0, BoundBranch::One))
    }
}

/// Gaussian-approximation report for one configuration.
#[derive(Debug, Clone, Serialize)]
pub struct ApproxReport {
    pub n: u32,
    /// Offset the report was evaluated at (after symmetry reduction).
    pub gamma: f64,
    pub branch: BoundBranch,
    /// Asymptotic bound on the tail sum.
    pub bound: f64,
    /// Window round count; present on the middle branch only.
    pub kappa: Option<u32>,
    /// `1 + sum of tail terms`.
    #[serde(rename = "approx_Tbar")]
    pub approx_mean_stop: f64,
    /// Tail terms for `k = 1..` until truncation.
    pub terms: Vec<f64>,
}

/// Evaluates the Gaussian approximation for a configuration's offset.
pub fn approx_mean_stop(config: &ProblemConfig, k_max: u32) -> Result<ApproxReport> {
    approx_from_gamma(config.n(), config.gamma(), k_max)
}

/// Same, from an explicit offset. Negative offsets are folded to positive by
/// the label-swap symmetry (the tail terms are even in `gamma`).
pub fn approx_from_gamma(n: u32, gamma: f64, k_max: u32) -> Result<ApproxReport> {
    let gamma = gamma.abs();
    let (bound, branch) = asymptotic_tail_bound(n, gamma)?;
    let mut terms = Vec::new();
    let mut total = 1.0f64;
    for k in 1..=k_max.max(1) {
        let t = gaussian_tail_term(n, k, gamma);
        terms.push(t);
        total += t;
        if t < 1e-15 {
            break;
        }
    }
    Ok(ApproxReport {
        n,
        gamma,
        branch,
        bound,
        kappa: match branch {
            BoundBranch::OnePlusKappa => Some(kappa(n, gamma)),
            _ => None,
        },
        approx_mean_stop: total,
        terms,
    })
}
