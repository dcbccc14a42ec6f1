//! Exact mean stopping times for integer thresholds.
//!
//! With an integer threshold the recursive protocol description is a Markov
//! chain on the interior thresholds `{-(n-m)+1, ..., m-1}`: from state `a`
//! the chain continues to `a' = 2a - B` with the probability that the signed
//! bit sum equals `2a - a'`, and is absorbed otherwise. The mean absorption
//! times solve a dense linear system against the substochastic continuation
//! matrix.

use crate::error::{Error, Result};
use crate::interactive::LOG2_3;

/// Distribution of the per-round signed bit sum over `{-(n-m), ..., m}`:
/// a shifted binomial on `n` fair bits.
#[derive(Debug, Clone)]
pub struct BitSumDistribution {
    n: u32,
    m: u32,
    pmf: Vec<f64>,
}

impl BitSumDistribution {
    pub fn new(n: u32, m: u32) -> Self {
        BitSumDistribution { n, m, pmf: binomial_pmf(n) }
    }

    /// `Pr[bit sum = k]`; zero outside the support.
    pub fn prob(&self, k: i64) -> f64 {
        let idx = k + (self.n - self.m) as i64;
        if (0..=self.n as i64).contains(&idx) {
            self.pmf[idx as usize]
        } else {
            0.0
        }
    }

    pub fn support(&self) -> std::ops::RangeInclusive<i64> {
        -((self.n - self.m) as i64)..=self.m as i64
    }

    pub fn total(&self) -> f64 {
        self.pmf.iter().sum()
    }
}

/// `C(n, j) / 2^n` for `j = 0..=n`.
///
/// Up to n = 512 the counts fit comfortably in f64 and the Pascal recurrence
/// is exact; beyond that the log-space form avoids overflow at the cost of
/// ~1e-13 relative error.
fn binomial_pmf(n: u32) -> Vec<f64> {
    let len = n as usize + 1;
    let mut pmf = vec![0.0; len];
    if n <= 512 {
        let mut c = 1.0f64;
        let scale = (-(n as f64)).exp2();
        for j in 0..len {
            pmf[j] = c * scale;
            c = c * (n as f64 - j as f64) / (j as f64 + 1.0);
        }
    } else {
        let ln2 = std::f64::consts::LN_2;
        let mut ln_c = 0.0f64;
        for j in 0..len {
            pmf[j] = (ln_c - n as f64 * ln2).exp();
            ln_c += ((n as f64 - j as f64) / (j as f64 + 1.0)).ln();
        }
    }
    pmf
}

/// Continuation-probability matrix over interior integer thresholds,
/// ordered `-(n-m)+1, ..., m-1`. Every row sums to strictly less than one.
#[derive(Debug, Clone)]
pub struct TransitionMatrix {
    n: u32,
    m: u32,
    states: Vec<i64>,
    entries: Vec<f64>,
}

impl TransitionMatrix {
    pub fn build(n: u32, m: u32) -> Self {
        let dist = BitSumDistribution::new(n, m);
        let states: Vec<i64> = (-((n - m) as i64) + 1..=m as i64 - 1).collect();
        let dim = states.len();
        let mut entries = vec![0.0; dim * dim];
        for (i, &a) in states.iter().enumerate() {
            for (j, &a_next) in states.iter().enumerate() {
                entries[i * dim + j] = dist.prob(2 * a - a_next);
            }
        }
        TransitionMatrix { n, m, states, entries }
    }

    pub fn dim(&self) -> usize {
        self.states.len()
    }

    pub fn states(&self) -> &[i64] {
        &self.states
    }

    /// Entry for current threshold `a` and next threshold `a_next`.
    pub fn prob(&self, a: i64, a_next: i64) -> f64 {
        let i = self.index_of(a).expect("state in range");
        let j = self.index_of(a_next).expect("state in range");
        self.entries[i * self.dim() + j]
    }

    pub fn index_of(&self, a: i64) -> Option<usize> {
        let off = a + (self.n - self.m) as i64 - 1;
        if (0..self.dim() as i64).contains(&off) {
            Some(off as usize)
        } else {
            None
        }
    }

    pub fn row_sum(&self, a: i64) -> f64 {
        let i = self.index_of(a).expect("state in range");
        self.entries[i * self.dim()..(i + 1) * self.dim()].iter().sum()
    }
}

/// Mean stopping time for every interior integer threshold, with the
/// residual of the linear solve.
#[derive(Debug, Clone)]
pub struct StoppingTimeTable {
    pub n: u32,
    pub m: u32,
    states: Vec<i64>,
    mean_stop: Vec<f64>,
    pub residual: f64,
}

impl StoppingTimeTable {
    pub fn states(&self) -> &[i64] {
        &self.states
    }

    /// Mean stopping time for threshold `a`, if interior.
    pub fn get(&self, a: i64) -> Option<f64> {
        let off = a + (self.n - self.m) as i64 - 1;
        if (0..self.states.len() as i64).contains(&off) {
            Some(self.mean_stop[off as usize])
        } else {
            None
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (i64, f64)> + '_ {
        self.states.iter().copied().zip(self.mean_stop.iter().copied())
    }
}

/// Solves `(I - Q) t = 1` by Gaussian elimination with partial pivoting and
/// verifies the residual against the untouched system.
pub fn solve_mean_stop(n: u32, m: u32) -> Result<StoppingTimeTable> {
    if n < 2 {
        return Err(Error::InvalidConfig(format!("n must be >= 2, got {n}")));
    }
    if m > n {
        return Err(Error::InvalidConfig(format!("m must satisfy 0 <= m <= n, got {m}")));
    }
    let q = TransitionMatrix::build(n, m);
    let dim = q.dim();
    if dim == 0 {
        return Err(Error::InvalidConfig(format!(
            "no interior integer thresholds for n={n}, m={m}"
        )));
    }

    // system = I - Q
    let mut system = vec![0.0; dim * dim];
    for i in 0..dim {
        for j in 0..dim {
            system[i * dim + j] = (if i == j { 1.0 } else { 0.0 }) - q.entries[i * dim + j];
        }
    }
    let original = system.clone();

    let mut rhs = vec![1.0; dim];
    gauss_solve(&mut system, &mut rhs, dim)?;

    let mut residual = 0.0f64;
    for i in 0..dim {
        let mut acc = 0.0;
        for j in 0..dim {
            acc += original[i * dim + j] * rhs[j];
        }
        residual = residual.max((acc - 1.0).abs());
    }
    if residual > 1e-9 {
        return Err(Error::Numerical(format!(
            "stopping-time solve residual {residual:.3e} exceeds 1e-9 for n={n}, m={m}"
        )));
    }

    Ok(StoppingTimeTable { n, m, states: q.states.clone(), mean_stop: rhs, residual })
}

fn gauss_solve(a: &mut [f64], b: &mut [f64], dim: usize) -> Result<()> {
    for col in 0..dim {
        let pivot_row = (col..dim)
            .max_by(|&r1, &r2| {
                a[r1 * dim + col].abs().partial_cmp(&a[r2 * dim + col].abs()).unwrap()
            })
            .unwrap();
        if a[pivot_row * dim + col].abs() < 1e-300 {
            return Err(Error::Numerical("singular system in stopping-time solve".into()));
        }
        if pivot_row != col {
            for j in 0..dim {
                a.swap(col * dim + j, pivot_row * dim + j);
            }
            b.swap(col, pivot_row);
        }
        let pivot = a[col * dim + col];
        for row in col + 1..dim {
            let factor = a[row * dim + col] / pivot;
            if factor == 0.0 {
                continue;
            }
            for j in col..dim {
                a[row * dim + j] -= factor * a[col * dim + j];
            }
            b[row] -= factor * b[col];
        }
    }
    for col in (0..dim).rev() {
        let mut acc = b[col];
        for j in col + 1..dim {
            acc -= a[col * dim + j] * b[j];
        }
        b[col] = acc / a[col * dim + col];
    }
    Ok(())
}

/// Exact mean sum rate `n (1 + log2 3) * mean_stop(a)` for an interior
/// integer threshold.
pub fn mean_sum_rate_exact(n: u32, m: u32, a: i64) -> Result<f64> {
    let table = solve_mean_stop(n, m)?;
    let t = table
        .get(a)
        .ok_or_else(|| Error::Domain(format!("threshold {a} outside interior states of n={n}, m={m}")))?;
    Ok(n as f64 * (1.0 + LOG2_3) * t)
}
