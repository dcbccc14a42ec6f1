//! Problem configuration and exact arithmetic for inputs and thresholds.
//!
//! Inputs are 64-bit fixed-point fractions in `[0,1)` and thresholds are
//! dyadic rationals, so every comparison the protocols perform (signed sums,
//! stopping thresholds, quantizer cell boundaries) is exact integer
//! arithmetic. No decision in this crate is ever made with a rounded float.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A rational of the form `numerator / 2^exponent`, kept in canonical form
/// (odd numerator, or exponent zero).
///
/// The i128 numerator leaves enormous headroom: every value handled by the
/// protocols is bounded by `2n` in magnitude with exponent at most ~70, so
/// rescaled comparisons stay below 2^90.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DyadicRational {
    numerator: i128,
    exponent: u32,
}

impl DyadicRational {
    pub const ZERO: DyadicRational = DyadicRational { numerator: 0, exponent: 0 };

    /// `numerator / 2^exponent`, canonicalized.
    pub fn new(numerator: i128, exponent: u32) -> Self {
        let mut d = DyadicRational { numerator, exponent };
        d.canonicalize();
        d
    }

    pub fn from_int(v: i128) -> Self {
        DyadicRational { numerator: v, exponent: 0 }
    }

    /// `v / 2^exponent` for integer `v` (e.g. `m * 2^-j` threshold offsets).
    pub fn scaled_int(v: i128, exponent: u32) -> Self {
        Self::new(v, exponent)
    }

    pub fn numerator(&self) -> i128 {
        self.numerator
    }

    pub fn exponent(&self) -> u32 {
        self.exponent
    }

    pub fn is_integer(&self) -> bool {
        self.exponent == 0
    }

    /// Integer value if the exponent is zero.
    pub fn as_integer(&self) -> Option<i128> {
        if self.exponent == 0 {
            Some(self.numerator)
        } else {
            None
        }
    }

    fn canonicalize(&mut self) {
        if self.numerator == 0 {
            self.exponent = 0;
            return;
        }
        while self.exponent > 0 && self.numerator % 2 == 0 {
            self.numerator /= 2;
            self.exponent -= 1;
        }
    }

    /// Numerator rescaled to a given exponent (exact; panics far outside the
    /// protocol domain, which is unreachable for valid configurations).
    fn numerator_at(&self, exponent: u32) -> i128 {
        debug_assert!(exponent >= self.exponent);
        let shift = exponent - self.exponent;
        self.numerator
            .checked_shl(shift)
            .filter(|_| shift < 127)
            .expect("dyadic rescale overflow")
    }

    pub fn add(&self, other: &Self) -> Self {
        let e = self.exponent.max(other.exponent);
        Self::new(
            self.numerator_at(e)
                .checked_add(other.numerator_at(e))
                .expect("dyadic add overflow"),
            e,
        )
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.neg())
    }

    pub fn neg(&self) -> Self {
        DyadicRational { numerator: -self.numerator, exponent: self.exponent }
    }

    /// Exact doubling (the protocol's per-round rescaling `x -> 2x`).
    pub fn double(&self) -> Self {
        if self.exponent > 0 {
            DyadicRational { numerator: self.numerator, exponent: self.exponent - 1 }
        } else {
            DyadicRational {
                numerator: self.numerator.checked_mul(2).expect("dyadic double overflow"),
                exponent: 0,
            }
        }
    }

    /// Exact product with an integer.
    pub fn mul_int(&self, k: i128) -> Self {
        Self::new(self.numerator.checked_mul(k).expect("dyadic mul overflow"), self.exponent)
    }

    /// Largest integer `<=` this value.
    pub fn floor(&self) -> i128 {
        if self.exponent == 0 {
            return self.numerator;
        }
        // Arithmetic shift right truncates toward negative infinity.
        self.numerator >> self.exponent
    }

    /// Smallest integer `>=` this value.
    pub fn ceil(&self) -> i128 {
        if self.exponent == 0 {
            return self.numerator;
        }
        let f = self.floor();
        // Canonical form with exponent > 0 means the value is not an integer.
        f + 1
    }

    pub fn to_f64(&self) -> f64 {
        self.numerator as f64 * (-(self.exponent as f64)).exp2()
    }
}

impl PartialOrd for DyadicRational {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for DyadicRational {
    fn cmp(&self, other: &Self) -> Ordering {
        let e = self.exponent.max(other.exponent);
        self.numerator_at(e).cmp(&other.numerator_at(e))
    }
}

impl fmt::Display for DyadicRational {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.exponent == 0 {
            write!(f, "{}", self.numerator)
        } else {
            write!(f, "{}/2^{}", self.numerator, self.exponent)
        }
    }
}

/// Accepts `<int>` or `<int>/2^<int>`.
impl FromStr for DyadicRational {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Some((num, denom)) = s.split_once('/') {
            let exp = denom
                .strip_prefix("2^")
                .ok_or_else(|| Error::Parse(format!("expected <int>/2^<int>, got `{s}`")))?;
            let numerator: i128 =
                num.trim().parse().map_err(|e| Error::Parse(format!("bad numerator in `{s}`: {e}")))?;
            let exponent: u32 =
                exp.trim().parse().map_err(|e| Error::Parse(format!("bad exponent in `{s}`: {e}")))?;
            Ok(DyadicRational::new(numerator, exponent))
        } else {
            let v: i128 = s.parse().map_err(|e| Error::Parse(format!("bad integer `{s}`: {e}")))?;
            Ok(DyadicRational::from_int(v))
        }
    }
}

/// A value in `[0,1)` stored as a 64-bit numerator over `2^64`.
///
/// Bit `j` (1-indexed, most significant first) of the numerator is exactly
/// the `j`-th digit of the binary expansion, so the per-round bit extraction
/// is a shift and mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct UnitFixed64(pub u64);

impl UnitFixed64 {
    pub fn raw(&self) -> u64 {
        self.0
    }

    /// Nearest representable value for an f64 in `[0,1)`. The conversion
    /// keeps the 53 significant bits of the input exactly.
    pub fn from_f64(x: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&x) {
            return Err(Error::Domain(format!("input {x} outside [0,1)")));
        }
        // x * 2^53 is exact (power-of-two scaling), and its floor fits u64.
        let hi = (x * (1u64 << 53) as f64) as u64;
        Ok(UnitFixed64(hi << 11))
    }

    pub fn to_f64(&self) -> f64 {
        self.0 as f64 * (-64f64).exp2()
    }

    /// Digit `j` of the binary expansion, `1 <= j <= 64`.
    pub fn bit(&self, j: u32) -> bool {
        debug_assert!((1..=64).contains(&j));
        (self.0 >> (64 - j)) & 1 == 1
    }

    /// Exact value as a dyadic rational over `2^64`.
    pub fn to_dyadic(&self) -> DyadicRational {
        DyadicRational::new(self.0 as i128, 64)
    }
}

/// The observation vector `(X_1, ..., X_n)`, one value per node.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputVector(pub Vec<UnitFixed64>);

impl InputVector {
    pub fn from_f64s(values: &[f64]) -> Result<Self> {
        values.iter().map(|&x| UnitFixed64::from_f64(x)).collect::<Result<Vec<_>>>().map(InputVector)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> &[UnitFixed64] {
        &self.0
    }
}

/// Binary class label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ClassLabel {
    Zero,
    One,
}

impl ClassLabel {
    pub fn as_bit(&self) -> u8 {
        match self {
            ClassLabel::Zero => 0,
            ClassLabel::One => 1,
        }
    }
}

impl From<bool> for ClassLabel {
    fn from(b: bool) -> Self {
        if b {
            ClassLabel::One
        } else {
            ClassLabel::Zero
        }
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_bit())
    }
}

/// An `n`-node threshold classification problem.
///
/// Nodes `1..=m` carry weight `+1` and nodes `m+1..=n` carry `-1`; under iid
/// inputs any other assignment of the `m` positive weights is statistically
/// equivalent, and fixing it keeps traces reproducible.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProblemConfig {
    n: u32,
    m: u32,
    a: DyadicRational,
}

impl ProblemConfig {
    /// Validates `n >= 2`, `0 <= m <= n` and the non-triviality window
    /// `-(n-m) < a < m`; outside that window the label is constant.
    pub fn new(n: u32, m: u32, a: DyadicRational) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidConfig(format!("n must be >= 2, got {n}")));
        }
        if m > n {
            return Err(Error::InvalidConfig(format!("m must satisfy 0 <= m <= n, got m={m} n={n}")));
        }
        let lo = DyadicRational::from_int(-((n - m) as i128));
        let hi = DyadicRational::from_int(m as i128);
        if a <= lo || a >= hi {
            return Err(Error::InvalidConfig(format!(
                "threshold a={a} outside the open interval (-{}, {m}); classification is trivial",
                n - m
            )));
        }
        Ok(ProblemConfig { n, m, a })
    }

    pub fn n(&self) -> u32 {
        self.n
    }

    pub fn m(&self) -> u32 {
        self.m
    }

    pub fn threshold(&self) -> DyadicRational {
        self.a
    }

    /// Weight of node `i` (0-indexed).
    pub fn weight(&self, i: usize) -> i64 {
        if (i as u32) < self.m {
            1
        } else {
            -1
        }
    }

    fn check_len(&self, x: &InputVector) -> Result<()> {
        if x.len() != self.n as usize {
            return Err(Error::LengthMismatch { expected: self.n as usize, got: x.len() });
        }
        Ok(())
    }

    /// Exact signed sum `sum_{i<=m} X_i - sum_{i>m} X_i`.
    pub fn signed_sum(&self, x: &InputVector) -> Result<DyadicRational> {
        self.check_len(x)?;
        let mut num: i128 = 0;
        for (i, v) in x.values().iter().enumerate() {
            num += self.weight(i) as i128 * v.raw() as i128;
        }
        Ok(DyadicRational::new(num, 64))
    }

    /// The class label: 1 iff the signed sum is `>=` the threshold, decided
    /// with exact arithmetic (the boundary case never touches floats).
    pub fn classify(&self, x: &InputVector) -> Result<ClassLabel> {
        let s = self.signed_sum(x)?;
        Ok(ClassLabel::from(s >= self.a))
    }

    /// The normalized offset `a/n + 1/2 - m/n`; zero in the balanced regime.
    pub fn gamma(&self) -> f64 {
        self.a.to_f64() / self.n as f64 + 0.5 - self.m as f64 / self.n as f64
    }
}

impl fmt::Display for ProblemConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n={} m={} a={}", self.n, self.m, self.a)
    }
}

/// Accepts the one-line form `n=<int> m=<int> a=<int>[/2^<int>]`.
impl FromStr for ProblemConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut n = None;
        let mut m = None;
        let mut a = None;
        for tok in s.split_whitespace() {
            let (key, value) = tok
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("expected key=value, got `{tok}`")))?;
            match key {
                "n" => n = Some(value.parse::<u32>().map_err(|e| Error::Parse(format!("bad n: {e}")))?),
                "m" => m = Some(value.parse::<u32>().map_err(|e| Error::Parse(format!("bad m: {e}")))?),
                "a" => a = Some(value.parse::<DyadicRational>()?),
                other => return Err(Error::Parse(format!("unknown key `{other}`"))),
            }
        }
        match (n, m, a) {
            (Some(n), Some(m), Some(a)) => ProblemConfig::new(n, m, a),
            _ => Err(Error::Parse(format!("config `{s}` must set n, m and a"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg(n: u32, m: u32, a: i128) -> ProblemConfig {
        ProblemConfig::new(n, m, DyadicRational::from_int(a)).unwrap()
    }

    fn input(values: &[f64]) -> InputVector {
        InputVector::from_f64s(values).unwrap()
    }

    #[test]
    fn dyadic_canonical_form() {
        let d = DyadicRational::new(4, 3);
        assert_eq!(d.numerator(), 1);
        assert_eq!(d.exponent(), 1);
        assert_eq!(DyadicRational::new(0, 7), DyadicRational::ZERO);
        assert_eq!(DyadicRational::new(6, 1), DyadicRational::from_int(3));
    }

    #[test]
    fn dyadic_parse_and_display() {
        let d: DyadicRational = "3/2^1".parse().unwrap();
        assert_eq!(d, DyadicRational::new(3, 1));
        assert_eq!(d.to_string(), "3/2^1");
        let i: DyadicRational = "-4".parse().unwrap();
        assert_eq!(i, DyadicRational::from_int(-4));
        assert!("3/4".parse::<DyadicRational>().is_err());
    }

    #[test]
    fn dyadic_floor_ceil() {
        let d = DyadicRational::new(5, 1); // 2.5
        assert_eq!(d.floor(), 2);
        assert_eq!(d.ceil(), 3);
        let neg = DyadicRational::new(-5, 1); // -2.5
        assert_eq!(neg.floor(), -3);
        assert_eq!(neg.ceil(), -2);
        assert_eq!(DyadicRational::from_int(-7).ceil(), -7);
    }

    #[test]
    fn signed_sum_examples() {
        // direct evaluation with one positive and one negative weight
        let c = cfg(2, 1, 0);
        let s = c.signed_sum(&input(&[0.75, 0.25])).unwrap();
        assert_eq!(s, DyadicRational::new(1, 1));

        let c = ProblemConfig::new(4, 2, DyadicRational::from_int(1)).unwrap();
        let s = c.signed_sum(&input(&[0.0, 0.0, 0.0, 0.0])).unwrap();
        assert_eq!(s, DyadicRational::ZERO);

        let c = ProblemConfig::new(3, 3, DyadicRational::from_int(1)).unwrap();
        let s = c.signed_sum(&input(&[0.5, 0.5, 0.5])).unwrap();
        assert_eq!(s, DyadicRational::new(3, 1));
    }

    #[test]
    fn signed_sum_length_mismatch() {
        let c = cfg(2, 1, 0);
        assert!(matches!(
            c.signed_sum(&input(&[0.5])),
            Err(Error::LengthMismatch { expected: 2, got: 1 })
        ));
    }

    #[test]
    fn classify_boundary_uses_geq() {
        let c = cfg(2, 1, 0);
        assert_eq!(c.classify(&input(&[0.5, 0.5])).unwrap(), ClassLabel::One);
        assert_eq!(c.classify(&input(&[0.25, 0.75])).unwrap(), ClassLabel::Zero);
        let c = ProblemConfig::new(4, 2, DyadicRational::from_int(1)).unwrap();
        assert_eq!(c.classify(&input(&[0.9, 0.9, 0.1, 0.1])).unwrap(), ClassLabel::One);
    }

    #[test]
    fn gamma_examples() {
        assert_eq!(cfg(32, 16, 0).gamma(), 0.0);
        assert_eq!(ProblemConfig::new(4, 2, DyadicRational::from_int(1)).unwrap().gamma(), 0.25);
        assert_eq!(cfg(8, 2, 0).gamma(), 0.25);
    }

    #[test]
    fn config_rejects_trivial_thresholds() {
        assert!(ProblemConfig::new(2, 1, DyadicRational::from_int(1)).is_err());
        assert!(ProblemConfig::new(2, 1, DyadicRational::from_int(-1)).is_err());
        assert!(ProblemConfig::new(4, 2, DyadicRational::from_int(2)).is_err());
        assert!(ProblemConfig::new(4, 2, DyadicRational::new(-5, 1)).is_err()); // -2.5
        assert!(ProblemConfig::new(4, 2, DyadicRational::new(3, 1)).is_ok()); // 1.5
        assert!(ProblemConfig::new(1, 1, DyadicRational::ZERO).is_err());
        assert!(ProblemConfig::new(4, 5, DyadicRational::ZERO).is_err());
    }

    #[test]
    fn config_parse_roundtrip() {
        let c: ProblemConfig = "n=32 m=16 a=0".parse().unwrap();
        assert_eq!((c.n(), c.m()), (32, 16));
        let c: ProblemConfig = "n=4 m=2 a=3/2^1".parse().unwrap();
        assert_eq!(c.threshold(), DyadicRational::new(3, 1));
        assert!("n=4 m=2".parse::<ProblemConfig>().is_err());
    }

    #[test]
    fn unit_fixed_bits() {
        let x = UnitFixed64::from_f64(0.8125).unwrap(); // 0.1101 in binary
        assert_eq!(
            (1..=4).map(|j| x.bit(j)).collect::<Vec<_>>(),
            vec![true, true, false, true]
        );
        let h = UnitFixed64::from_f64(0.5).unwrap();
        assert!(h.bit(1));
        assert!(!h.bit(2));
        assert!(UnitFixed64::from_f64(1.0).is_err());
        assert!(UnitFixed64::from_f64(-0.1).is_err());
    }

    #[test]
    fn classify_matches_signed_sum_sign_exhaustively() {
        // exact-arithmetic consistency over a large random sample
        use rand::{RngCore, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for &(n, m, a) in &[(2u32, 1u32, 0i128), (4, 2, 0), (4, 2, 1), (5, 2, -1), (8, 3, 2)] {
            let c = cfg(n, m, a);
            for _ in 0..200_000 {
                let x = InputVector((0..n).map(|_| UnitFixed64(rng.next_u64())).collect());
                let s = c.signed_sum(&x).unwrap();
                let expect = ClassLabel::from(s >= c.threshold());
                assert_eq!(c.classify(&x).unwrap(), expect);
            }
        }
    }

    #[test]
    fn weight_permutation_leaves_signed_sum_distribution_unchanged() {
        // Two-sample Kolmogorov-Smirnov check: H+ = {1..m} versus a permuted
        // weight pattern, independent draws.
        use rand::{RngCore, SeedableRng};
        let (n, m, reps) = (6usize, 3usize, 100_000usize);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let perm_weights = [-1i64, 1, -1, 1, 1, -1]; // same multiset of signs
        let mut sample = |weights: &dyn Fn(usize) -> i64| -> Vec<f64> {
            let mut out = Vec::with_capacity(reps);
            for _ in 0..reps {
                let mut s = 0i128;
                for i in 0..n {
                    s += weights(i) as i128 * rng.next_u64() as i128;
                }
                out.push(s as f64);
            }
            out.sort_by(|a, b| a.partial_cmp(b).unwrap());
            out
        };
        let lead = sample(&|i| if i < m { 1 } else { -1 });
        let perm = sample(&|i| perm_weights[i]);
        // KS statistic over the merged grid
        let mut d = 0f64;
        let (mut i, mut j) = (0usize, 0usize);
        while i < lead.len() && j < perm.len() {
            if lead[i] <= perm[j] {
                i += 1;
            } else {
                j += 1;
            }
            d = d.max((i as f64 / reps as f64 - j as f64 / reps as f64).abs());
        }
        // c(alpha=1e-3) * sqrt(2/reps) ~ 1.95 * 0.00447; allow slack
        assert!(d < 2.2 * (2.0 / reps as f64).sqrt(), "KS statistic too large: {d}");
    }

    proptest! {
        #[test]
        fn dyadic_ordering_matches_rational_reference(
            n1 in -1_000_000i128..1_000_000, e1 in 0u32..40,
            n2 in -1_000_000i128..1_000_000, e2 in 0u32..40,
        ) {
            let a = DyadicRational::new(n1, e1);
            let b = DyadicRational::new(n2, e2);
            // reference: cross-multiplied integer comparison
            let lhs = n1 << e2;
            let rhs = n2 << e1;
            prop_assert_eq!(a.cmp(&b), lhs.cmp(&rhs));
            prop_assert_eq!(a.add(&b).sub(&b), a);
            prop_assert_eq!(a.double(), a.add(&a));
        }

        #[test]
        fn unit_fixed_bit_matches_doubling_recurrence(raw in any::<u64>()) {
            // the shift/mask extraction equals the floor(2x) recurrence
            let x = UnitFixed64(raw);
            let mut cur = raw as u128; // value over 2^64
            for j in 1..=64u32 {
                let doubled = cur << 1;
                let bit = doubled >> 64 != 0;
                cur = doubled & ((1u128 << 64) - 1);
                prop_assert_eq!(x.bit(j), bit);
            }
        }
    }
}
