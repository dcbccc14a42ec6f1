//! Event-accurate simulation of the multi-round bit-exchange protocol.
//!
//! Each round every node sends the next digit of its input's binary
//! expansion; the leader accumulates the signed digit sum into a running
//! dyadic aggregate and answers stop-0, stop-1 or continue. Two equivalent
//! formulations are computed side by side every round — the aggregate tested
//! against shrinking absolute thresholds, and the recursive form where the
//! threshold itself is rescaled — and the session aborts if they ever
//! disagree. A decided session's label is provably equal to the centralized
//! classifier's output; inputs whose signed sum hits the threshold exactly
//! cannot be resolved within the 64-bit input precision and are surfaced as
//! `PrecisionExhausted`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{ClassLabel, DyadicRational, InputVector, ProblemConfig, UnitFixed64};

/// Bits of downlink feedback per node per round: the ternary signal costs
/// `log2(3)` under ideal accounting.
pub const LOG2_3: f64 = 1.584962500721156;

/// Default round limit: the input precision.
pub const MAX_ROUNDS: u32 = 64;

/// Leader feedback at the end of a round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Signal {
    Stop0,
    Stop1,
    Continue,
}

impl Signal {
    pub fn as_str(&self) -> &'static str {
        match self {
            Signal::Stop0 => "stop0",
            Signal::Stop1 => "stop1",
            Signal::Continue => "continue",
        }
    }
}

/// How a session ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionOutcome {
    Decided,
    PrecisionExhausted,
}

/// Everything observable in one round.
#[derive(Debug, Clone)]
pub struct RoundRecord {
    /// Round index `j >= 1`.
    pub round: u32,
    /// Per-node bits sent this round.
    pub bits: Vec<bool>,
    /// Signed bit sum, in `[-(n-m), m]`.
    pub bit_sum: i64,
    /// Running aggregate `Z(j) = Z(j-1) + bit_sum * 2^-j`.
    pub aggregate: DyadicRational,
    /// Stop-0 threshold `a - m * 2^-j`.
    pub lower: DyadicRational,
    /// Stop-1 threshold `a + (n-m) * 2^-j`.
    pub upper: DyadicRational,
    /// Effective threshold of the recursive description entering this round.
    pub threshold: DyadicRational,
    pub signal: Signal,
}

/// Full record of one session.
#[derive(Debug, Clone)]
pub struct SessionTrace {
    pub config: ProblemConfig,
    pub input: InputVector,
    pub rounds: Vec<RoundRecord>,
    /// Number of rounds executed; equals the stopping time when decided.
    pub stop_time: u32,
    pub label: Option<ClassLabel>,
    pub outcome: SessionOutcome,
}

impl SessionTrace {
    pub fn is_decided(&self) -> bool {
        self.outcome == SessionOutcome::Decided
    }

    /// Uplink cost: one bit per node per round.
    pub fn uplink_bits(&self) -> f64 {
        self.config.n() as f64 * self.stop_time as f64
    }

    /// Downlink cost under ideal ternary accounting (fractional bits).
    pub fn downlink_bits(&self) -> f64 {
        self.config.n() as f64 * LOG2_3 * self.stop_time as f64
    }
}

/// Downlink cost model for the leader's ternary feedback.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DownlinkCost {
    /// `log2(3)` bits per node per round (ideal, fractional).
    Log3,
    /// A realizable 2-bit encoding per node per round.
    TwoBit,
}

impl DownlinkCost {
    pub fn bits_per_node_round(&self) -> f64 {
        match self {
            DownlinkCost::Log3 => LOG2_3,
            DownlinkCost::TwoBit => 2.0,
        }
    }
}

/// Session rate accounting options.
#[derive(Debug, Clone, Copy)]
pub struct RateAccounting {
    pub downlink: DownlinkCost,
    /// Two-node special accounting where the leader is one of the sensors:
    /// one uplink bit plus one feedback bit per round, i.e. `2T` bits total.
    pub n2_paper: bool,
}

impl Default for RateAccounting {
    fn default() -> Self {
        RateAccounting { downlink: DownlinkCost::Log3, n2_paper: false }
    }
}

/// Digit `j` of the binary expansion of `x`; rounds beyond the stored
/// precision are an explicit error rather than silently-zero bits.
pub fn bit_expand(x: UnitFixed64, j: u32) -> Result<bool> {
    if !(1..=MAX_ROUNDS).contains(&j) {
        return Err(Error::Unsupported(format!("round {j} exceeds the 64-bit input precision")));
    }
    Ok(x.bit(j))
}

/// Direct description: test the aggregate against the round-`j` thresholds.
pub fn decide_signal(config: &ProblemConfig, aggregate: &DyadicRational, j: u32) -> Signal {
    let (n, m) = (config.n() as i128, config.m() as i128);
    let a = config.threshold();
    let lower = a.sub(&DyadicRational::scaled_int(m, j));
    let upper = a.add(&DyadicRational::scaled_int(n - m, j));
    if *aggregate <= lower {
        Signal::Stop0
    } else if *aggregate >= upper {
        Signal::Stop1
    } else {
        Signal::Continue
    }
}

/// Recursive description: test the bit sum against the rescaled threshold;
/// on continue, the threshold advances to `2a - bit_sum`.
pub fn recursive_signal(
    config: &ProblemConfig,
    bit_sum: i64,
    threshold: &DyadicRational,
) -> (Signal, DyadicRational) {
    let (n, m) = (config.n() as i128, config.m() as i128);
    let doubled = threshold.double();
    let b = DyadicRational::from_int(bit_sum as i128);
    if b <= doubled.sub(&DyadicRational::from_int(m)) {
        (Signal::Stop0, *threshold)
    } else if b >= doubled.add(&DyadicRational::from_int(n - m)) {
        (Signal::Stop1, *threshold)
    } else {
        (Signal::Continue, doubled.sub(&b))
    }
}

/// Runs one session, evaluating both protocol descriptions each round and
/// asserting their equivalence and the aggregate's sandwich bounds around
/// the true signed sum.
pub fn run_session(config: &ProblemConfig, x: &InputVector, max_rounds: u32) -> Result<SessionTrace> {
    let signed_sum = config.signed_sum(x)?;
    let max_rounds = max_rounds.min(MAX_ROUNDS);
    let (n, m) = (config.n() as i128, config.m() as i128);

    let mut rounds = Vec::new();
    let mut aggregate = DyadicRational::ZERO;
    let mut threshold = config.threshold();
    let mut label = None;
    let mut outcome = SessionOutcome::PrecisionExhausted;

    for j in 1..=max_rounds {
        let bits: Vec<bool> =
            x.values().iter().map(|v| bit_expand(*v, j)).collect::<Result<_>>()?;
        let bit_sum: i64 = bits
            .iter()
            .enumerate()
            .map(|(i, &b)| if b { config.weight(i) } else { 0 })
            .sum();
        aggregate = aggregate.add(&DyadicRational::scaled_int(bit_sum as i128, j));

        let lower = config.threshold().sub(&DyadicRational::scaled_int(m, j));
        let upper = config.threshold().add(&DyadicRational::scaled_int(n - m, j));
        let direct = decide_signal(config, &aggregate, j);
        let (recursive, next_threshold) = recursive_signal(config, bit_sum, &threshold);
        assert_eq!(
            direct, recursive,
            "protocol descriptions disagree at round {j} of {config}"
        );

        // The aggregate brackets the signed sum: strict on each side as soon
        // as the corresponding weight group is non-empty.
        let slack_lo = aggregate.sub(&DyadicRational::scaled_int(n - m, j));
        let slack_hi = aggregate.add(&DyadicRational::scaled_int(m, j));
        if n - m > 0 {
            assert!(slack_lo < signed_sum, "aggregate lower bound violated at round {j}");
        } else {
            assert!(slack_lo <= signed_sum, "aggregate lower bound violated at round {j}");
        }
        if m > 0 {
            assert!(signed_sum < slack_hi, "aggregate upper bound violated at round {j}");
        } else {
            assert!(signed_sum <= slack_hi, "aggregate upper bound violated at round {j}");
        }

        rounds.push(RoundRecord {
            round: j,
            bits,
            bit_sum,
            aggregate,
            lower,
            upper,
            threshold,
            signal: direct,
        });

        match direct {
            Signal::Stop0 => {
                label = Some(ClassLabel::Zero);
                outcome = SessionOutcome::Decided;
                break;
            }
            Signal::Stop1 => {
                label = Some(ClassLabel::One);
                outcome = SessionOutcome::Decided;
                break;
            }
            Signal::Continue => threshold = next_threshold,
        }
    }

    Ok(SessionTrace {
        config: config.clone(),
        input: x.clone(),
        stop_time: rounds.len() as u32,
        rounds,
        label,
        outcome,
    })
}

/// Session cost under the default accounting: `n (1 + log2 3) T` bits.
pub fn session_sum_rate(trace: &SessionTrace) -> f64 {
    session_rate(trace, RateAccounting::default())
}

/// Session cost in bits under a chosen accounting.
pub fn session_rate(trace: &SessionTrace, accounting: RateAccounting) -> f64 {
    let t = trace.stop_time as f64;
    if accounting.n2_paper && trace.config.n() == 2 {
        return 2.0 * t;
    }
    trace.config.n() as f64 * (1.0 + accounting.downlink.bits_per_node_round()) * t
}

/// Mean rate in bits for a given mean stopping time.
pub fn mean_rate(n: u32, mean_stop: f64, accounting: RateAccounting) -> f64 {
    if accounting.n2_paper && n == 2 {
        return 2.0 * mean_stop;
    }
    n as f64 * (1.0 + accounting.downlink.bits_per_node_round()) * mean_stop
}

/// Aggregate path without stopping: `(bit_sum, aggregate)` for rounds
/// `1..=k_max`. Used for tail-probability and moment estimates that condition
/// on the unstopped process.
pub fn aggregate_trajectory(
    config: &ProblemConfig,
    x: &InputVector,
    k_max: u32,
) -> Result<Vec<(i64, DyadicRational)>> {
    if x.len() != config.n() as usize {
        return Err(Error::LengthMismatch { expected: config.n() as usize, got: x.len() });
    }
    let k_max = k_max.min(MAX_ROUNDS);
    let mut out = Vec::with_capacity(k_max as usize);
    let mut aggregate = DyadicRational::ZERO;
    for j in 1..=k_max {
        let bit_sum: i64 = x
            .values()
            .iter()
            .enumerate()
            .map(|(i, v)| if v.bit(j) { config.weight(i) } else { 0 })
            .sum();
        aggregate = aggregate.add(&DyadicRational::scaled_int(bit_sum as i128, j));
        out.push((bit_sum, aggregate));
    }
    Ok(out)
}

/// One CSV row per round: `session_id,j,B,Z_num,Z_exp,a_rec_num,a_rec_exp,signal`.
pub fn write_trace_csv(trace: &SessionTrace, session_id: u64, out: &mut String) {
    for r in &trace.rounds {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            session_id,
            r.round,
            r.bit_sum,
            r.aggregate.numerator(),
            r.aggregate.exponent(),
            r.threshold.numerator(),
            r.threshold.exponent(),
            r.signal.as_str(),
        ));
    }
}

pub const TRACE_CSV_HEADER: &str = "session_id,j,B,Z_num,Z_exp,a_rec_num,a_rec_exp,signal";

#[derive(Serialize)]
struct SessionSummary {
    #[serde(rename = "T")]
    stop_time: u32,
    label: Option<u8>,
    uplink_bits: f64,
    downlink_bits: f64,
    outcome: SessionOutcome,
}

/// Summary JSON: `{T, label, uplink_bits, downlink_bits, outcome}`.
pub fn session_summary_json(trace: &SessionTrace) -> String {
    serde_json::to_string(&SessionSummary {
        stop_time: trace.stop_time,
        label: trace.label.map(|l| l.as_bit()),
        uplink_bits: trace.uplink_bits(),
        downlink_bits: trace.downlink_bits(),
        outcome: trace.outcome,
    })
    .expect("session summary serializes")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{RngCore, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cfg(n: u32, m: u32, a: i128) -> ProblemConfig {
        ProblemConfig::new(n, m, DyadicRational::from_int(a)).unwrap()
    }

    fn input(values: &[f64]) -> InputVector {
        InputVector::from_f64s(values).unwrap()
    }

    #[test]
    fn bit_expand_examples() {
        let x = UnitFixed64::from_f64(0.5).unwrap();
        assert!(bit_expand(x, 1).unwrap());
        let q = UnitFixed64::from_f64(0.25).unwrap();
        assert!(!bit_expand(q, 1).unwrap());
        assert!(bit_expand(q, 2).unwrap());
        let v = UnitFixed64::from_f64(0.8125).unwrap();
        let bits: Vec<bool> = (1..=4).map(|j| bit_expand(v, j).unwrap()).collect();
        assert_eq!(bits, vec![true, true, false, true]);
        assert!(bit_expand(x, 65).is_err());
    }

    #[test]
    fn decide_signal_boundary_cases() {
        let c = cfg(2, 1, 0);
        assert_eq!(decide_signal(&c, &DyadicRational::new(-1, 1), 1), Signal::Stop0);
        assert_eq!(decide_signal(&c, &DyadicRational::new(1, 1), 1), Signal::Stop1);
        assert_eq!(decide_signal(&c, &DyadicRational::ZERO, 1), Signal::Continue);
    }

    #[test]
    fn recursive_signal_examples() {
        let c = cfg(2, 1, 0);
        let zero = DyadicRational::ZERO;
        assert_eq!(recursive_signal(&c, -1, &zero).0, Signal::Stop0);
        assert_eq!(recursive_signal(&c, 1, &zero).0, Signal::Stop1);
        let (s, next) = recursive_signal(&c, 0, &zero);
        assert_eq!(s, Signal::Continue);
        assert_eq!(next, zero);

        let c = cfg(4, 2, 0);
        let (s, next) = recursive_signal(&c, 1, &zero);
        assert_eq!(s, Signal::Continue);
        assert_eq!(next, DyadicRational::from_int(-1));

        let c = cfg(4, 2, 1);
        let one = DyadicRational::from_int(1);
        let (s, next) = recursive_signal(&c, 2, &one);
        assert_eq!(s, Signal::Continue);
        assert_eq!(next, DyadicRational::ZERO);
    }

    #[test]
    fn recursive_signal_golden_table_n4_m2() {
        // Exhaustive truth table for n=4, m=2 over all (threshold, bit sum)
        // pairs, frozen from brute-force evaluation of the stop inequalities
        // stop0: B <= 2a - 2, stop1: B >= 2a + 2, else continue with 2a - B.
        let c = cfg(4, 2, 0);
        #[rustfmt::skip]
        let golden: [(i128, i64, Signal, i128); 15] = [
            (-1, -2, Signal::Continue,  0), (-1, -1, Signal::Continue, -1),
            (-1,  0, Signal::Stop1, -1), (-1,  1, Signal::Stop1, -1),
            (-1,  2, Signal::Stop1, -1),
            ( 0, -2, Signal::Stop0,  0), ( 0, -1, Signal::Continue,  1),
            ( 0,  0, Signal::Continue,  0), ( 0,  1, Signal::Continue, -1),
            ( 0,  2, Signal::Stop1,  0),
            ( 1, -2, Signal::Stop0,  1), ( 1, -1, Signal::Stop0,  1),
            ( 1,  0, Signal::Stop0,  1), ( 1,  1, Signal::Continue,  1),
            ( 1,  2, Signal::Continue,  0),
        ];
        // independent check of the frozen rows against the inequalities
        for &(a, b, want_signal, _) in &golden {
            let b = b as i128;
            let expect = if b <= 2 * a - 2 {
                Signal::Stop0
            } else if b >= 2 * a + 2 {
                Signal::Stop1
            } else {
                Signal::Continue
            };
            assert_eq!(want_signal, expect, "golden row a={a} B={b} inconsistent");
        }
        for &(a, b, want_signal, want_next) in &golden {
            let (signal, next) = recursive_signal(&c, b, &DyadicRational::from_int(a));
            assert_eq!(signal, want_signal, "a={a} B={b}");
            if want_signal == Signal::Continue {
                assert_eq!(next, DyadicRational::from_int(want_next), "a={a} B={b}");
            }
        }
    }

    #[test]
    fn session_one_round_stop() {
        let c = cfg(2, 1, 0);
        let t = run_session(&c, &input(&[0.75, 0.25]), 64).unwrap();
        assert_eq!(t.stop_time, 1);
        assert_eq!(t.label, Some(ClassLabel::One));
        assert_eq!(t.outcome, SessionOutcome::Decided);
        assert_eq!(t.rounds[0].bit_sum, 1);
        assert_eq!(t.rounds[0].aggregate, DyadicRational::new(1, 1));
    }

    #[test]
    fn session_on_boundary_input_exhausts_precision() {
        // signed sum exactly equal to the threshold: the aggregate stays
        // strictly inside the continue window at every round, so the session
        // cannot decide within the input precision
        let c = cfg(2, 1, 0);
        let t = run_session(&c, &input(&[0.5, 0.5]), 64).unwrap();
        assert_eq!(t.outcome, SessionOutcome::PrecisionExhausted);
        assert_eq!(t.stop_time, 64);
        assert_eq!(t.label, None);
        for r in &t.rounds {
            assert_eq!(r.signal, Signal::Continue);
            assert_eq!(r.aggregate, DyadicRational::ZERO);
        }
    }

    #[test]
    fn session_rates() {
        // (0.75, 0.625): round 1 bits (1,1) cancel, round 2 bits (1,0) give
        // Z = 1/4 = U(2), so T = 2.
        let c = cfg(2, 1, 0);
        let t = run_session(&c, &input(&[0.75, 0.625]), 64).unwrap();
        assert_eq!(t.stop_time, 2);
        let r = session_sum_rate(&t);
        assert!((r - 2.0 * (1.0 + LOG2_3) * 2.0).abs() < 1e-12);
        assert!((r - 10.339850).abs() < 1e-5);
        let paper = session_rate(&t, RateAccounting { downlink: DownlinkCost::Log3, n2_paper: true });
        assert_eq!(paper, 4.0);
        let two_bit =
            session_rate(&t, RateAccounting { downlink: DownlinkCost::TwoBit, n2_paper: false });
        assert_eq!(two_bit, 2.0 * 3.0 * 2.0);
        assert!((mean_rate(256, 6.0, RateAccounting::default()) - 3970.5).abs() < 0.1);
    }

    #[test]
    fn hand_traced_threshold_equality_rounds() {
        // x = (0.5, 0.25): round 1 bits (1,0) -> B=1, Z=1/2 = U(1) -> stop1
        let c = cfg(2, 1, 0);
        let t = run_session(&c, &input(&[0.5, 0.25]), 64).unwrap();
        assert_eq!(t.stop_time, 1);
        assert_eq!(t.label, Some(ClassLabel::One));

        // x = (0.25, 0.5): round 1 bits (0,1) -> B=-1, Z=-1/2 = L(1) -> stop0
        let t = run_session(&c, &input(&[0.25, 0.5]), 64).unwrap();
        assert_eq!(t.stop_time, 1);
        assert_eq!(t.label, Some(ClassLabel::Zero));
        assert_eq!(c.classify(&input(&[0.25, 0.5])).unwrap(), ClassLabel::Zero);
    }

    #[test]
    fn decided_sessions_match_classifier() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for &(n, m, a_num, a_exp) in
            &[(2u32, 1u32, 0i128, 0u32), (4, 2, 0, 0), (4, 2, 1, 0), (4, 2, 1, 1), (8, 3, -2, 0)]
        {
            let c = ProblemConfig::new(n, m, DyadicRational::new(a_num, a_exp)).unwrap();
            for _ in 0..5_000 {
                let x = InputVector((0..n).map(|_| UnitFixed64(rng.next_u64())).collect());
                let t = run_session(&c, &x, 64).unwrap();
                assert_eq!(t.outcome, SessionOutcome::Decided);
                assert_eq!(t.label.unwrap(), c.classify(&x).unwrap());
            }
        }
    }

    #[test]
    fn integer_threshold_recursion_stays_interior() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let c = cfg(8, 3, 1);
        for _ in 0..2_000 {
            let x = InputVector((0..8).map(|_| UnitFixed64(rng.next_u64())).collect());
            let t = run_session(&c, &x, 64).unwrap();
            for r in &t.rounds {
                let a = r.threshold.as_integer().expect("integer threshold stays integer");
                assert!(a > -(8 - 3) && a < 3, "threshold {a} escaped the interior");
            }
        }
    }

    #[test]
    fn geometric_tail_for_two_nodes() {
        // Pr[T > k] = 2^-k within 3 binomial standard errors
        let c = cfg(2, 1, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let reps = 100_000u32;
        let mut counts = [0u32; 11];
        for _ in 0..reps {
            let x = InputVector((0..2).map(|_| UnitFixed64(rng.next_u64())).collect());
            let t = run_session(&c, &x, 64).unwrap();
            assert_eq!(t.outcome, SessionOutcome::Decided);
            for k in 1..=10u32 {
                if t.stop_time > k {
                    counts[k as usize] += 1;
                }
            }
        }
        for k in 1..=10u32 {
            let p = 0.5f64.powi(k as i32);
            let se = (p * (1.0 - p) / reps as f64).sqrt();
            let observed = counts[k as usize] as f64 / reps as f64;
            assert!(
                (observed - p).abs() <= 3.0 * se,
                "tail k={k}: observed {observed}, expected {p} +/- {}",
                3.0 * se
            );
        }
    }

    #[test]
    fn trace_csv_and_summary_json() {
        let c = cfg(2, 1, 0);
        let t = run_session(&c, &input(&[0.75, 0.25]), 64).unwrap();
        let mut csv = String::new();
        write_trace_csv(&t, 7, &mut csv);
        assert_eq!(csv, "7,1,1,1,1,0,0,stop1\n");
        let json = session_summary_json(&t);
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(v["T"], 1);
        assert_eq!(v["label"], 1);
        assert_eq!(v["outcome"], "decided");
        assert!((v["downlink_bits"].as_f64().unwrap() - 2.0 * LOG2_3).abs() < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn descriptions_agree_and_sessions_are_zero_error(
            seed in any::<u64>(),
            cfg_idx in 0usize..6,
        ) {
            let configs = [
                (2u32, 1u32, DyadicRational::ZERO),
                (4, 2, DyadicRational::ZERO),
                (4, 2, DyadicRational::new(3, 1)),
                (8, 4, DyadicRational::from_int(2)),
                (8, 5, DyadicRational::new(-1, 2)),
                (32, 16, DyadicRational::ZERO),
            ];
            let (n, m, a) = configs[cfg_idx];
            let c = ProblemConfig::new(n, m, a).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = InputVector((0..n).map(|_| UnitFixed64(rng.next_u64())).collect());
            // run_session asserts description equivalence and sandwich bounds
            let t = run_session(&c, &x, 64).unwrap();
            prop_assert!(t.is_decided());
            prop_assert_eq!(t.label.unwrap(), c.classify(&x).unwrap());
            // aggregate recursion holds round by round
            let mut z = DyadicRational::ZERO;
            for r in &t.rounds {
                z = z.add(&DyadicRational::scaled_int(r.bit_sum as i128, r.round));
                prop_assert_eq!(r.aggregate, z);
                prop_assert!(r.bit_sum <= m as i64 && r.bit_sum >= -((n - m) as i64));
            }
        }
    }
}
