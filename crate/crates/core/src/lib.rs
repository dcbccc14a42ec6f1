//! Protocols and analysis for distributed threshold classification.
//!
//! A network of `n` nodes each holds one uniform observation in `[0,1)`;
//! the task is to evaluate a signed-sum threshold classifier whose value
//! depends on all of them, while exchanging as few bits as possible. This
//! crate implements and analyzes two families of schemes:
//!
//! - [`interactive`]: the multi-round bit-exchange protocol, which is
//!   zero-error with a random stopping time. Its mean stopping time is
//!   computed exactly as a Markov absorption time ([`exact`]) and
//!   approximated in closed form via the central limit theorem
//!   ([`approx`]).
//! - [`oneway`]: single-shot uniform quantization with a leader-side
//!   decision, trading a controlled error probability for a fixed rate.
//!
//! [`bounds`] provides entropy lower bounds on the interactive sum rate and
//! [`montecarlo`] a deterministic parallel simulation harness. All protocol
//! decisions are made in exact dyadic arithmetic ([`model`]).

pub mod approx;
pub mod bounds;
pub mod error;
pub mod exact;
pub mod interactive;
pub mod model;
pub mod montecarlo;
pub mod oneway;

pub use error::{Error, Result};
pub use model::{ClassLabel, DyadicRational, InputVector, ProblemConfig, UnitFixed64};
