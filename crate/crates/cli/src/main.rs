//! `netclass` — drives the protocol simulators and analyses from the
//! command line, emitting plot-ready CSV or JSON.

mod commands;

use clap::{Parser, Subcommand, ValueEnum};
use netclass_core::interactive::{DownlinkCost, RateAccounting};
use netclass_core::Error;

#[derive(Parser)]
#[command(
    name = "netclass",
    version,
    about = "Distributed threshold classification: interactive and one-way protocol analysis"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// Master seed for all Monte Carlo estimates.
    #[arg(long, global = true, default_value_t = 42)]
    pub seed: u64,

    /// Repetitions per Monte Carlo data point.
    #[arg(long, global = true, default_value_t = 20_000)]
    pub reps: u64,

    /// Output representation for tabular subcommands.
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    pub format: Format,

    /// Downlink accounting for the leader's ternary feedback.
    #[arg(long, global = true, value_enum, default_value_t = DownlinkArg::Log3)]
    pub downlink: DownlinkArg,

    /// Two-node reporting mode where the leader doubles as a sensor node
    /// (2 bits per round).
    #[arg(long = "n2-paper-accounting", global = true)]
    pub n2_paper_accounting: bool,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DownlinkArg {
    /// Ideal ternary cost, log2(3) bits per node per round.
    Log3,
    /// Realizable 2-bit encoding.
    TwoBit,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum VariantArg {
    Oneway,
    OnewayPlus,
}

#[derive(Subcommand)]
pub enum Command {
    /// Exact mean stopping times vs Monte Carlo over all interior integer
    /// thresholds.
    Exact {
        #[arg(long)]
        n: u32,
        #[arg(long)]
        m: u32,
    },

    /// Stopping-time growth sweep over network sizes at fixed weight and
    /// threshold ratios.
    Growth {
        /// Comma-separated node counts, e.g. 8,16,32,64.
        #[arg(long = "n-list", value_delimiter = ',', required = true)]
        n_list: Vec<u32>,
        /// Positive-weight fraction m/n.
        #[arg(long, allow_negative_numbers = true)]
        beta: f64,
        /// Threshold fraction a/n.
        #[arg(long, allow_negative_numbers = true, default_value_t = 0.0)]
        alpha: f64,
        #[arg(long = "k-max", default_value_t = 64)]
        k_max: u32,
    },

    /// Gaussian approximation of the mean stopping time.
    Approx {
        #[arg(long)]
        n: u32,
        #[arg(long)]
        m: Option<u32>,
        /// Threshold, `<int>` or `<int>/2^<int>`.
        #[arg(long, allow_hyphen_values = true)]
        a: Option<String>,
        /// Normalized offset, used instead of --m/--a.
        #[arg(long, allow_negative_numbers = true)]
        gamma: Option<f64>,
        #[arg(long = "k-max", default_value_t = 64)]
        k_max: u32,
    },

    /// One-way protocol: evaluate a fixed resolution or plan one for a
    /// target error probability.
    Oneway {
        #[arg(long)]
        n: u32,
        #[arg(long)]
        m: u32,
        /// Threshold, `<int>` or `<int>/2^<int>`.
        #[arg(long, allow_hyphen_values = true, default_value = "0")]
        a: String,
        /// Target error probability (plans the resolution).
        #[arg(long = "pe-target", conflicts_with = "bins")]
        pe_target: Option<f64>,
        /// Quantizer bins per node (evaluates directly).
        #[arg(long = "M")]
        bins: Option<u64>,
        #[arg(long, value_enum, default_value_t = VariantArg::Oneway)]
        variant: VariantArg,
    },

    /// Entropy lower bounds on the interactive sum rate.
    Bounds {
        #[arg(long)]
        n: u32,
        #[arg(long)]
        m: u32,
        /// Threshold, `<int>` or `<int>/2^<int>`.
        #[arg(long, allow_hyphen_values = true, default_value = "0")]
        a: String,
    },

    /// Sum rates of the interactive and one-way protocols side by side
    /// (balanced configuration, threshold zero).
    Compare {
        #[arg(long = "n-list", value_delimiter = ',', required = true)]
        n_list: Vec<u32>,
        #[arg(long = "pe-target")]
        pe_target: f64,
    },

    /// Stopping-time tail probabilities next to the per-round window
    /// probabilities that dominate them.
    Tail {
        #[arg(long)]
        n: u32,
        #[arg(long)]
        m: u32,
        /// Threshold, `<int>` or `<int>/2^<int>`.
        #[arg(long, allow_hyphen_values = true, default_value = "0")]
        a: String,
        #[arg(long = "k-max", default_value_t = 16)]
        k_max: u32,
    },

    /// Trace a single interactive session round by round.
    Session {
        #[arg(long)]
        n: Option<u32>,
        #[arg(long)]
        m: Option<u32>,
        /// Threshold, `<int>` or `<int>/2^<int>`.
        #[arg(long, allow_hyphen_values = true)]
        a: Option<String>,
        /// One-line configuration, `n=<int> m=<int> a=<int>[/2^<int>]`.
        #[arg(long, conflicts_with_all = ["n", "m", "a"])]
        config: Option<String>,
        /// Explicit input vector, e.g. 0.75,0.25. Sampled from the seed
        /// when omitted.
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        x: Option<Vec<f64>>,
        #[arg(long = "max-rounds", default_value_t = 64)]
        max_rounds: u32,
    },
}

impl Cli {
    pub fn accounting(&self) -> RateAccounting {
        RateAccounting {
            downlink: match self.downlink {
                DownlinkArg::Log3 => DownlinkCost::Log3,
                DownlinkArg::TwoBit => DownlinkCost::TwoBit,
            },
            n2_paper: self.n2_paper_accounting,
        }
    }
}

fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Numerical(_) => 1,
        _ => 2,
    }
}

fn main() {
    if let Ok(value) = std::env::var("NETCLASS_THREADS") {
        if let Ok(threads) = value.trim().parse::<usize>() {
            if threads >= 1 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
            }
        }
    }
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(output) => print!("{output}"),
        Err(err) => {
            eprintln!("error: {err}");
            std::process::exit(exit_code(&err));
        }
    }
}
