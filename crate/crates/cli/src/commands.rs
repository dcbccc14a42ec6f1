//! Subcommand implementations. Each builds its full output as a string so
//! stdout is written once; all randomness flows through per-trial seed
//! streams, making every command byte-reproducible for fixed flags.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::Serialize;
use serde_json::json;

use netclass_core::error::{Error, Result};
use netclass_core::interactive::{self, SessionOutcome};
use netclass_core::model::{DyadicRational, InputVector, ProblemConfig};
use netclass_core::montecarlo::{estimate_mean_stop, sample_input, SeedSpec};
use netclass_core::oneway::{self, OneWayVariant};
use netclass_core::{approx, bounds, exact};

use crate::{Cli, Command, Format, VariantArg};

pub fn run(cli: &Cli) -> Result<String> {
    match &cli.command {
        Command::Exact { n, m } => cmd_exact(cli, *n, *m),
        Command::Growth { n_list, beta, alpha, k_max } => {
            cmd_growth(cli, n_list, *beta, *alpha, *k_max)
        }
        Command::Approx { n, m, a, gamma, k_max } => {
            cmd_approx(cli, *n, *m, a.as_deref(), *gamma, *k_max)
        }
        Command::Oneway { n, m, a, pe_target, bins, variant } => {
            cmd_oneway(cli, *n, *m, a, *pe_target, *bins, *variant)
        }
        Command::Bounds { n, m, a } => cmd_bounds(cli, *n, *m, a),
        Command::Compare { n_list, pe_target } => cmd_compare(cli, n_list, *pe_target),
        Command::Tail { n, m, a, k_max } => cmd_tail(cli, *n, *m, a, *k_max),
        Command::Session { n, m, a, config, x, max_rounds } => {
            cmd_session(cli, *n, *m, a.as_deref(), config.as_deref(), x.as_deref(), *max_rounds)
        }
    }
}

fn parse_threshold(a: &str) -> Result<DyadicRational> {
    DyadicRational::from_str(a)
}

#[derive(Serialize)]
struct ExactRow {
    a: i64,
    #[serde(rename = "Tbar_exact")]
    tbar_exact: f64,
    #[serde(rename = "Tbar_mc")]
    tbar_mc: f64,
    ci: f64,
    sum_rate_bits: f64,
}

fn cmd_exact(cli: &Cli, n: u32, m: u32) -> Result<String> {
    let table = exact::solve_mean_stop(n, m)?;
    let accounting = cli.accounting();
    let seeds = SeedSpec::new(cli.seed);
    let mut rows = Vec::new();
    for (idx, (a, tbar)) in table.iter().enumerate() {
        let config = ProblemConfig::new(n, m, DyadicRational::from_int(a as i128))?;
        let report = estimate_mean_stop(&config, cli.reps, seeds.derived(idx as u64 + 2).master_seed)?;
        rows.push(ExactRow {
            a,
            tbar_exact: tbar,
            tbar_mc: report.stats.mean(),
            ci: report.stats.ci95_halfwidth(),
            sum_rate_bits: interactive::mean_rate(n, tbar, accounting),
        });
    }
    match cli.format {
        Format::Csv => {
            let mut out = String::new();
            writeln!(out, "# netclass exact n={n} m={m} seed={} reps={}", cli.seed, cli.reps).unwrap();
            writeln!(out, "# residual={:e}", table.residual).unwrap();
            writeln!(out, "a,Tbar_exact,Tbar_mc,ci,sum_rate_bits").unwrap();
            for r in rows {
                writeln!(out, "{},{},{},{},{}", r.a, r.tbar_exact, r.tbar_mc, r.ci, r.sum_rate_bits)
                    .unwrap();
            }
            Ok(out)
        }
        Format::Json => to_json_line(&json!({
            "n": n, "m": m, "seed": cli.seed, "reps": cli.reps,
            "residual": table.residual, "rows": rows,
        })),
    }
}

#[derive(Serialize)]
struct GrowthRow {
    n: u32,
    #[serde(rename = "Tbar_mc")]
    tbar_mc: f64,
    ci: f64,
    #[serde(rename = "Tbar_approx")]
    tbar_approx: f64,
    #[serde(rename = "bound_A")]
    bound: f64,
}

fn cmd_growth(cli: &Cli, n_list: &[u32], beta: f64, alpha: f64, k_max: u32) -> Result<String> {
    let seeds = SeedSpec::new(cli.seed);
    let mut rows = Vec::new();
    for (idx, &n) in n_list.iter().enumerate() {
        let m = beta * n as f64;
        let a = alpha * n as f64;
        if (m - m.round()).abs() > 1e-9 || (a - a.round()).abs() > 1e-9 {
            eprintln!("warning: skipping n={n}: beta*n={m} or alpha*n={a} is not an integer");
            continue;
        }
        let (m, a) = (m.round() as u32, a.round() as i128);
        let config = match ProblemConfig::new(n, m, DyadicRational::from_int(a)) {
            Ok(c) => c,
            Err(err) => {
                eprintln!("warning: skipping n={n}: {err}");
                continue;
            }
        };
        let report = estimate_mean_stop(&config, cli.reps, seeds.derived(idx as u64 + 2).master_seed)?;
        let approx_report = approx::approx_mean_stop(&config, k_max)?;
        rows.push(GrowthRow {
            n,
            tbar_mc: report.stats.mean(),
            ci: report.stats.ci95_halfwidth(),
            tbar_approx: approx_report.approx_mean_stop,
            bound: approx_report.bound,
        });
    }
    match cli.format {
        Format::Csv => {
            let mut out = String::new();
            writeln!(
                out,
                "# netclass growth beta={beta} alpha={alpha} seed={} reps={}",
                cli.seed, cli.reps
            )
            .unwrap();
            writeln!(out, "n,Tbar_mc,ci,Tbar_approx,bound_A").unwrap();
            for r in rows {
                writeln!(out, "{},{},{},{},{}", r.n, r.tbar_mc, r.ci, r.tbar_approx, r.bound).unwrap();
            }
            Ok(out)
        }
        Format::Json => to_json_line(&json!({
            "beta": beta, "alpha": alpha, "seed": cli.seed, "reps": cli.reps, "rows": rows,
        })),
    }
}

fn cmd_approx(
    _cli: &Cli,
    n: u32,
    m: Option<u32>,
    a: Option<&str>,
    gamma: Option<f64>,
    k_max: u32,
) -> Result<String> {
    let report = match (m, a, gamma) {
        (Some(m), a, None) => {
            let a = parse_threshold(a.unwrap_or("0"))?;
            let config = ProblemConfig::new(n, m, a)?;
            approx::approx_mean_stop(&config, k_max)?
        }
        (None, None, Some(g)) => approx::approx_from_gamma(n, g, k_max)?,
        _ => {
            return Err(Error::Parse(
                "give either --m (with optional --a) or --gamma, not both".into(),
            ))
        }
    };
    to_json_line(&report)
}

fn cmd_oneway(
    cli: &Cli,
    n: u32,
    m: u32,
    a: &str,
    pe_target: Option<f64>,
    bins: Option<u64>,
    variant: VariantArg,
) -> Result<String> {
    let config = ProblemConfig::new(n, m, parse_threshold(a)?)?;
    let variant = match variant {
        VariantArg::Oneway => OneWayVariant::OneWay,
        VariantArg::OnewayPlus => OneWayVariant::OneWayPlus,
    };
    match (pe_target, bins) {
        (Some(target), None) => {
            let plan = oneway::plan_rate(&config, target, variant, cli.reps, cli.seed)?;
            to_json_line(&json!({
                "seed": cli.seed, "reps": cli.reps, "pe_target": target,
                "bins": plan.bins, "eq13_floor_bits": plan.eq13_floor_bits,
                "result": plan.result,
            }))
        }
        (None, Some(bins)) => {
            let result = oneway::evaluate(&config, bins, variant, cli.reps, cli.seed)?;
            to_json_line(&json!({ "seed": cli.seed, "reps": cli.reps, "result": result }))
        }
        _ => Err(Error::Parse("give exactly one of --pe-target or --M".into())),
    }
}

fn cmd_bounds(_cli: &Cli, n: u32, m: u32, a: &str) -> Result<String> {
    let config = ProblemConfig::new(n, m, parse_threshold(a)?)?;
    let rect = bounds::max_rectangle_prob(&config)?;
    let (v_star, ratio_min) = bounds::minimize_entropy_ratio();
    let n2_bound = if n == 2 && m == 1 && config.threshold() == DyadicRational::ZERO {
        Some(bounds::sum_rate_lower_bound_n2())
    } else {
        None
    };
    to_json_line(&json!({
        "p1": rect.p1,
        "entropy_floor_bits": rect.entropy_floor_bits,
        "maximizer": { "u": rect.maximizer.0, "w": rect.maximizer.1 },
        "n2_bound_bits": n2_bound,
        "v_star": v_star,
        "ratio_min_bits": ratio_min,
    }))
}

#[derive(Serialize)]
struct CompareRow {
    n: u32,
    rate_interactive: f64,
    rate_oneway: f64,
    rate_oneway_plus: f64,
    eq13_floor: f64,
}

fn cmd_compare(cli: &Cli, n_list: &[u32], pe_target: f64) -> Result<String> {
    let accounting = cli.accounting();
    let seeds = SeedSpec::new(cli.seed);
    let mut rows = Vec::new();
    for (idx, &n) in n_list.iter().enumerate() {
        if n % 2 != 0 {
            return Err(Error::Parse(format!(
                "the comparison sweep needs a balanced configuration; n={n} is odd"
            )));
        }
        let config = ProblemConfig::new(n, n / 2, DyadicRational::ZERO)?;
        let report = estimate_mean_stop(&config, cli.reps, seeds.derived(idx as u64 + 2).master_seed)?;
        // the planner's resolution gives both one-way rates
        let plan = oneway::plan_rate(&config, pe_target, OneWayVariant::OneWay, 0, cli.seed)?;
        let rate_oneway = plan.result.sum_rate_bits;
        rows.push(CompareRow {
            n,
            rate_interactive: report.mean_rate(accounting),
            rate_oneway,
            rate_oneway_plus: rate_oneway + n as f64,
            eq13_floor: plan.eq13_floor_bits,
        });
    }
    match cli.format {
        Format::Csv => {
            let mut out = String::new();
            writeln!(
                out,
                "# netclass compare pe_target={pe_target} seed={} reps={}",
                cli.seed, cli.reps
            )
            .unwrap();
            writeln!(out, "n,rate_interactive,rate_oneway,rate_oneway_plus,eq13_floor").unwrap();
            for r in rows {
                writeln!(
                    out,
                    "{},{},{},{},{}",
                    r.n, r.rate_interactive, r.rate_oneway, r.rate_oneway_plus, r.eq13_floor
                )
                .unwrap();
            }
            Ok(out)
        }
        Format::Json => to_json_line(&json!({
            "pe_target": pe_target, "seed": cli.seed, "reps": cli.reps, "rows": rows,
        })),
    }
}

fn cmd_tail(cli: &Cli, n: u32, m: u32, a: &str, k_max: u32) -> Result<String> {
    let config = ProblemConfig::new(n, m, parse_threshold(a)?)?;
    let report = netclass_core::montecarlo::estimate_tail(&config, k_max, cli.reps, cli.seed)?;
    match cli.format {
        Format::Csv => {
            let mut out = String::new();
            writeln!(out, "# netclass tail {config} seed={} reps={}", cli.seed, cli.reps).unwrap();
            writeln!(out, "k,p_T_gt_k,ci_lo,ci_hi,p_LZU,ci_lo,ci_hi").unwrap();
            for r in &report.rows {
                writeln!(
                    out,
                    "{},{},{},{},{},{},{}",
                    r.k, r.p_stop_gt, r.stop_ci.0, r.stop_ci.1, r.p_window, r.window_ci.0,
                    r.window_ci.1
                )
                .unwrap();
            }
            Ok(out)
        }
        Format::Json => {
            let stats_report = estimate_mean_stop(&config, cli.reps, cli.seed)?;
            let stats = netclass_core::montecarlo::StatsSummary::from(&stats_report.stats);
            to_json_line(&json!({
                "seed": cli.seed, "reps": cli.reps, "stats": stats, "rows": report.rows,
            }))
        }
    }
}

fn cmd_session(
    cli: &Cli,
    n: Option<u32>,
    m: Option<u32>,
    a: Option<&str>,
    config: Option<&str>,
    x: Option<&[f64]>,
    max_rounds: u32,
) -> Result<String> {
    let config = match (config, n, m) {
        (Some(line), None, None) => ProblemConfig::from_str(line)?,
        (None, Some(n), Some(m)) => ProblemConfig::new(n, m, parse_threshold(a.unwrap_or("0"))?)?,
        _ => return Err(Error::Parse("give --config or all of --n, --m, --a".into())),
    };
    let input = match x {
        Some(values) => InputVector::from_f64s(values)?,
        None => sample_input(&config, &mut SeedSpec::new(cli.seed).stream(0)),
    };
    let trace = interactive::run_session(&config, &input, max_rounds)?;
    if trace.outcome == SessionOutcome::PrecisionExhausted {
        eprintln!(
            "note: session undecided after {} rounds (input precision exhausted)",
            trace.stop_time
        );
    }
    match cli.format {
        Format::Csv => {
            let mut out = String::new();
            writeln!(out, "# netclass session {config} seed={}", cli.seed).unwrap();
            writeln!(out, "{}", interactive::TRACE_CSV_HEADER).unwrap();
            interactive::write_trace_csv(&trace, 0, &mut out);
            writeln!(out, "# summary {}", interactive::session_summary_json(&trace)).unwrap();
            Ok(out)
        }
        Format::Json => {
            let rounds: Vec<_> = trace
                .rounds
                .iter()
                .map(|r| {
                    json!({
                        "j": r.round,
                        "B": r.bit_sum,
                        "Z_num": r.aggregate.numerator().to_string(),
                        "Z_exp": r.aggregate.exponent(),
                        "a_rec_num": r.threshold.numerator().to_string(),
                        "a_rec_exp": r.threshold.exponent(),
                        "signal": r.signal.as_str(),
                    })
                })
                .collect();
            let summary: serde_json::Value =
                serde_json::from_str(&interactive::session_summary_json(&trace))
                    .expect("summary round-trips");
            to_json_line(&json!({
                "config": config.to_string(),
                "seed": cli.seed,
                "rounds": rounds,
                "summary": summary,
            }))
        }
    }
}

fn to_json_line<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Numerical(format!("serialization failed: {e}")))?;
    s.push('\n');
    Ok(s)
}
