//! Operator entry point: `simulate`, `sweep`, `analyze` and `dump`
//! subcommands over the flat key=value run configuration.
//!
//! Exit codes: 0 success, 1 invariant breach, 2 configuration error.

use std::fs;
use std::io::Write;
use std::path::Path;

use clap::{Arg, ArgAction, ArgMatches, Command};

use crate::analysis::{
    self, epsilon, frontrunning_bound, linear_fit, liveness_failure_sequence, safety_limit,
    throughput_best_case, time_to_finality, FairnessParams, WalkParams,
};
use crate::chain::{transaction_order, BlockBody};
use crate::config::{ConfigError, RunConfig, SweepAxis};
use crate::simnet::{run_simulation, LatencyProfile, SimError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVARIANT: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

/// Environment variable supplying the default seed; a seed in the config
/// file or on the command line takes precedence.
pub const SEED_ENV: &str = "INTERLUDE_SEED";

pub const SWEEP_CSV_HEADER: &str =
    "# sweep_csv v1\naxis,value,status,rounds,blocks_per_second,tx_accepted,reversals,inclusion_rate,mean_confirmation_delay\n";

/// Every key accepted in config files, mirrored one-to-one as long flags.
pub const CONFIG_KEYS: &[&str] = &[
    "k",
    "n_honest",
    "adversary_power",
    "lambda",
    "beta",
    "delta",
    "tx_rate",
    "kappa",
    "seed",
    "horizon",
    "max_rounds",
    "accounts",
    "initial_balance",
    "fee_max",
    "gamma",
    "max_block_txs",
    "block_bytes",
    "bucket_seconds",
    "assert_liveness",
    "latency_profile",
    "honest_shares",
    "sweep_k",
    "sweep_adversary_power",
    "sweep_latency",
    "output_dir",
    "metrics_csv",
    "summary_json",
    "trace_jsonl",
];

fn with_config_flags(cmd: Command) -> Command {
    let mut cmd = cmd.arg(
        Arg::new("config")
            .long("config")
            .value_name("PATH")
            .help("flat key=value configuration file"),
    );
    for key in CONFIG_KEYS {
        cmd = cmd.arg(
            Arg::new(*key)
                .long(*key)
                .value_name("VALUE")
                .help("overrides the config key of the same name"),
        );
    }
    cmd
}

fn command() -> Command {
    Command::new("interlude")
        .about("parallel sub-chain proof-of-work protocol: simulator and analysis")
        .subcommand_required(true)
        .subcommand(with_config_flags(Command::new("simulate").about(
            "run one simulation; writes metrics CSV, JSON summary and optional trace",
        )))
        .subcommand(
            with_config_flags(Command::new("sweep").about(
                "run one simulation per grid point along an axis; writes a combined CSV",
            ))
            .arg(
                Arg::new("axis")
                    .long("axis")
                    .value_name("k|adversary_power|latency")
                    .required(true),
            ),
        )
        .subcommand(
            Command::new("analyze")
                .about("emit security/performance figures as JSON")
                .arg(Arg::new("beta").long("beta").value_name("RATE"))
                .arg(Arg::new("delta").long("delta").value_name("SECONDS"))
                .arg(Arg::new("kappa").long("kappa").value_name("DEPTH"))
                .arg(Arg::new("k").long("k").value_name("COUNT"))
                .arg(Arg::new("t_max").long("t-max").value_name("ROUNDS"))
                .arg(Arg::new("m_top").long("m-top").value_name("SHARE"))
                .arg(Arg::new("d").long("d").value_name("SECONDS"))
                .arg(
                    Arg::new("pf")
                        .long("pf")
                        .action(ArgAction::SetTrue)
                        .help("include the frontrunning probability bound"),
                ),
        )
        .subcommand(with_config_flags(Command::new("dump").about(
            "run a short simulation and print the observer's chain as JSON",
        )))
}

fn config_from_matches(matches: &ArgMatches) -> Result<RunConfig, ConfigError> {
    let mut cfg = match matches.get_one::<String>("config") {
        Some(path) => RunConfig::parse_file(Path::new(path))?,
        None => RunConfig::default(),
    };
    // the environment may supply a default seed; explicit settings win
    if matches.get_one::<String>("seed").is_none() {
        if let Ok(value) = std::env::var(SEED_ENV) {
            let explicit_in_file = matches
                .get_one::<String>("config")
                .map(|p| {
                    fs::read_to_string(p)
                        .map(|text| {
                            text.lines().any(|l| {
                                l.split('#').next().unwrap_or("").trim().starts_with("seed")
                            })
                        })
                        .unwrap_or(false)
                })
                .unwrap_or(false);
            if !explicit_in_file {
                cfg.apply("seed", value.trim()).map_err(|_| {
                    ConfigError::Invalid(format!("{SEED_ENV}={value:?} is not a valid seed"))
                })?;
            }
        }
    }
    for key in CONFIG_KEYS {
        if let Some(value) = matches.get_one::<String>(*key) {
            cfg.apply(key, value).map_err(|e| match e {
                crate::config::ApplyError::Bad(message) => ConfigError::Value {
                    line: 0,
                    key: (*key).to_string(),
                    message,
                },
                crate::config::ApplyError::Unknown => ConfigError::UnknownKey {
                    line: 0,
                    key: (*key).to_string(),
                },
            })?;
        }
    }
    cfg.sim
        .validate()
        .map_err(|e| ConfigError::Invalid(e.to_string()))?;
    Ok(cfg)
}

fn write_artifact(path: &Path, bytes: &[u8]) -> Result<(), String> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| format!("{}: {e}", parent.display()))?;
        }
    }
    fs::write(path, bytes).map_err(|e| format!("{}: {e}", path.display()))
}

/// Runs one simulation and writes its artifacts. Prints the JSON summary to
/// `out`.
pub fn cmd_simulate(cfg: &RunConfig, out: &mut dyn Write) -> i32 {
    let mut trace_buf: Vec<u8> = Vec::new();
    let wants_trace = cfg.trace_jsonl.is_some();
    let result = run_simulation(
        &cfg.sim,
        if wants_trace {
            Some(&mut trace_buf)
        } else {
            None
        },
    );
    let output = match result {
        Ok(output) => output,
        Err(SimError::Config(message)) => {
            eprintln!("configuration error: {message}");
            return EXIT_CONFIG;
        }
        Err(SimError::Invariant(message)) => {
            eprintln!("invariant breach: {message}");
            return EXIT_INVARIANT;
        }
    };
    let csv_path = cfg
        .metrics_csv
        .clone()
        .unwrap_or_else(|| cfg.output_dir.join("metrics.csv"));
    if let Err(message) = write_artifact(&csv_path, output.metrics_csv.as_bytes()) {
        eprintln!("cannot write metrics CSV: {message}");
        return EXIT_CONFIG;
    }
    let summary = serde_json::to_string_pretty(&output.report).expect("serializable report");
    let json_path = cfg
        .summary_json
        .clone()
        .unwrap_or_else(|| cfg.output_dir.join("summary.json"));
    if let Err(message) = write_artifact(&json_path, summary.as_bytes()) {
        eprintln!("cannot write summary JSON: {message}");
        return EXIT_CONFIG;
    }
    if let Some(trace_path) = &cfg.trace_jsonl {
        if let Err(message) = write_artifact(trace_path, &trace_buf) {
            eprintln!("cannot write trace: {message}");
            return EXIT_CONFIG;
        }
    }
    let _ = writeln!(out, "{summary}");
    EXIT_OK
}

/// One simulation per grid point; failed points are recorded in the
/// combined CSV and the sweep continues.
pub fn cmd_sweep(cfg: &RunConfig, axis: &SweepAxis, out: &mut dyn Write) -> i32 {
    let axis_name = match axis {
        SweepAxis::K => "k",
        SweepAxis::AdversaryPower => "adversary_power",
        SweepAxis::Latency => "latency",
    };
    let points: Vec<(String, RunConfig)> = match axis {
        SweepAxis::K => cfg
            .sweep_k
            .iter()
            .map(|&k| {
                let mut point = cfg.clone();
                point.sim.k = k;
                // keep the per-sub-chain rate fixed as k scales
                point.sim.lambda = cfg.sim.lambda * k as f64 / cfg.sim.k as f64;
                (k.to_string(), point)
            })
            .collect(),
        SweepAxis::AdversaryPower => cfg
            .sweep_adversary_power
            .iter()
            .map(|&power| {
                let mut point = cfg.clone();
                point.sim.adversary_power = power;
                point.sim.honest_shares = None;
                (format!("{power}"), point)
            })
            .collect(),
        SweepAxis::Latency => cfg
            .sweep_latency
            .iter()
            .map(|profile| {
                let mut point = cfg.clone();
                point.sim.latency = profile.clone();
                let name = match profile {
                    LatencyProfile::Zero => "zero".to_string(),
                    LatencyProfile::UniformRandom => "uniform".to_string(),
                    LatencyProfile::Fairness {
                        fast_fraction,
                        fast_latency,
                        slow_latency,
                    } => format!("fairness:{fast_fraction}:{fast_latency}:{slow_latency}"),
                };
                (name, point)
            })
            .collect(),
    };
    if points.is_empty() {
        eprintln!("configuration error: sweep axis {axis_name:?} is empty");
        return EXIT_CONFIG;
    }
    let mut combined = String::from(SWEEP_CSV_HEADER);
    for (value, point) in &points {
        match run_simulation(&point.sim, None) {
            Ok(output) => {
                let per_point = point
                    .output_dir
                    .join(format!("metrics_{axis_name}_{value}.csv"));
                if let Err(message) = write_artifact(&per_point, output.metrics_csv.as_bytes()) {
                    eprintln!("cannot write point CSV: {message}");
                    return EXIT_CONFIG;
                }
                let r = &output.report;
                combined.push_str(&format!(
                    "{axis_name},{value},ok,{},{:.6},{},{},{:.6},{:.6}\n",
                    r.rounds,
                    r.blocks_per_second,
                    r.tx_accepted,
                    r.reversals,
                    r.inclusion_rate,
                    r.mean_confirmation_delay
                ));
            }
            Err(err) => {
                eprintln!("point {axis_name}={value} failed: {err}");
                combined.push_str(&format!("{axis_name},{value},failed,,,,,,\n"));
            }
        }
    }
    let combined_path = cfg.output_dir.join("sweep.csv");
    if let Err(message) = write_artifact(&combined_path, combined.as_bytes()) {
        eprintln!("cannot write sweep CSV: {message}");
        return EXIT_CONFIG;
    }
    let _ = write!(out, "{combined}");
    EXIT_OK
}

/// Emits the analysis JSON: epsilon, walk-table summary, safety limit,
/// frontrunning bound, throughput and finality figures.
pub fn cmd_analyze(matches: &ArgMatches, out: &mut dyn Write) -> i32 {
    fn flag<T: std::str::FromStr>(matches: &ArgMatches, name: &str, default: T) -> Result<T, String>
    where
        T::Err: std::fmt::Display,
    {
        match matches.get_one::<String>(name) {
            Some(text) => text
                .parse::<T>()
                .map_err(|e| format!("--{}: {e}", name.replace('_', "-"))),
            None => Ok(default),
        }
    }
    let parsed = (|| -> Result<(f64, f64, usize, usize, usize), String> {
        let beta = flag(matches, "beta", 1.0 / 600.0)?;
        let delta = flag(matches, "delta", 40.0)?;
        let kappa = flag(matches, "kappa", 14usize)?;
        let k = flag(matches, "k", 16usize)?;
        let t_max = flag(matches, "t_max", 400usize)?;
        Ok((beta, delta, kappa, k, t_max))
    })();
    let (beta, delta, kappa, k, t_max) = match parsed {
        Ok(v) => v,
        Err(message) => {
            eprintln!("configuration error: {message}");
            return EXIT_CONFIG;
        }
    };
    let eps = match epsilon(beta, delta) {
        Ok(eps) => eps,
        Err(err) => {
            eprintln!("configuration error: {err}");
            return EXIT_CONFIG;
        }
    };
    // out-of-regime parameters (e.g. beta * delta >= 1 pushes epsilon past
    // the walk's domain) are reported inside the JSON, not as a failure
    let (walk_summary, safety) = match WalkParams::new(eps, kappa, t_max) {
        Ok(walk) => {
            let (_, limit) = safety_limit(&walk);
            let failures = liveness_failure_sequence(&walk);
            let fit_range: Vec<usize> = (5 * kappa..=(20 * kappa).min(t_max - 1)).collect();
            let (slope, _, r2) = {
                let xs: Vec<f64> = fit_range.iter().map(|&r| r as f64).collect();
                let ys: Vec<f64> = fit_range
                    .iter()
                    .map(|&r| failures[r].max(f64::MIN_POSITIVE).ln())
                    .collect();
                linear_fit(&xs, &ys)
            };
            (
                serde_json::json!({
                    "kappa": kappa,
                    "t_max": t_max,
                    "failure_at_5kappa": failures[(5 * kappa).min(t_max)],
                    "failure_at_10kappa": failures[(10 * kappa).min(t_max)],
                    "decay_slope": slope,
                    "decay_r2": r2,
                }),
                serde_json::json!(limit),
            )
        }
        Err(err) => (
            serde_json::json!({ "error": err.to_string() }),
            serde_json::json!({ "error": err.to_string() }),
        ),
    };
    let mut warnings = Vec::new();
    if 1.0 / beta <= 20.0 * delta {
        warnings.push("series period is not generously large versus the delay".to_string());
    }
    let p_f = if matches.get_flag("pf") {
        let fp = FairnessParams {
            m_top: match flag(matches, "m_top", 0.1) {
                Ok(v) => v,
                Err(message) => {
                    eprintln!("configuration error: {message}");
                    return EXIT_CONFIG;
                }
            },
            m_bottom: 0.9,
            d: match flag(matches, "d", delta) {
                Ok(v) => v,
                Err(message) => {
                    eprintln!("configuration error: {message}");
                    return EXIT_CONFIG;
                }
            },
            beta,
            delta,
        };
        match frontrunning_bound(&fp) {
            Ok(bound) => serde_json::json!({ "bound": bound }),
            Err(err) => serde_json::json!({ "error": err.to_string() }),
        }
    } else {
        serde_json::Value::Null
    };
    let throughput = match throughput_best_case(beta, delta, k) {
        Ok(v) => serde_json::json!(v),
        Err(err) => serde_json::json!({ "error": err.to_string() }),
    };
    let doc = serde_json::json!({
        "epsilon": eps,
        "liveness_table_summary": walk_summary,
        "safety_limit": safety,
        "safety_limit_closed_form": analysis::safety_limit_closed_form(eps, kappa),
        "p_f_bound": p_f,
        "throughput": throughput,
        "finality": time_to_finality(kappa, beta, delta),
        "warnings": warnings,
    });
    let _ = writeln!(
        out,
        "{}",
        serde_json::to_string_pretty(&doc).expect("serializable")
    );
    EXIT_OK
}

/// Runs a short simulation and prints the observer's chain: per-round block
/// structure plus the canonical transaction order.
pub fn cmd_dump(cfg: &RunConfig, out: &mut dyn Write) -> i32 {
    let mut sim = cfg.sim.clone();
    if sim.max_rounds.is_none() {
        sim.max_rounds = Some(5);
    }
    let output = match run_simulation(&sim, None) {
        Ok(output) => output,
        Err(SimError::Config(message)) => {
            eprintln!("configuration error: {message}");
            return EXIT_CONFIG;
        }
        Err(SimError::Invariant(message)) => {
            eprintln!("invariant breach: {message}");
            return EXIT_INVARIANT;
        }
    };
    let chain = &output.final_chain;
    let rounds: Vec<serde_json::Value> = chain
        .rounds()
        .iter()
        .map(|node| {
            let kset: Vec<serde_json::Value> = node
                .kset
                .iter()
                .map(|block| {
                    let subchain = match &block.body {
                        BlockBody::Parallel { subchain, .. } => Some(*subchain),
                        BlockBody::Series { .. } => None,
                    };
                    serde_json::json!({
                        "subchain": subchain,
                        "hash": block.hash.to_hex(),
                        "miner": block.miner,
                        "tx_count": block.txs.len(),
                    })
                })
                .collect();
            serde_json::json!({
                "height": node.height,
                "series_hash": node.series.hash.to_hex(),
                "sealed_at": node.completed_at,
                "kset": kset,
            })
        })
        .collect();
    let doc = serde_json::json!({
        "rounds": rounds,
        "partial_subchains": chain.partial.keys().collect::<Vec<_>>(),
        "transaction_order": transaction_order(chain),
    });
    let _ = writeln!(
        out,
        "{}",
        serde_json::to_string_pretty(&doc).expect("serializable")
    );
    EXIT_OK
}

/// Full argument-to-exit-code entry point, also used by tests.
pub fn run<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let matches = match command().try_get_matches_from(args) {
        Ok(matches) => matches,
        Err(err) => {
            // clap handles --help/--version printing; argument errors are
            // configuration errors
            let rendered = err.render().to_string();
            if err.use_stderr() {
                eprint!("{rendered}");
                return EXIT_CONFIG;
            }
            let _ = write!(out, "{rendered}");
            return EXIT_OK;
        }
    };
    match matches.subcommand() {
        Some(("simulate", sub)) => match config_from_matches(sub) {
            Ok(cfg) => cmd_simulate(&cfg, out),
            Err(err) => {
                eprintln!("configuration error: {err}");
                EXIT_CONFIG
            }
        },
        Some(("sweep", sub)) => {
            let axis: SweepAxis = match sub
                .get_one::<String>("axis")
                .expect("required flag")
                .parse()
            {
                Ok(axis) => axis,
                Err(message) => {
                    eprintln!("configuration error: {message}");
                    return EXIT_CONFIG;
                }
            };
            match config_from_matches(sub) {
                Ok(cfg) => cmd_sweep(&cfg, &axis, out),
                Err(err) => {
                    eprintln!("configuration error: {err}");
                    EXIT_CONFIG
                }
            }
        }
        Some(("analyze", sub)) => cmd_analyze(sub, out),
        Some(("dump", sub)) => match config_from_matches(sub) {
            Ok(cfg) => cmd_dump(&cfg, out),
            Err(err) => {
                eprintln!("configuration error: {err}");
                EXIT_CONFIG
            }
        },
        _ => unreachable!("subcommand required"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_to_string(args: &[&str]) -> (i32, String) {
        let mut buf: Vec<u8> = Vec::new();
        let code = run(args.iter().copied(), &mut buf);
        (code, String::from_utf8(buf).unwrap())
    }

    #[test]
    fn analyze_emits_contract_fields() {
        let (code, out) = run_to_string(&[
            "interlude", "analyze", "--kappa", "14", "--t-max", "4000", "--pf",
        ]);
        assert_eq!(code, EXIT_OK);
        let doc: serde_json::Value = serde_json::from_str(&out).unwrap();
        for field in [
            "epsilon",
            "liveness_table_summary",
            "safety_limit",
            "p_f_bound",
            "throughput",
            "finality",
        ] {
            assert!(doc.get(field).is_some(), "missing {field}");
        }
        let limit = doc["safety_limit"].as_f64().unwrap();
        let closed = doc["safety_limit_closed_form"].as_f64().unwrap();
        assert!(limit > 0.0 && limit < 1.0, "limit={limit}");
        assert!(((limit - closed) / closed).abs() < 2e-3, "{limit} vs {closed}");
    }

    #[test]
    fn analyze_delta_zero_gives_zero_epsilon() {
        let (code, out) = run_to_string(&[
            "interlude", "analyze", "--delta", "0", "--kappa", "4", "--t-max", "100",
        ]);
        assert_eq!(code, EXIT_OK);
        let doc: serde_json::Value = serde_json::from_str(&out).unwrap();
        assert_eq!(doc["epsilon"].as_f64().unwrap(), 0.0);
    }

    #[test]
    fn analyze_pf_precondition_reported_without_failure() {
        let (code, out) = run_to_string(&[
            "interlude", "analyze", "--beta", "0.05", "--delta", "40", "--kappa", "2", "--t-max",
            "60", "--pf",
        ]);
        assert_eq!(code, EXIT_OK);
        let doc: serde_json::Value = serde_json::from_str(&out).unwrap();
        assert!(doc["p_f_bound"].get("error").is_some());
    }

    #[test]
    fn bad_flag_value_is_config_error() {
        let (code, _) = run_to_string(&["interlude", "analyze", "--kappa", "soon"]);
        assert_eq!(code, EXIT_CONFIG);
    }
}
