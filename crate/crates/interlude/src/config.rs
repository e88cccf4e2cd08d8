//! Flat key=value run configuration: one `key = value` pair per line,
//! `#` comments, with line/field diagnostics on parse errors.

use std::collections::BTreeMap;
use std::path::PathBuf;

use crate::simnet::{LatencyProfile, SimConfig};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("line {line}: expected key = value, got {text:?}")]
    Syntax { line: usize, text: String },
    #[error("line {line}: duplicate key {key:?}")]
    Duplicate { line: usize, key: String },
    #[error("line {line}: key {key:?}: {message}")]
    Value {
        line: usize,
        key: String,
        message: String,
    },
    #[error("unknown key {key:?} (line {line})")]
    UnknownKey { line: usize, key: String },
    #[error("{0}")]
    Invalid(String),
}

/// Which parameter a sweep varies; each grid point is one full simulation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SweepAxis {
    K,
    AdversaryPower,
    Latency,
}

impl std::str::FromStr for SweepAxis {
    type Err = String;
    fn from_str(s: &str) -> Result<SweepAxis, String> {
        match s {
            "k" => Ok(SweepAxis::K),
            "adversary_power" => Ok(SweepAxis::AdversaryPower),
            "latency" => Ok(SweepAxis::Latency),
            other => Err(format!(
                "unknown sweep axis {other:?} (expected k, adversary_power or latency)"
            )),
        }
    }
}

/// A full run description: simulation parameters, sweep grids, and output
/// destinations.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub sim: SimConfig,
    pub sweep_k: Vec<usize>,
    pub sweep_adversary_power: Vec<f64>,
    pub sweep_latency: Vec<LatencyProfile>,
    pub output_dir: PathBuf,
    pub metrics_csv: Option<PathBuf>,
    pub summary_json: Option<PathBuf>,
    pub trace_jsonl: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> RunConfig {
        RunConfig {
            sim: SimConfig::defaults(16),
            sweep_k: Vec::new(),
            sweep_adversary_power: Vec::new(),
            sweep_latency: Vec::new(),
            output_dir: PathBuf::from("."),
            metrics_csv: None,
            summary_json: None,
            trace_jsonl: None,
        }
    }
}

fn parse_latency_profile(value: &str) -> Result<LatencyProfile, String> {
    match value {
        "zero" => Ok(LatencyProfile::Zero),
        "uniform" => Ok(LatencyProfile::UniformRandom),
        other if other.starts_with("fairness:") => {
            let parts: Vec<&str> = other["fairness:".len()..].split(':').collect();
            if parts.len() != 3 {
                return Err(format!(
                    "expected fairness:<fast_fraction>:<fast_latency>:<slow_latency>, got {other:?}"
                ));
            }
            let nums: Result<Vec<f64>, _> = parts.iter().map(|p| p.parse::<f64>()).collect();
            let nums = nums.map_err(|e| format!("{e}"))?;
            Ok(LatencyProfile::Fairness {
                fast_fraction: nums[0],
                fast_latency: nums[1],
                slow_latency: nums[2],
            })
        }
        other => Err(format!(
            "unknown latency profile {other:?} (expected zero, uniform or fairness:f:l:l)"
        )),
    }
}

fn parse_list<T: std::str::FromStr>(value: &str) -> Result<Vec<T>, String>
where
    T::Err: std::fmt::Display,
{
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<T>().map_err(|e| format!("{e}")))
        .collect()
}

impl RunConfig {
    /// Parses config text. Unknown keys and malformed values are reported
    /// with their line number; later validation failures cite the key.
    pub fn parse(text: &str) -> Result<RunConfig, ConfigError> {
        let mut seen: BTreeMap<String, usize> = BTreeMap::new();
        let mut cfg = RunConfig::default();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ConfigError::Syntax {
                    line: line_no,
                    text: raw.trim().to_string(),
                });
            };
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if seen.insert(key.clone(), line_no).is_some() {
                return Err(ConfigError::Duplicate { line: line_no, key });
            }
            cfg.apply(&key, &value)
                .map_err(|message| match message {
                    ApplyError::Unknown => ConfigError::UnknownKey {
                        line: line_no,
                        key: key.clone(),
                    },
                    ApplyError::Bad(message) => ConfigError::Value {
                        line: line_no,
                        key: key.clone(),
                        message,
                    },
                })?;
        }
        cfg.sim
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(cfg)
    }

    pub fn parse_file(path: &std::path::Path) -> Result<RunConfig, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Invalid(format!("cannot read {}: {e}", path.display())))?;
        RunConfig::parse(&text)
    }

    /// Applies one key=value pair; also used for flag overrides.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<(), ApplyError> {
        fn num<T: std::str::FromStr>(value: &str) -> Result<T, ApplyError>
        where
            T::Err: std::fmt::Display,
        {
            value.parse::<T>().map_err(|e| ApplyError::Bad(format!("{e}")))
        }
        match key {
            "k" => self.sim.k = num(value)?,
            "n_honest" => self.sim.n_honest = num(value)?,
            "adversary_power" => self.sim.adversary_power = num(value)?,
            "lambda" => self.sim.lambda = num(value)?,
            "beta" => self.sim.beta = num(value)?,
            "delta" => self.sim.delta = num(value)?,
            "tx_rate" => self.sim.tx_rate = num(value)?,
            "kappa" => self.sim.kappa = num(value)?,
            "seed" => self.sim.seed = num(value)?,
            "horizon" => self.sim.horizon = num(value)?,
            "max_rounds" => self.sim.max_rounds = Some(num(value)?),
            "accounts" => self.sim.accounts = num(value)?,
            "initial_balance" => self.sim.initial_balance = num(value)?,
            "fee_max" => self.sim.fee_max = num(value)?,
            "gamma" => self.sim.gamma = num(value)?,
            "max_block_txs" => self.sim.max_block_txs = num(value)?,
            "block_bytes" => self.sim.block_bytes = num(value)?,
            "bucket_seconds" => self.sim.bucket_seconds = num(value)?,
            "assert_liveness" => self.sim.assert_liveness = num(value)?,
            "latency_profile" => {
                self.sim.latency = parse_latency_profile(value).map_err(ApplyError::Bad)?
            }
            "honest_shares" => {
                self.sim.honest_shares = Some(parse_list(value).map_err(ApplyError::Bad)?)
            }
            "sweep_k" => self.sweep_k = parse_list(value).map_err(ApplyError::Bad)?,
            "sweep_adversary_power" => {
                self.sweep_adversary_power = parse_list(value).map_err(ApplyError::Bad)?
            }
            "sweep_latency" => {
                let names: Vec<String> = parse_list(value).map_err(ApplyError::Bad)?;
                self.sweep_latency = names
                    .iter()
                    .map(|n| parse_latency_profile(n))
                    .collect::<Result<_, _>>()
                    .map_err(ApplyError::Bad)?;
            }
            "output_dir" => self.output_dir = PathBuf::from(value),
            "metrics_csv" => self.metrics_csv = Some(PathBuf::from(value)),
            "summary_json" => self.summary_json = Some(PathBuf::from(value)),
            "trace_jsonl" => self.trace_jsonl = Some(PathBuf::from(value)),
            _ => return Err(ApplyError::Unknown),
        }
        Ok(())
    }
}

#[derive(Debug)]
pub enum ApplyError {
    Unknown,
    Bad(String),
}
