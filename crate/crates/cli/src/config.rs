//! TOML experiment description.
//!
//! ```toml
//! [system]
//! n_tx = 32
//! rho = [0.8, 0.0]    # or a plain number
//!
//! [sweep]
//! axis = "energy"
//! values = [0, 12, 24, 36, 48, 60]
//! schemes = ["waterfill-fd", "equal-fd"]
//! trials = 200
//!
//! [output]
//! path = "energy.csv"
//! ```

use std::path::PathBuf;

use hbtrain_core::estimator::NoiseModel;
use hbtrain_core::evaluation::{Scheme, SweepAxis, SweepOptions};
use hbtrain_core::{Error as CoreError, SystemConfig};
use num_complex::Complex64;
use serde::Deserialize;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{}: key `{key}`: {message}", line.map_or_else(|| "config".to_string(), |l| format!("line {l}")))]
pub struct ParseError {
    pub key: String,
    pub line: Option<usize>,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Run,
    Sweep,
    Qnz,
    Selfcheck,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Threads {
    Auto,
    Fixed(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub base: SystemConfig,
    pub command: Command,
    pub sweep_axis: SweepAxis,
    pub sweep_values: Vec<f64>,
    /// Correlation magnitudes for the `qnz` table.
    pub rho_values: Vec<f64>,
    pub schemes: Vec<Scheme>,
    pub trials: usize,
    pub options: SweepOptions,
    pub output_path: Option<PathBuf>,
    pub threads: Threads,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct Document {
    #[serde(default)]
    system: SystemSection,
    #[serde(default)]
    sweep: SweepSection,
    #[serde(default)]
    output: OutputSection,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RhoValue {
    Real(f64),
    Complex([f64; 2]),
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct SystemSection {
    n_tx: Option<usize>,
    n_rx: Option<usize>,
    n_rf: Option<usize>,
    q_slots: Option<usize>,
    energy_budget: Option<f64>,
    noise_var: Option<f64>,
    rho: Option<RhoValue>,
    n_streams: Option<usize>,
    bandwidth_hz: Option<f64>,
    velocity_mps: Option<f64>,
    carrier_hz: Option<f64>,
    tol: Option<f64>,
    altmin_max_iter: Option<usize>,
    altmin_tol: Option<f64>,
    seed: Option<u64>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct SweepSection {
    axis: Option<String>,
    values: Option<Vec<f64>>,
    rho_values: Option<Vec<f64>>,
    schemes: Option<Vec<String>>,
    trials: Option<usize>,
    noise_model: Option<String>,
    altmin_restarts: Option<usize>,
    perfect_csi_free_training: Option<bool>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct OutputSection {
    path: Option<PathBuf>,
    threads: Option<ThreadsValue>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ThreadsValue {
    Count(usize),
    Word(String),
}

/// Line (1-based) of `key = ...` inside `[section]`, if present.
fn key_line(text: &str, section: &str, key: &str) -> Option<usize> {
    let mut current = "";
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.split(']').next()) {
            current = name.trim();
            continue;
        }
        if current == section {
            if let Some((k, _)) = line.split_once('=') {
                if k.trim() == key {
                    return Some(i + 1);
                }
            }
        }
    }
    None
}

fn at(text: &str, section: &str, key: &str, message: impl Into<String>) -> ParseError {
    ParseError {
        key: key.to_string(),
        line: key_line(text, section, key),
        message: message.into(),
    }
}

fn syntax_error(text: &str, err: &toml::de::Error) -> ParseError {
    let message = err.message().to_string();
    let Some(span) = err.span() else {
        return ParseError {
            key: String::new(),
            line: None,
            message,
        };
    };
    let start = span.start.min(text.len());
    let line_no = text[..start].matches('\n').count() + 1;
    let line = text.lines().nth(line_no - 1).unwrap_or("").trim();
    let key = match line.split_once('=') {
        Some((k, _)) => k.trim().to_string(),
        None => line.trim_matches(|c| c == '[' || c == ']').to_string(),
    };
    let key = message
        .strip_prefix("unknown field `")
        .and_then(|rest| rest.split('`').next())
        .map_or(key, str::to_string);
    ParseError {
        key,
        line: Some(line_no),
        message,
    }
}

fn system_config(text: &str, s: &SystemSection) -> Result<SystemConfig, ParseError> {
    let d = SystemConfig::default();
    let n_tx = s.n_tx.unwrap_or(d.n_tx);
    let n_rx = s.n_rx.unwrap_or(d.n_rx);
    let n_rf = s.n_rf.unwrap_or(d.n_rf);
    let rho = match s.rho {
        None => d.rho,
        Some(RhoValue::Real(r)) => Complex64::new(r, 0.0),
        Some(RhoValue::Complex([re, im])) => Complex64::new(re, im),
    };
    let cfg = SystemConfig {
        n_tx,
        n_rx,
        n_rf,
        q_slots: s.q_slots.unwrap_or((n_tx * n_rx).checked_div(n_rf).unwrap_or(0)),
        energy_budget: s.energy_budget.unwrap_or(d.energy_budget),
        noise_var: s.noise_var.unwrap_or(d.noise_var),
        rho,
        n_streams: s.n_streams.unwrap_or(d.n_streams),
        bandwidth_hz: s.bandwidth_hz.unwrap_or(d.bandwidth_hz),
        velocity_mps: s.velocity_mps.unwrap_or(d.velocity_mps),
        carrier_hz: s.carrier_hz.unwrap_or(d.carrier_hz),
        tol: s.tol.unwrap_or(d.tol),
        altmin_max_iter: s.altmin_max_iter.unwrap_or(d.altmin_max_iter),
        altmin_tol: s.altmin_tol.unwrap_or(d.altmin_tol),
        seed: s.seed.unwrap_or(d.seed),
    };
    cfg.validate().map_err(|e| match e {
        CoreError::InvalidParameter { name, reason } => at(text, "system", name, reason),
        other => at(text, "system", "", other.to_string()),
    })?;
    Ok(cfg)
}

/// Parses and validates an experiment description for `command`.
pub fn parse_spec(text: &str, command: Command) -> Result<ExperimentSpec, ParseError> {
    let doc: Document = toml::from_str(text).map_err(|e| syntax_error(text, &e))?;
    let base = system_config(text, &doc.system)?;
    let sw = &doc.sweep;

    let default_axis = match command {
        Command::Qnz => SweepAxis::RxAntennas,
        Command::Sweep => SweepAxis::Energy,
        _ => SweepAxis::None,
    };
    let sweep_axis = match &sw.axis {
        None => default_axis,
        Some(a) => a.parse().map_err(|e: CoreError| at(text, "sweep", "axis", e.to_string()))?,
    };
    let sweep_values = sw.values.clone().unwrap_or_default();
    let needs_values = matches!(command, Command::Sweep | Command::Qnz);
    if needs_values && sweep_values.is_empty() {
        return Err(at(text, "sweep", "values", "at least one value is required"));
    }
    if needs_values && sweep_axis == SweepAxis::None {
        return Err(at(text, "sweep", "axis", "a sweep needs an axis"));
    }
    if command == Command::Qnz && sweep_axis != SweepAxis::RxAntennas {
        return Err(at(text, "sweep", "axis", "qnz sweeps the receive array size (rx_antennas)"));
    }
    if sweep_values.windows(2).any(|w| w[1].partial_cmp(&w[0]) != Some(std::cmp::Ordering::Greater)) {
        return Err(at(text, "sweep", "values", "must be strictly increasing"));
    }
    if sweep_values.iter().any(|v| !v.is_finite()) {
        return Err(at(text, "sweep", "values", "must be finite"));
    }
    let rho_values = sw.rho_values.clone().unwrap_or_else(|| vec![base.rho.norm()]);
    if rho_values.is_empty() || rho_values.iter().any(|r| !(0.0..1.0).contains(r)) {
        return Err(at(text, "sweep", "rho_values", "need values in [0, 1)"));
    }

    let schemes = match &sw.schemes {
        None => vec![Scheme::WaterfillFd, Scheme::EqualFd],
        Some(names) => names
            .iter()
            .map(|n| n.parse())
            .collect::<Result<Vec<Scheme>, _>>()
            .map_err(|e| at(text, "sweep", "schemes", e.to_string()))?,
    };
    if schemes.is_empty() {
        return Err(at(text, "sweep", "schemes", "at least one scheme is required"));
    }
    let trials = sw.trials.unwrap_or(100);
    if trials == 0 {
        return Err(at(text, "sweep", "trials", "must be at least 1"));
    }
    let noise_model = match sw.noise_model.as_deref() {
        None | Some("matched") => NoiseModel::Matched,
        Some("ideal") => NoiseModel::Ideal,
        Some(other) => {
            return Err(at(text, "sweep", "noise_model", format!("expected \"matched\" or \"ideal\", got \"{other}\"")))
        }
    };
    let altmin_restarts = sw.altmin_restarts.unwrap_or(1);
    if altmin_restarts == 0 {
        return Err(at(text, "sweep", "altmin_restarts", "must be at least 1"));
    }
    let options = SweepOptions {
        noise_model,
        altmin_restarts,
        perfect_csi_free_training: sw.perfect_csi_free_training.unwrap_or(true),
    };
    let threads = match &doc.output.threads {
        None => Threads::Auto,
        Some(ThreadsValue::Count(0)) => return Err(at(text, "output", "threads", "must be positive")),
        Some(ThreadsValue::Count(n)) => Threads::Fixed(*n),
        Some(ThreadsValue::Word(w)) if w == "auto" => Threads::Auto,
        Some(ThreadsValue::Word(w)) => {
            return Err(at(text, "output", "threads", format!("expected a count or \"auto\", got \"{w}\"")))
        }
    };
    Ok(ExperimentSpec {
        base,
        command,
        sweep_axis,
        sweep_values,
        rho_values,
        schemes,
        trials,
        options,
        output_path: doc.output.path.clone(),
        threads,
    })
}
