use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hbtrain::config::{parse_spec, Command, ExperimentSpec, Threads};
use hbtrain::output::{emit_csv, emit_qnz_csv, write_qnz_csv, write_sweep_csv};
use hbtrain::selfcheck::{selfcheck, Fault};
use hbtrain_core::evaluation::{qnz_profile, run_sweep, SweepAxis};

const EXIT_PARSE: u8 = 2;
const EXIT_NUMERIC: u8 = 3;
const EXIT_IO: u8 = 4;

#[derive(Parser)]
#[command(name = "hbtrain", version, about = "MMSE hybrid training design for correlated massive MIMO")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(clap::Args)]
struct Common {
    /// TOML experiment description.
    #[arg(long)]
    config: Option<PathBuf>,
    /// CSV destination; `-` or absent writes to stdout unless the config names a path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (defaults to HBTRAIN_THREADS, then the config, then all cores).
    #[arg(long, env = "HBTRAIN_THREADS")]
    threads: Option<usize>,
    /// Overrides `system.seed`.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Single point at the configured scenario.
    Run(Common),
    /// Sweep one parameter.
    Sweep(Common),
    /// Training-slot utilization vs receive array size.
    Qnz(Common),
    /// Toy-size invariant checks.
    Selfcheck {
        #[command(flatten)]
        common: Common,
        /// Fault to inject; proves the suite can fail.
        #[arg(long, hide = true)]
        inject_fault: Option<String>,
    },
}

struct Failure {
    code: u8,
    message: String,
}

fn fail(code: u8, message: impl ToString) -> Failure {
    Failure {
        code,
        message: message.to_string(),
    }
}

fn load(common: &Common, command: Command) -> Result<ExperimentSpec, Failure> {
    let text = match &common.config {
        Some(path) => std::fs::read_to_string(path).map_err(|e| fail(EXIT_IO, format!("{}: {e}", path.display())))?,
        None => String::new(),
    };
    let mut spec = parse_spec(&text, command).map_err(|e| fail(EXIT_PARSE, e))?;
    if let Some(seed) = common.seed {
        spec.base.seed = seed;
    }
    if let Some(out) = &common.out {
        spec.output_path = Some(out.clone());
    }
    let threads = match (common.threads, spec.threads) {
        (Some(0), _) => return Err(fail(EXIT_PARSE, "--threads must be positive")),
        (Some(n), _) | (None, Threads::Fixed(n)) => n,
        (None, Threads::Auto) => 0,
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| fail(EXIT_NUMERIC, format!("thread pool: {e}")))?;
    Ok(spec)
}

/// Writes through `to_file` when a path is set, otherwise to stdout.
fn deliver(
    spec: &ExperimentSpec,
    to_file: impl FnOnce(&std::path::Path) -> Result<(), hbtrain::output::OutputError>,
    to_stdout: impl FnOnce(&mut io::StdoutLock) -> io::Result<()>,
) -> Result<(), Failure> {
    match spec.output_path.as_deref().filter(|p| p.as_os_str() != "-") {
        Some(path) => to_file(path).map_err(|e| fail(EXIT_IO, e)),
        None => {
            let mut out = io::stdout().lock();
            to_stdout(&mut out).and_then(|_| out.flush()).map_err(|e| fail(EXIT_IO, format!("stdout: {e}")))
        }
    }
}

fn evaluate(spec: &ExperimentSpec) -> Result<(), Failure> {
    let (axis, values) = match spec.command {
        Command::Run => (SweepAxis::None, vec![0.0]),
        _ => (spec.sweep_axis, spec.sweep_values.clone()),
    };
    let records = run_sweep(&spec.base, axis, &values, &spec.schemes, spec.trials, &spec.options)
        .map_err(|e| fail(EXIT_NUMERIC, e))?;
    deliver(spec, |p| emit_csv(&records, p), |out| write_sweep_csv(&records, out))?;
    let failed: Vec<&str> = records.iter().filter_map(|r| r.error.as_deref()).collect();
    if let Some(first) = failed.first() {
        return Err(fail(EXIT_NUMERIC, format!("{} point(s) failed; first: {first}", failed.len())));
    }
    Ok(())
}

fn qnz(spec: &ExperimentSpec) -> Result<(), Failure> {
    let mut m_values = Vec::with_capacity(spec.sweep_values.len());
    for &v in &spec.sweep_values {
        if !(v >= 1.0 && v.fract() == 0.0) {
            return Err(fail(EXIT_PARSE, format!("sweep.values: {v} is not a receive array size")));
        }
        m_values.push(v as usize);
    }
    let rows = qnz_profile(&spec.base, &m_values, &spec.rho_values).map_err(|e| fail(EXIT_NUMERIC, e))?;
    deliver(spec, |p| emit_qnz_csv(&rows, p), |out| write_qnz_csv(&rows, out))
}

fn check(common: &Common, fault: Option<&str>) -> Result<(), Failure> {
    let fault = match fault {
        None => Fault::None,
        Some("skip-hermitianization") => Fault::SkipHermitianization,
        Some(other) => return Err(fail(EXIT_PARSE, format!("unknown fault '{other}'"))),
    };
    if common.config.is_some() {
        load(common, Command::Selfcheck)?;
    }
    let report = selfcheck(fault).map_err(|e| fail(EXIT_NUMERIC, e))?;
    println!("{report}");
    if report.passed() {
        Ok(())
    } else {
        let names: Vec<&str> = report.failures().map(|c| c.label).collect();
        Err(fail(EXIT_NUMERIC, format!("failed: {}", names.join("; "))))
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Cmd::Run(c) => load(c, Command::Run).and_then(|s| evaluate(&s)),
        Cmd::Sweep(c) => load(c, Command::Sweep).and_then(|s| evaluate(&s)),
        Cmd::Qnz(c) => load(c, Command::Qnz).and_then(|s| qnz(&s)),
        Cmd::Selfcheck { common, inject_fault } => check(common, inject_fault.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("hbtrain: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
