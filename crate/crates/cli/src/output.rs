//! CSV emission.

use std::fs::File;
use std::io::{self, Write};
use std::path::Path;

use hbtrain_core::evaluation::{EvaluationRecord, QnzRow};

pub const SWEEP_HEADER: [&str; 9] = [
    "sweep_axis",
    "sweep_value",
    "scheme",
    "trials",
    "nmse_db",
    "se_bits_per_s_per_hz",
    "q_nz",
    "eta",
    "seed",
];

pub const QNZ_HEADER: [&str; 5] = ["rx_antennas", "rho", "q", "q_nz", "q_nz_ratio"];

#[derive(Debug, thiserror::Error)]
#[error("{path}: {source}")]
pub struct OutputError {
    pub path: String,
    #[source]
    pub source: io::Error,
}

/// `printf("%.9g")`: nine significant digits, trailing zeros dropped,
/// exponent form outside `[1e-4, 1e9)`.
pub fn format_g9(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{x:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..9).contains(&exp) {
        let m = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        return format!("{m}e{sign}{:02}", exp.abs());
    }
    let decimals = (8 - exp).max(0) as usize;
    trim_zeros(&format!("{x:.decimals$}")).to_string()
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn writer<W: Write>(sink: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(sink)
}

fn to_io(e: csv::Error) -> io::Error {
    match e.into_kind() {
        csv::ErrorKind::Io(e) => e,
        other => io::Error::other(format!("{other:?}")),
    }
}

pub fn write_sweep_csv<W: Write>(records: &[EvaluationRecord], sink: W) -> io::Result<()> {
    let mut w = writer(sink);
    w.write_record(SWEEP_HEADER).map_err(to_io)?;
    for r in records {
        w.write_record([
            r.axis.name().to_string(),
            format_g9(r.sweep_value),
            r.scheme.name().to_string(),
            r.trials.to_string(),
            format_g9(r.nmse_db()),
            format_g9(r.se_bits),
            r.q_nz.to_string(),
            format_g9(r.eta),
            r.seed.to_string(),
        ])
        .map_err(to_io)?;
    }
    w.flush()
}

pub fn write_qnz_csv<W: Write>(rows: &[QnzRow], sink: W) -> io::Result<()> {
    let mut w = writer(sink);
    w.write_record(QNZ_HEADER).map_err(to_io)?;
    for r in rows {
        w.write_record([
            r.n_rx.to_string(),
            format_g9(r.rho),
            r.q.to_string(),
            r.q_nz.to_string(),
            format_g9(r.ratio),
        ])
        .map_err(to_io)?;
    }
    w.flush()
}

fn to_path<F>(path: &Path, write: F) -> Result<(), OutputError>
where
    F: FnOnce(&mut File) -> io::Result<()>,
{
    let wrap = |source| OutputError {
        path: path.display().to_string(),
        source,
    };
    let mut file = File::create(path).map_err(wrap)?;
    write(&mut file).map_err(wrap)
}

/// Writes the sweep table to `path`.
pub fn emit_csv(records: &[EvaluationRecord], path: &Path) -> Result<(), OutputError> {
    to_path(path, |f| write_sweep_csv(records, f))
}

pub fn emit_qnz_csv(rows: &[QnzRow], path: &Path) -> Result<(), OutputError> {
    to_path(path, |f| write_qnz_csv(rows, f))
}
