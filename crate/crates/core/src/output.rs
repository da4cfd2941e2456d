//! Text and binary serializations shared by the command line and tests.

use std::fmt::Write;

use crate::experiments::{ConvergenceTable, RunReport};

pub const CONVERGENCE_HEADER: &str = "scheme,dt,l2_error,l2_rate,linf_error,linf_rate";
pub const SERIES_HEADER: &str = "step,time,sup_norm,energy";

/// Shortest decimal that parses back to `x`, switching to exponent form
/// for very small or very large magnitudes. Never locale dependent.
pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let a = x.abs();
    if a == 0.0 || (1e-4..1e16).contains(&a) {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

fn fmt_rate(rate: Option<f64>, first: bool) -> String {
    match (first, rate) {
        (true, _) => String::new(),
        (false, Some(r)) => fmt_f64(r),
        (false, None) => "nan".into(),
    }
}

/// CSV table, preceded by one `# WARNING uncertified dt` line per row whose
/// step exceeds the scheme's ceiling.
pub fn convergence_csv(table: &ConvergenceTable) -> String {
    let mut out = String::new();
    for r in table.rows.iter().filter(|r| !r.certified) {
        writeln!(out, "# WARNING uncertified dt: {} dt={} (T/{})", r.scheme, fmt_f64(r.dt), r.divisor).unwrap();
    }
    out.push_str(CONVERGENCE_HEADER);
    out.push('\n');
    let mut previous = None;
    for r in &table.rows {
        let first = previous != Some(r.scheme);
        previous = Some(r.scheme);
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.scheme,
            fmt_f64(r.dt),
            fmt_f64(r.l2_error),
            fmt_rate(r.l2_rate, first),
            fmt_f64(r.linf_error),
            fmt_rate(r.linf_rate, first),
        )
        .unwrap();
    }
    out
}

pub fn series_csv(report: &RunReport) -> String {
    let mut out = String::with_capacity(64 * report.times.len());
    out.push_str(SERIES_HEADER);
    out.push('\n');
    for (m, ((t, s), e)) in report.times.iter().zip(&report.sup_norm).zip(&report.energy).enumerate() {
        writeln!(out, "{m},{},{},{}", fmt_f64(*t), fmt_f64(*s), fmt_f64(*e)).unwrap();
    }
    out
}

/// Raw little-endian `f64` bytes in the field's row-major order.
pub fn snapshot_bytes(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}
