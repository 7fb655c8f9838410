//! CSV and text rendering of scenario results.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::harness::run::ScanCurve;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReportFormat {
    #[default]
    Csv,
    Text,
}

/// Nine significant digits, the precision of every report number.
fn num(v: f64) -> String {
    format!("{v:.8e}")
}

/// `v` cut (not rounded) to two significant digits, as in `4.6e4`.
///
/// ```
/// use selfdiff::harness::two_significant;
/// assert_eq!(two_significant(0.109 / 2.34e-6), "4.6e4");
/// assert_eq!(two_significant(0.012 / 7e-6), "1.7e3");
/// assert_eq!(two_significant(-0.0123), "-1.2e-2");
/// ```
pub fn two_significant(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v}");
    }
    let sign = if v < 0.0 { "-" } else { "" };
    let a = v.abs();
    let mut e = a.log10().floor() as i32;
    // Guard against log10 landing just below an exact power of ten.
    if a / 10f64.powi(e) >= 10.0 {
        e += 1;
    }
    let digits = (a / 10f64.powi(e - 1) * (1.0 + 1e-12)).floor() as u64;
    format!("{sign}{}.{}e{e}", digits / 10, digits % 10)
}

/// Report as CSV: one row per scan point, or `key,value` rows for kinds
/// without an axis.
pub fn render_csv(curve: &ScanCurve) -> String {
    let mut out = String::new();
    if curve.axis_values.is_empty() {
        out.push_str("key,value\n");
        for (k, v) in &curve.summary {
            let _ = writeln!(out, "{k},{}", num(*v));
        }
        return out;
    }
    let mut header: Vec<&str> = Vec::new();
    if curve.csv_axis {
        header.push(&curve.axis_name);
    }
    header.extend(curve.columns.iter().map(|c| c.name.as_str()));
    out.push_str(&header.join(","));
    out.push('\n');
    for (i, x) in curve.axis_values.iter().enumerate() {
        let mut row: Vec<String> = Vec::new();
        if curve.csv_axis {
            row.push(num(*x));
        }
        row.extend(curve.columns.iter().map(|c| num(c.values[i])));
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// Report as `key=value` text: header, summary, then one line per point.
pub fn render_text(curve: &ScanCurve) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "scenario={}", curve.name);
    let _ = writeln!(out, "kind={}", curve.kind.as_str());
    for (k, v) in &curve.summary {
        let _ = writeln!(out, "{k}={}", num(*v));
    }
    if let (Some(eta), Some(p_d), Some(fom), Some(rate)) = (
        curve.summary_value("operating_eta"),
        curve.summary_value("operating_p_d"),
        curve.summary_value("eta_over_p_d"),
        curve.summary_value("max_count_rate_hz"),
    ) {
        let _ = writeln!(
            out,
            "table: eta={:.1}% p_d={} eta/p_d={} max_rate_hz={}",
            100.0 * eta,
            two_significant(p_d),
            two_significant(fom),
            two_significant(rate)
        );
    }
    for (i, x) in curve.axis_values.iter().enumerate() {
        let mut fields = vec![format!("{}={}", curve.axis_name, num(*x))];
        for c in curve.columns.iter().chain(&curve.extra_columns) {
            fields.push(format!("{}={}", c.name, num(c.values[i])));
        }
        let _ = writeln!(out, "point {}", fields.join(" "));
    }
    out
}

/// Writes the report and the run's artifacts into `out_dir` and returns the
/// paths written. Files are named after the scenario (or its kind).
pub fn emit_report(
    curve: &ScanCurve,
    format: ReportFormat,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir).map_err(|source| Error::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;
    let stem = if curve.name.is_empty() {
        curve.kind.as_str()
    } else {
        curve.name.as_str()
    };
    let mut files = Vec::new();
    let (ext, body) = match format {
        ReportFormat::Csv => ("csv", render_csv(curve)),
        ReportFormat::Text => ("txt", render_text(curve)),
    };
    files.push((out_dir.join(format!("{stem}.{ext}")), body));
    for a in &curve.artifacts {
        files.push((
            out_dir.join(format!("{stem}_{}.csv", a.name)),
            a.csv.clone(),
        ));
    }
    let mut written = Vec::new();
    for (path, body) in files {
        std::fs::write(&path, body).map_err(|source| Error::Io {
            path: path.clone(),
            source,
        })?;
        written.push(path);
    }
    Ok(written)
}
