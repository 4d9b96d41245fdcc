//! CSV writers. Every float is printed with nine significant digits.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{HarnessError, Result};

pub fn fmt_f64(x: f64) -> String {
    format!("{x:.8e}")
}

/// Builds a CSV document from a header and pre-formatted rows.
pub fn csv_document(header: &str, rows: impl IntoIterator<Item = String>) -> String {
    let mut out = String::with_capacity(1024);
    out.push_str(header);
    out.push('\n');
    for row in rows {
        out.push_str(&row);
        out.push('\n');
    }
    out
}

pub fn write_file(dir: &Path, name: &str, contents: &str) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    let path = dir.join(name);
    std::fs::write(&path, contents).map_err(|e| HarnessError::io(&path, e))
}

/// Sorted samples with their empirical CDF `(i+1)/n`.
pub fn cdf_document(samples: &[f64]) -> String {
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut out = String::from("value_mbps,cdf\n");
    for (i, v) in sorted.iter().enumerate() {
        let _ = writeln!(out, "{},{}", fmt_f64(*v), fmt_f64((i + 1) as f64 / n));
    }
    out
}

/// Nearest-rank percentile of `samples`, `q` in (0, 1].
pub fn percentile(samples: &[f64], q: f64) -> f64 {
    if samples.is_empty() {
        return f64::NAN;
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

pub fn mean(samples: &[f64]) -> f64 {
    if samples.is_empty() {
        return f64::NAN;
    }
    samples.iter().sum::<f64>() / samples.len() as f64
}
