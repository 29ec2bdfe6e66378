//! Aggregate statistics over a summary table.

use std::collections::BTreeMap;
use std::io::Write;

use duopath_core::Policy;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::summary::SummaryRow;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ReportError {
    #[error("the summary table is empty")]
    EmptyTable,
}

/// Median, mean and sample standard deviation. A single observation has a
/// standard deviation of zero and is flagged.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub n: usize,
    pub median: f64,
    pub mean: f64,
    pub std: f64,
    pub single_sample: bool,
}

impl Stats {
    /// `None` for no observations.
    pub fn of(values: &[f64]) -> Option<Stats> {
        let n = values.len();
        if n == 0 {
            return None;
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let median = if n % 2 == 1 { sorted[n / 2] } else { (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0 };
        let mean = values.iter().sum::<f64>() / n as f64;
        let std =
            if n > 1 { (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt() } else { 0.0 };
        Some(Stats { n, median, mean, std, single_sample: n == 1 })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CombinationReport {
    pub policy: Policy,
    pub chunk_size: u64,
    pub prebuffer_s: f64,
    /// Rows of this combination, usable or not.
    pub runs: usize,
    /// Rows left out because the run failed.
    pub failed: usize,
    pub prebuffer_download_ms: Stats,
    pub mean_rebuffer_ms: Option<Stats>,
    pub frac_path0_prebuffer: Option<Stats>,
    pub frac_path0_rebuffer: Option<Stats>,
    pub stall_ms: Option<Stats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub combinations: Vec<CombinationReport>,
}

/// Groups rows by (policy, chunk size, pre-buffer target). Failed rows are
/// not counted; a combination without any usable row is left out with a
/// warning.
pub fn report(rows: &[SummaryRow]) -> Result<Report, ReportError> {
    if rows.is_empty() {
        return Err(ReportError::EmptyTable);
    }
    let mut groups: BTreeMap<(Policy, u64, u64), Vec<&SummaryRow>> = BTreeMap::new();
    for r in rows {
        // the bit pattern orders non-negative floats correctly
        groups.entry((r.policy, r.chunk_size, r.prebuffer_s.to_bits())).or_default().push(r);
    }
    let mut combinations = Vec::new();
    for ((policy, chunk_size, target), group) in groups {
        let prebuffer_s = f64::from_bits(target);
        let ok: Vec<&SummaryRow> = group.iter().copied().filter(|r| r.usable()).collect();
        let collect =
            |f: fn(&SummaryRow) -> Option<f64>| Stats::of(&ok.iter().filter_map(|r| f(r)).collect::<Vec<_>>());
        let Some(download) = collect(|r| r.prebuffer_download_ms) else {
            log::warn!("{policy}/{chunk_size}/{prebuffer_s}s has no successful run; left out of the report");
            continue;
        };
        combinations.push(CombinationReport {
            policy,
            chunk_size,
            prebuffer_s,
            runs: group.len(),
            failed: group.len() - ok.len(),
            prebuffer_download_ms: download,
            mean_rebuffer_ms: collect(|r| r.mean_rebuffer_ms),
            frac_path0_prebuffer: collect(|r| r.frac_path0_prebuffer),
            frac_path0_rebuffer: collect(|r| r.frac_path0_rebuffer),
            stall_ms: collect(|r| r.stall_ms),
        });
    }
    Ok(Report { combinations })
}

/// Flat, plot-ready form of a report: one line per combination.
pub fn write_report_csv<W: Write>(w: W, report: &Report) -> Result<(), csv::Error> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "policy",
        "chunk_size",
        "prebuffer_s",
        "n",
        "download_median_ms",
        "download_mean_ms",
        "download_std_ms",
        "frac_path0_prebuffer_mean",
        "frac_path0_prebuffer_std",
        "frac_path0_rebuffer_mean",
        "frac_path0_rebuffer_std",
        "stall_mean_ms",
    ])?;
    let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for c in &report.combinations {
        let d = &c.prebuffer_download_ms;
        out.write_record([
            c.policy.to_string(),
            c.chunk_size.to_string(),
            c.prebuffer_s.to_string(),
            d.n.to_string(),
            d.median.to_string(),
            d.mean.to_string(),
            d.std.to_string(),
            cell(c.frac_path0_prebuffer.map(|s| s.mean)),
            cell(c.frac_path0_prebuffer.map(|s| s.std)),
            cell(c.frac_path0_rebuffer.map(|s| s.mean)),
            cell(c.frac_path0_rebuffer.map(|s| s.std)),
            cell(c.stall_ms.map(|s| s.mean)),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Human-readable table.
pub fn render(report: &Report) -> String {
    let mut s = format!(
        "{:<9} {:>8} {:>7} {:>3} {:>12} {:>12} {:>10} {:>15}\n",
        "policy", "chunk", "target", "n", "median ms", "mean ms", "std ms", "path0 pre"
    );
    for c in &report.combinations {
        let d = &c.prebuffer_download_ms;
        let frac =
            c.frac_path0_prebuffer.map(|f| format!("{:.3} ± {:.3}", f.mean, f.std)).unwrap_or_else(|| "-".into());
        s.push_str(&format!(
            "{:<9} {:>8} {:>6}s {:>3} {:>12.1} {:>12.1} {:>10.1} {:>15}{}\n",
            c.policy.as_str(),
            c.chunk_size,
            c.prebuffer_s,
            d.n,
            d.median,
            d.mean,
            d.std,
            frac,
            if d.single_sample { "  (n=1)" } else { "" }
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_of_even_count() {
        let s = Stats::of(&[4.0, 1.0, 3.0, 2.0]).unwrap();
        assert_eq!((s.median, s.mean), (2.5, 2.5));
        assert!(Stats::of(&[]).is_none());
    }
}
