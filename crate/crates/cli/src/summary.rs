//! The per-run summary table and its CSV form.
//!
//! Column order is fixed: `policy, chunk_size, prebuffer_s, repetition,
//! prebuffer_download_ms, mean_rebuffer_ms, frac_path0_prebuffer,
//! frac_path0_rebuffer, stall_ms, run_id, error`. Missing values are empty
//! cells.

use std::fs::File;
use std::io::{self, Read, Write};
use std::path::Path;

use duopath_core::{Policy, SessionSummary};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub policy: Policy,
    pub chunk_size: u64,
    pub prebuffer_s: f64,
    pub repetition: u32,
    pub prebuffer_download_ms: Option<f64>,
    pub mean_rebuffer_ms: Option<f64>,
    pub frac_path0_prebuffer: Option<f64>,
    pub frac_path0_rebuffer: Option<f64>,
    pub stall_ms: Option<f64>,
    /// Name of the run's event log, without extension.
    pub run_id: String,
    pub error: Option<String>,
}

pub const COLUMNS: [&str; 11] = [
    "policy",
    "chunk_size",
    "prebuffer_s",
    "repetition",
    "prebuffer_download_ms",
    "mean_rebuffer_ms",
    "frac_path0_prebuffer",
    "frac_path0_rebuffer",
    "stall_ms",
    "run_id",
    "error",
];

impl SummaryRow {
    pub fn fill_from(&mut self, s: &SessionSummary) {
        self.prebuffer_download_ms = s.prebuffer_download_ms;
        self.mean_rebuffer_ms = s.mean_rebuffer_ms();
        self.frac_path0_prebuffer = s.frac_path0_prebuffer;
        self.frac_path0_rebuffer = s.frac_path0_rebuffer;
        self.stall_ms = Some(s.stall_ms);
    }

    /// Whether the row can enter the statistics.
    pub fn usable(&self) -> bool {
        self.error.is_none() && self.prebuffer_download_ms.is_some()
    }
}

pub fn write_summary_to<W: Write>(w: W, rows: &[SummaryRow]) -> Result<(), csv::Error> {
    let mut out = csv::Writer::from_writer(w);
    if rows.is_empty() {
        out.write_record(COLUMNS)?;
    }
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_summary_from<R: Read>(r: R) -> Result<Vec<SummaryRow>, csv::Error> {
    let mut input = csv::Reader::from_reader(r);
    let headers = input.headers()?.clone();
    if headers.iter().ne(COLUMNS) {
        let msg = format!("unexpected summary columns: {}", headers.iter().collect::<Vec<_>>().join(","));
        return Err(csv::Error::from(io::Error::new(io::ErrorKind::InvalidData, msg)));
    }
    input.deserialize().collect()
}

pub fn write_summary(path: &Path, rows: &[SummaryRow]) -> Result<(), csv::Error> {
    write_summary_to(File::create(path)?, rows)
}

pub fn read_summary(path: &Path) -> Result<Vec<SummaryRow>, csv::Error> {
    read_summary_from(File::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row() -> SummaryRow {
        SummaryRow {
            policy: Policy::Ewma,
            chunk_size: 65536,
            prebuffer_s: 40.0,
            repetition: 2,
            prebuffer_download_ms: Some(1234.000000001),
            mean_rebuffer_ms: None,
            frac_path0_prebuffer: Some(0.1 + 0.2),
            frac_path0_rebuffer: None,
            stall_ms: Some(0.0),
            run_id: "rep002-ewma-65536-40s".into(),
            error: Some("connect failed: refused, \"quoted\"".into()),
        }
    }

    #[test]
    fn header_has_the_documented_order() {
        let mut buf = Vec::new();
        write_summary_to(&mut buf, &[row()]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), COLUMNS.join(","));
        let mut empty = Vec::new();
        write_summary_to(&mut empty, &[]).unwrap();
        assert_eq!(String::from_utf8(empty).unwrap().trim_end(), COLUMNS.join(","));
    }

    #[test]
    fn floats_and_text_survive_a_round_trip() {
        let rows = vec![row(), SummaryRow { error: None, mean_rebuffer_ms: Some(1.0 / 3.0), ..row() }];
        let mut buf = Vec::new();
        write_summary_to(&mut buf, &rows).unwrap();
        assert_eq!(read_summary_from(&buf[..]).unwrap(), rows);
    }

    #[test]
    fn foreign_columns_are_rejected() {
        assert!(read_summary_from(&b"a,b\n1,2\n"[..]).is_err());
    }
}
