use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::ReportFormat;
use super::{RoundReport, SweepAxis};
use crate::error::Result;

#[derive(Serialize)]
struct CsvRow {
    round: usize,
    ma: f64,
    ba: f64,
    n_accepted: usize,
    n_rejected: usize,
    n_true_malicious_rejected: usize,
    n_true_malicious_accepted: usize,
    wall_time_ms: u64,
}

impl From<&RoundReport> for CsvRow {
    fn from(r: &RoundReport) -> Self {
        Self {
            round: r.round,
            ma: r.ma,
            ba: r.ba,
            n_accepted: r.accepted.len(),
            n_rejected: r.rejected.len(),
            n_true_malicious_rejected: r.malicious_detected,
            n_true_malicious_accepted: r.malicious_accepted,
            wall_time_ms: r.wall_time_ms,
        }
    }
}

/// Streams round reports to disk. CSV rows are flushed as they arrive; JSON
/// is written as one array when the run finishes.
pub enum ReportWriter {
    Csv(Box<csv::Writer<File>>),
    Json { path: PathBuf, reports: Vec<RoundReport> },
}

impl ReportWriter {
    pub fn create(path: &Path, format: ReportFormat) -> Result<Self> {
        Ok(match format {
            ReportFormat::Csv => ReportWriter::Csv(Box::new(csv::Writer::from_path(path)?)),
            ReportFormat::Json => {
                File::create(path)?;
                ReportWriter::Json {
                    path: path.to_path_buf(),
                    reports: Vec::new(),
                }
            }
        })
    }

    pub fn write(&mut self, report: &RoundReport) -> Result<()> {
        match self {
            ReportWriter::Csv(w) => {
                w.serialize(CsvRow::from(report))?;
                w.flush()?;
            }
            ReportWriter::Json { reports, .. } => reports.push(report.clone()),
        }
        Ok(())
    }

    pub fn finish(self) -> Result<()> {
        match self {
            ReportWriter::Csv(mut w) => w.flush()?,
            ReportWriter::Json { path, reports } => write_json(&path, &reports)?,
        }
        Ok(())
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

/// Final-round summary of one sweep point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub ma: f64,
    pub ba: f64,
    pub n_accepted: usize,
    pub n_true_malicious_rejected: usize,
    pub n_true_malicious_accepted: usize,
    /// Fraction of rounds in which every malicious client was rejected.
    pub full_rejection_rate: f64,
    pub fallback_rounds: usize,
}

impl SweepRow {
    pub fn summarise(value: f64, reports: &[RoundReport]) -> Self {
        let last = reports.last().expect("a federation has at least one round");
        let full = reports.iter().filter(|r| r.malicious_accepted == 0).count();
        Self {
            value,
            ma: last.ma,
            ba: last.ba,
            n_accepted: last.accepted.len(),
            n_true_malicious_rejected: last.malicious_detected,
            n_true_malicious_accepted: last.malicious_accepted,
            full_rejection_rate: full as f64 / reports.len() as f64,
            fallback_rounds: reports.iter().filter(|r| r.fallback).count(),
        }
    }
}

pub fn write_sweep(path: &Path, format: ReportFormat, axis: SweepAxis, rows: &[SweepRow]) -> Result<()> {
    match format {
        ReportFormat::Json => write_json(
            path,
            &serde_json::json!({ "axis": axis.name(), "rows": rows }),
        ),
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_path(path)?;
            w.write_record([
                axis.name(),
                "ma",
                "ba",
                "n_accepted",
                "n_true_malicious_rejected",
                "n_true_malicious_accepted",
                "full_rejection_rate",
                "fallback_rounds",
            ])?;
            for r in rows {
                w.write_record([
                    r.value.to_string(),
                    r.ma.to_string(),
                    r.ba.to_string(),
                    r.n_accepted.to_string(),
                    r.n_true_malicious_rejected.to_string(),
                    r.n_true_malicious_accepted.to_string(),
                    r.full_rejection_rate.to_string(),
                    r.fallback_rounds.to_string(),
                ])?;
            }
            w.flush()?;
            Ok(())
        }
    }
}
