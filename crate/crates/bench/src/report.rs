//! Experiment reports: per-increment records with confusion matrices, their
//! invariants, and CSV/JSON emission.

use std::fs;
use std::io::Write;
use std::path::Path;

use incrlearn_core::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::metrics::ConfusionMatrix;

/// What the replay memory held going into an increment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemorySummary {
    pub source: String,
    pub total_samples: usize,
    pub per_class: Vec<(usize, usize)>,
    pub underfilled: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IncrementRecord {
    /// 1-based increment index.
    pub increment: usize,
    pub classes_seen: usize,
    /// Top-1 accuracy on the cumulative test set.
    pub top1: f64,
    /// Accuracy on the held-out validation split, when one existed.
    pub validation_top1: Option<f64>,
    pub beta: f64,
    pub lambda: f64,
    pub seconds: f64,
    pub confusion: ConfusionMatrix,
    pub per_class_accuracy: Vec<Option<f64>>,
    pub memory: Option<MemorySummary>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub method: String,
    pub seed: u64,
    pub total_classes: usize,
    pub parts: usize,
    pub increments: Vec<IncrementRecord>,
}

impl ExperimentReport {
    /// Cross-field invariants every emitted report must satisfy.
    pub fn validate(&self) -> Result<()> {
        for rec in &self.increments {
            let acc = rec.confusion.accuracy();
            if (rec.top1 - acc).abs() > 1e-12 {
                return Err(Error::contract(format!(
                    "increment {}: top1 {} disagrees with confusion trace ratio {acc}",
                    rec.increment, rec.top1
                )));
            }
            if rec.confusion.classes() != rec.classes_seen {
                return Err(Error::contract(format!(
                    "increment {}: confusion covers {} classes but {} were seen",
                    rec.increment,
                    rec.confusion.classes(),
                    rec.classes_seen
                )));
            }
        }
        Ok(())
    }

    /// Final overall top-1, the headline number of a run.
    pub fn final_top1(&self) -> Option<f64> {
        self.increments.last().map(|r| r.top1)
    }

    /// Equality that ignores wall-clock times, for repeat-run comparisons.
    pub fn deterministic_eq(&self, other: &ExperimentReport) -> bool {
        if self.method != other.method
            || self.seed != other.seed
            || self.total_classes != other.total_classes
            || self.parts != other.parts
            || self.increments.len() != other.increments.len()
        {
            return false;
        }
        self.increments.iter().zip(&other.increments).all(|(a, b)| {
            let mut a = a.clone();
            let mut b = b.clone();
            a.seconds = 0.0;
            b.seconds = 0.0;
            a == b
        })
    }
}

pub const CSV_HEADER: &str = "increment,classes_seen,top1,beta,lambda,seconds";

/// One row per increment in the fixed column order; newline-terminated.
pub fn report_to_csv(report: &ExperimentReport) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for rec in &report.increments {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            rec.increment, rec.classes_seen, rec.top1, rec.beta, rec.lambda, rec.seconds
        ));
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<ReportFormat> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(Error::contract(format!(
                "unknown report format `{other}` (expected csv or json)"
            ))),
        }
    }
}

/// Validates and writes the report; JSON carries the full structure, CSV the
/// per-increment summary table. Both end with a newline.
pub fn emit_report(report: &ExperimentReport, format: ReportFormat, path: &Path) -> Result<()> {
    report.validate()?;
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    let mut file = fs::File::create(path)?;
    match format {
        ReportFormat::Csv => file.write_all(report_to_csv(report).as_bytes())?,
        ReportFormat::Json => {
            let json = serde_json::to_string_pretty(report)?;
            file.write_all(json.as_bytes())?;
            file.write_all(b"\n")?;
        }
    }
    Ok(())
}

pub fn load_report_json(path: &Path) -> Result<ExperimentReport> {
    let report: ExperimentReport = serde_json::from_str(&fs::read_to_string(path)?)?;
    report.validate()?;
    Ok(report)
}
