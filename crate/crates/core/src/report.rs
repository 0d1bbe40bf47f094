//! Shared verdict and report plumbing: every checker returns a structured
//! report with worst-case margins, and every table lands in CSV with
//! 17-significant-digit floats.

use crate::error::Result;
use crate::grid::fmt_f64;
use serde::{Deserialize, Serialize};
use std::io::{BufWriter, Write};
use std::path::Path;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
    Skipped,
}

impl Verdict {
    pub fn from_bool(ok: bool) -> Self {
        if ok {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    }

    pub fn passed(self) -> bool {
        self == Verdict::Pass
    }

    /// Pass only if both pass; Skipped is neutral.
    pub fn and(self, other: Verdict) -> Verdict {
        match (self, other) {
            (Verdict::Fail, _) | (_, Verdict::Fail) => Verdict::Fail,
            (Verdict::Skipped, v) | (v, Verdict::Skipped) => v,
            _ => Verdict::Pass,
        }
    }
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Verdict::Pass => write!(f, "pass"),
            Verdict::Fail => write!(f, "fail"),
            Verdict::Skipped => write!(f, "skipped"),
        }
    }
}

/// One verified axiom or condition with its worst margin over the samples.
/// The margin convention is per check; `pass` generally means
/// `margin >= -tol` for the stated tolerance.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AxiomCheck {
    pub name: String,
    pub verdict: Verdict,
    pub margin: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub worst_x: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub worst_a: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl AxiomCheck {
    pub fn new(name: &str, verdict: Verdict, margin: f64) -> Self {
        AxiomCheck {
            name: name.to_string(),
            verdict,
            margin,
            worst_x: None,
            worst_a: None,
            note: None,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AxiomReport {
    pub subject: String,
    pub checks: Vec<AxiomCheck>,
    pub verdict: Verdict,
}

impl AxiomReport {
    pub fn from_checks(subject: &str, checks: Vec<AxiomCheck>) -> Self {
        let verdict = checks
            .iter()
            .map(|c| c.verdict)
            .fold(Verdict::Pass, Verdict::and);
        AxiomReport {
            subject: subject.to_string(),
            checks,
            verdict,
        }
    }

    pub fn check(&self, name: &str) -> Option<&AxiomCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Write a numeric table as CSV with full-precision floats.
pub fn write_csv_table(path: &Path, header: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "{}", header.join(","))?;
    for row in rows {
        let line: Vec<String> = row.iter().map(|v| fmt_f64(*v)).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    Ok(())
}
