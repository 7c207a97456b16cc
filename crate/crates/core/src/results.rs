//! Line-delimited JSON result records and the mean ± std summary table.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::train::{RunMetrics, TrainConfig};

/// One fold of one repeat.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub dataset: String,
    pub repeat: usize,
    pub fold: usize,
    pub config: TrainConfig,
    pub metrics: RunMetrics,
}

pub fn write_records(path: impl AsRef<Path>, records: &[ResultRecord]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<ResultRecord>> {
    let f = BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for line in f.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanStd {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

impl MeanStd {
    pub fn of(xs: &[f64]) -> Self {
        if xs.is_empty() {
            return Self { mean: f64::NAN, std: f64::NAN };
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        Self { mean, std: var.sqrt() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub runs: usize,
    pub accuracy: MeanStd,
    pub auroc: MeanStd,
    pub ece: MeanStd,
}

pub fn summarize(records: &[ResultRecord]) -> Summary {
    let pick = |f: fn(&ResultRecord) -> f64| MeanStd::of(&records.iter().map(f).collect::<Vec<_>>());
    Summary {
        runs: records.len(),
        accuracy: pick(|r| r.metrics.test.accuracy),
        auroc: pick(|r| r.metrics.test.auroc),
        ece: pick(|r| r.metrics.test.ece),
    }
}

/// Plain-text table, one row per labeled summary.
pub fn format_table(rows: &[(String, Summary)]) -> String {
    let width = rows.iter().map(|(l, _)| l.len()).max().unwrap_or(0).max(6);
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<width$}  {:>4}  {:>15}  {:>15}  {:>15}",
        "method", "runs", "accuracy", "auroc", "ece"
    );
    for (label, m) in rows {
        let cell = |x: MeanStd| format!("{:.3} ± {:.3}", x.mean, x.std);
        let _ = writeln!(
            s,
            "{:<width$}  {:>4}  {:>15}  {:>15}  {:>15}",
            label,
            m.runs,
            cell(m.accuracy),
            cell(m.auroc),
            cell(m.ece)
        );
    }
    s
}
