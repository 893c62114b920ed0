//! JSON-lines metrics log and its tidy CSV export.

use std::fs;
use std::path::Path;

use cml_bgnn_core::training::{MetricRecord, Split};
use serde::{Deserialize, Serialize};

use crate::error::{io_err, Error, Result};

/// One log line: `{iter, split, loss_E, loss_B, acc, ci}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricLine {
    pub iter: usize,
    pub split: String,
    #[serde(rename = "loss_E")]
    pub loss_e: Option<f64>,
    #[serde(rename = "loss_B")]
    pub loss_b: Option<f64>,
    pub acc: Option<f64>,
    pub ci: Option<f64>,
}

impl From<&MetricRecord> for MetricLine {
    fn from(r: &MetricRecord) -> Self {
        Self {
            iter: r.iter,
            split: r.split.as_str().to_string(),
            loss_e: r.loss_e,
            loss_b: r.loss_b,
            acc: r.acc,
            ci: r.ci,
        }
    }
}

pub fn to_jsonl(log: &[MetricRecord]) -> String {
    let mut out = String::new();
    for r in log {
        out.push_str(&serde_json::to_string(&MetricLine::from(r)).expect("metrics are finite"));
        out.push('\n');
    }
    out
}

pub fn write_metrics(log: &[MetricRecord], path: &Path) -> Result<()> {
    fs::write(path, to_jsonl(log)).map_err(io_err(path))
}

/// Parses a metrics log; blank lines are skipped.
pub fn parse_metrics(text: &str, path: &Path) -> Result<Vec<MetricLine>> {
    let mut lines = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed: MetricLine = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i as u64 + 1,
            msg: e.to_string(),
        })?;
        if parsed.split != Split::Train.as_str() && parsed.split != Split::Val.as_str() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: i as u64 + 1,
                msg: format!("unknown split `{}`", parsed.split),
            });
        }
        lines.push(parsed);
    }
    Ok(lines)
}

/// Long-format rows `iter,split,metric,value`, one per present field, in
/// log order.
pub fn tidy_csv(lines: &[MetricLine]) -> String {
    let mut out = String::from("iter,split,metric,value\n");
    for l in lines {
        let fields = [("loss_E", l.loss_e), ("loss_B", l.loss_b), ("acc", l.acc), ("ci", l.ci)];
        for (name, value) in fields {
            if let Some(v) = value {
                out.push_str(&format!("{},{},{},{}\n", l.iter, l.split, name, v));
            }
        }
    }
    out
}

pub fn export_plot(metrics: &Path, out: &Path) -> Result<usize> {
    let text = fs::read_to_string(metrics).map_err(io_err(metrics))?;
    let lines = parse_metrics(&text, metrics)?;
    fs::write(out, tidy_csv(&lines)).map_err(io_err(out))?;
    Ok(lines.len())
}
