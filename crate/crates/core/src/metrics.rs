//! Append-only CSV metric rows shared by online RL, RWR and evaluation.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

pub const RL_COLUMNS: [&str; 6] = [
    "step",
    "episode",
    "relabeled_return",
    "success",
    "expert_loss",
    "pushback_loss",
];

pub const RWR_EXTRA_COLUMNS: [&str; 2] = ["mean_weight_success", "mean_weight_failed"];

/// One row. Empty cells are written for quantities that do not apply.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricRow {
    pub step: u64,
    pub episode: u64,
    pub relabeled_return: Option<f64>,
    pub success: Option<f64>,
    pub expert_loss: Option<f64>,
    pub pushback_loss: Option<f64>,
    /// Only emitted by RWR training.
    pub mean_weights: Option<(f64, f64)>,
}

fn cell(out: &mut String, value: Option<f64>) {
    out.push(',');
    if let Some(v) = value {
        let _ = write!(out, "{v}");
    }
}

pub fn header(with_weights: bool) -> String {
    let mut cols: Vec<&str> = RL_COLUMNS.to_vec();
    if with_weights {
        cols.extend(RWR_EXTRA_COLUMNS);
    }
    cols.join(",")
}

/// Renders rows as CSV text with a header; byte-stable for identical rows.
pub fn to_csv(rows: &[MetricRow], with_weights: bool) -> String {
    let mut out = header(with_weights);
    out.push('\n');
    for row in rows {
        let _ = write!(out, "{},{}", row.step, row.episode);
        cell(&mut out, row.relabeled_return);
        cell(&mut out, row.success);
        cell(&mut out, row.expert_loss);
        cell(&mut out, row.pushback_loss);
        if with_weights {
            cell(&mut out, row.mean_weights.map(|w| w.0));
            cell(&mut out, row.mean_weights.map(|w| w.1));
        }
        out.push('\n');
    }
    out
}

pub fn write_csv(path: impl AsRef<Path>, rows: &[MetricRow], with_weights: bool) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, to_csv(rows, with_weights)).map_err(|e| Error::io(path, e))
}
