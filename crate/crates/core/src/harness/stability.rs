//! Stability report: per-method mean and spread of standardized scores.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::sweeps::ScoreTable;
use crate::error::Result;
use crate::metrics::{standardized_overall_scores, MethodStability};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityRow {
    pub method: String,
    pub stats: MethodStability,
}

pub fn stability_report(table: &ScoreTable) -> Result<Vec<StabilityRow>> {
    let stats = standardized_overall_scores(&table.cells())?;
    Ok(table
        .methods
        .iter()
        .cloned()
        .zip(stats)
        .map(|(method, stats)| StabilityRow { method, stats })
        .collect())
}

/// Plain-text table, one `method  mean ± std` line per method.
pub fn render_stability(rows: &[StabilityRow]) -> String {
    let width = rows.iter().map(|r| r.method.len()).max().unwrap_or(6).max(6);
    let mut out = format!("{:<width$}  {:>14}\n", "method", "mean ± std");
    for r in rows {
        let _ = writeln!(out, "{:<width$}  {:>6.1} ± {:<5.1}", r.method, r.stats.mean, r.stats.std);
    }
    out
}
