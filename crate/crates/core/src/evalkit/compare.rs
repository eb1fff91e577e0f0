//! Before/after comparison tables in plain text and JSON.

use serde::{Deserialize, Serialize};

use super::{Metric, MetricReport, StsReport};
use crate::error::{Error, Result};
use crate::retrieval::Measure;

/// Reported and recomputed improvements further apart than this (percentage points) get a
/// footnote.
pub const IMPROVEMENT_MISMATCH_PP: f64 = 0.05;

/// `100 * (after - before) / before`.
pub fn relative_improvement(after: f64, before: f64) -> Result<f64> {
    if !(before > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "relative improvement needs a positive baseline, got {before}"
        )));
    }
    Ok(100.0 * (after - before) / before)
}

fn signed_pct(p: f64) -> String {
    // "-0.00" reads badly in a table
    let p = if p.abs() < 0.005 { 0.0 } else { p };
    format!("{p:+.2}%")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub metric: Metric,
    pub cutoff: usize,
    pub before: f64,
    pub after: f64,
    /// `None` when the baseline is zero.
    pub improvement_pct: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
}

/// Row per (metric, cutoff): before → after with relative improvement.
pub fn compare_reports(before: &MetricReport, after: &MetricReport) -> Result<Comparison> {
    if before.cutoffs != after.cutoffs {
        return Err(Error::InvalidArgument(format!(
            "cutoff mismatch: {:?} vs {:?}",
            before.cutoffs, after.cutoffs
        )));
    }
    let mut rows = Vec::new();
    for metric in Metric::ALL {
        for &k in &before.cutoffs {
            let (Some(b), Some(a)) = (before.get(metric, k), after.get(metric, k)) else {
                continue;
            };
            rows.push(ComparisonRow {
                metric,
                cutoff: k,
                before: b,
                after: a,
                improvement_pct: relative_improvement(a, b).ok(),
            });
        }
    }
    Ok(Comparison { rows })
}

impl Comparison {
    pub fn row(&self, metric: Metric, cutoff: usize) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.metric == metric && r.cutoff == cutoff)
    }

    pub fn render_text(&self) -> String {
        let mut out = format!("{:<14} {:<18} {:>9}\n", "metric", "before → after", "change");
        for r in &self.rows {
            let label = format!("{}@{}", r.metric, r.cutoff);
            let change = r.improvement_pct.map_or_else(|| "n/a".to_owned(), signed_pct);
            out.push_str(&format!(
                "{label:<14} {:<18} {change:>9}\n",
                arrow(r.before, r.after)
            ));
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable")
    }
}

/// `"0.8937 → 0.9417"`
pub fn arrow(before: f64, after: f64) -> String {
    format!("{before:.4} → {after:.4}")
}

/// Metric grid with one column per cutoff and "before → after" cells; missing cells are `-`.
pub fn render_metric_grid(before: &MetricReport, after: &MetricReport, rows: &[(Metric, &[usize])]) -> String {
    let cutoffs = &before.cutoffs;
    let width = 17;
    let mut out = format!("{:<10}", "metric");
    for k in cutoffs {
        out.push_str(&format!(" | {:^width$}", format!("@{k}")));
    }
    out.push('\n');
    for (metric, shown) in rows {
        out.push_str(&format!("{:<10}", metric.name()));
        for k in cutoffs {
            let cell = match (shown.contains(k), before.get(*metric, *k), after.get(*metric, *k)) {
                (true, Some(b), Some(a)) => arrow(b, a),
                _ => "-".to_owned(),
            };
            out.push_str(&format!(" | {cell:^width$}"));
        }
        out.push('\n');
    }
    out
}

/// Layout with accuracy/precision/recall at @1/@3/@5/@10, NDCG@10, MRR@10 and MAP@100.
pub fn render_finetuning_table(before: &MetricReport, after: &MetricReport) -> String {
    const SMALL: &[usize] = &[1, 3, 5, 10];
    render_metric_grid(
        before,
        after,
        &[
            (Metric::Accuracy, SMALL),
            (Metric::Precision, SMALL),
            (Metric::Recall, SMALL),
            (Metric::Ndcg, &[10]),
            (Metric::Mrr, &[10]),
            (Metric::Map, &[100]),
        ],
    )
}

/// One metric of a system-vs-baseline table, optionally with a previously reported improvement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemRow {
    pub label: String,
    pub system: f64,
    pub baseline: Option<f64>,
    pub reported_pct: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemRowResult {
    pub label: String,
    pub system: f64,
    pub baseline: Option<f64>,
    pub improvement_pct: Option<f64>,
    pub reported_pct: Option<f64>,
    /// Reported and recomputed improvement disagree by more than [`IMPROVEMENT_MISMATCH_PP`].
    pub mismatch: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemComparison {
    pub system_name: String,
    pub baseline_name: String,
    pub rows: Vec<SystemRowResult>,
}

pub fn compare_systems(system_name: &str, baseline_name: &str, rows: &[SystemRow]) -> SystemComparison {
    let rows = rows
        .iter()
        .map(|r| {
            let improvement_pct = r.baseline.and_then(|b| relative_improvement(r.system, b).ok());
            let mismatch = match (improvement_pct, r.reported_pct) {
                (Some(c), Some(p)) => (c - p).abs() > IMPROVEMENT_MISMATCH_PP,
                _ => false,
            };
            SystemRowResult {
                label: r.label.clone(),
                system: r.system,
                baseline: r.baseline,
                improvement_pct,
                reported_pct: r.reported_pct,
                mismatch,
            }
        })
        .collect();
    SystemComparison {
        system_name: system_name.to_owned(),
        baseline_name: baseline_name.to_owned(),
        rows,
    }
}

impl SystemComparison {
    /// Aligned table; baselines that are missing render as `n/a`, and rows whose reported
    /// improvement disagrees with `(after - before) / before` are marked and footnoted.
    pub fn render_text(&self) -> String {
        let mut out = format!(
            "{:<16} {:>14} {:>14} {:>12}\n",
            "metric", self.system_name, self.baseline_name, "rel. change"
        );
        let mut notes = Vec::new();
        for r in &self.rows {
            let baseline = r.baseline.map_or_else(|| "n/a".to_owned(), |b| format!("{b:.4}"));
            let mut change = r.improvement_pct.map_or_else(|| "n/a".to_owned(), signed_pct);
            if r.mismatch {
                notes.push(format!(
                    "[{}] {}: reported {} but (after - before) / before gives {}",
                    notes.len() + 1,
                    r.label,
                    signed_pct(r.reported_pct.unwrap_or_default()),
                    signed_pct(r.improvement_pct.unwrap_or_default()),
                ));
                change.push_str(&format!(" [{}]", notes.len()));
            }
            out.push_str(&format!(
                "{:<16} {:>14.4} {:>14} {:>12}\n",
                r.label, r.system, baseline, change
            ));
        }
        if !notes.is_empty() {
            out.push('\n');
            for n in notes {
                out.push_str(&n);
                out.push('\n');
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StsComparisonRow {
    pub measure: Measure,
    pub pearson_before: f64,
    pub pearson_after: f64,
    pub spearman_before: f64,
    pub spearman_after: f64,
}

pub fn compare_sts(before: &StsReport, after: &StsReport) -> Vec<StsComparisonRow> {
    Measure::ALL
        .iter()
        .filter_map(|m| {
            let (b, a) = (before.measures.get(m)?, after.measures.get(m)?);
            Some(StsComparisonRow {
                measure: *m,
                pearson_before: b.pearson,
                pearson_after: a.pearson,
                spearman_before: b.spearman,
                spearman_after: a.spearman,
            })
        })
        .collect()
}

/// Measure rows with Pearson and Spearman "before → after" columns.
pub fn render_sts_table(rows: &[StsComparisonRow]) -> String {
    let mut out = format!("{:<10} | {:^17} | {:^17}\n", "measure", "pearson (r)", "spearman (rho)");
    for r in rows {
        out.push_str(&format!(
            "{:<10} | {} | {}\n",
            r.measure.name(),
            arrow(r.pearson_before, r.pearson_after),
            arrow(r.spearman_before, r.spearman_after)
        ));
    }
    out
}
