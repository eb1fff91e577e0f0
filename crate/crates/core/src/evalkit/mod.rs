//! Retrieval metrics, STS correlations and before/after comparison tables.

mod compare;
mod ir;
mod sts;

pub use compare::{
    arrow, compare_reports, compare_sts, compare_systems, relative_improvement, render_finetuning_table,
    render_metric_grid, render_sts_table, Comparison, ComparisonRow, StsComparisonRow, SystemComparison,
    SystemRow, SystemRowResult, IMPROVEMENT_MISMATCH_PP,
};
pub use ir::{ir_metrics, run_from_lists, Metric, MetricReport, RunResult, DEFAULT_CUTOFFS};
pub use sts::{average_ranks, correlate, pearson, spearman, sts_eval, Correlations, StsReport};

use crate::corpus::{Corpus, Qrels, Query};
use crate::encoder::EncoderParams;
use crate::error::{Result, ResultExt};
use crate::retrieval::{batch_top_k, build_index, truncate_renorm, EmbeddingIndex, Measure};
use rayon::prelude::*;

/// Encodes `queries`, ranks them against `index` and scores the run.
///
/// Query embeddings are truncated and re-normalized when the index holds shorter prefixes.
pub fn evaluate_index(
    params: &EncoderParams,
    index: &EmbeddingIndex,
    queries: &[Query],
    qrels: &Qrels,
    cutoffs: &[usize],
    measure: Measure,
) -> Result<MetricReport> {
    let depth = cutoffs.iter().copied().max().unwrap_or(1);
    let encoded: Vec<(String, Vec<f64>)> = queries
        .par_iter()
        .map(|q| {
            params
                .embed(&q.text)
                .and_then(|e| fit_to_index(e, index))
                .map(|e| (q.id.clone(), e))
                .context_with(|| format!("query {}", q.id))
        })
        .collect::<Result<_>>()?;
    let lists = batch_top_k(index, &encoded, depth, measure)?;
    ir_metrics(&run_from_lists(lists), qrels, cutoffs)
}

/// Truncates a full embedding to the index dimension when they differ.
pub fn fit_to_index(embedding: Vec<f64>, index: &EmbeddingIndex) -> Result<Vec<f64>> {
    if embedding.len() > index.dim() {
        truncate_renorm(&embedding, index.dim())
    } else {
        Ok(embedding)
    }
}

/// [`evaluate_index`] after building a fresh index over `corpus`.
pub fn evaluate_retrieval(
    params: &EncoderParams,
    corpus: &Corpus,
    queries: &[Query],
    qrels: &Qrels,
    cutoffs: &[usize],
) -> Result<MetricReport> {
    let index = build_index(params, corpus)?;
    evaluate_index(params, &index, queries, qrels, cutoffs, Measure::Cosine)
}
