use std::collections::BTreeMap;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Qrels;
use crate::error::{Error, Result};
use crate::retrieval::RankedList;

/// Cutoffs evaluated by default: the @1/@3/@5/@10 columns plus 100 for MAP.
pub const DEFAULT_CUTOFFS: [usize; 5] = [1, 3, 5, 10, 100];

/// query id → ranked list.
pub type RunResult = BTreeMap<String, RankedList>;

pub fn run_from_lists(lists: Vec<RankedList>) -> RunResult {
    lists.into_iter().map(|l| (l.query_id.clone(), l)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Accuracy,
    Precision,
    Recall,
    Mrr,
    Ndcg,
    Map,
}

impl Metric {
    pub const ALL: [Metric; 6] = [
        Metric::Accuracy,
        Metric::Precision,
        Metric::Recall,
        Metric::Mrr,
        Metric::Ndcg,
        Metric::Map,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Accuracy => "accuracy",
            Metric::Precision => "precision",
            Metric::Recall => "recall",
            Metric::Mrr => "mrr",
            Metric::Ndcg => "ndcg",
            Metric::Map => "map",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Mean IR metrics per cutoff over the evaluated queries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub cutoffs: Vec<usize>,
    pub metrics: BTreeMap<Metric, BTreeMap<usize, f64>>,
    pub evaluated_queries: usize,
    pub skipped_queries: usize,
}

impl MetricReport {
    pub fn get(&self, metric: Metric, cutoff: usize) -> Option<f64> {
        self.metrics.get(&metric).and_then(|m| m.get(&cutoff)).copied()
    }
}

/// Per-query values, indexed `[metric][cutoff position]`.
fn query_metrics(ranked: &[&str], judged: &BTreeMap<String, u32>, cutoffs: &[usize]) -> [Vec<f64>; 6] {
    let grade = |d: &str| judged.get(d).copied().unwrap_or(0);
    let relevant = judged.values().filter(|&&g| g > 0).count() as f64;
    let mut ideal: Vec<u32> = judged.values().copied().filter(|&g| g > 0).collect();
    ideal.sort_unstable_by(|a, b| b.cmp(a));

    let mut out: [Vec<f64>; 6] = Default::default();
    for &k in cutoffs {
        let top = &ranked[..k.min(ranked.len())];
        let mut hits = 0usize;
        let mut first_hit = None;
        let mut dcg = 0.0;
        let mut precision_sum = 0.0;
        for (r, d) in top.iter().enumerate() {
            let g = grade(d);
            if g > 0 {
                hits += 1;
                first_hit.get_or_insert(r + 1);
                dcg += f64::from(g) / ((r + 2) as f64).log2();
                precision_sum += hits as f64 / (r + 1) as f64;
            }
        }
        let idcg: f64 = ideal
            .iter()
            .take(k)
            .enumerate()
            .map(|(r, &g)| f64::from(g) / ((r + 2) as f64).log2())
            .sum();
        out[0].push(if hits > 0 { 1.0 } else { 0.0 });
        out[1].push(hits as f64 / k as f64);
        out[2].push(hits as f64 / relevant);
        out[3].push(first_hit.map_or(0.0, |r| 1.0 / r as f64));
        out[4].push(dcg / idcg);
        out[5].push(precision_sum / relevant.min(k as f64));
    }
    out
}

/// Accuracy (hit rate), precision, recall, MRR, NDCG (gain = grade) and MAP at every cutoff.
///
/// Queries absent from `qrels` or without any relevant document are skipped and counted.
pub fn ir_metrics(run: &RunResult, qrels: &Qrels, cutoffs: &[usize]) -> Result<MetricReport> {
    if cutoffs.is_empty() || cutoffs.iter().any(|&k| k < 1) {
        return Err(Error::InvalidArgument("cutoffs must be non-empty and >= 1".into()));
    }
    if run.is_empty() {
        return Err(Error::InvalidArgument("empty run".into()));
    }
    let mut cutoffs = cutoffs.to_vec();
    cutoffs.sort_unstable();
    cutoffs.dedup();

    let entries: Vec<(&String, &RankedList)> = run.iter().collect();
    let per_query: Vec<Option<[Vec<f64>; 6]>> = entries
        .par_iter()
        .map(|(qid, list)| {
            let judged = qrels.get(qid)?;
            if !judged.values().any(|&g| g > 0) {
                return None;
            }
            let ranked: Vec<&str> = list.doc_ids().collect();
            Some(query_metrics(&ranked, judged, &cutoffs))
        })
        .collect();

    let evaluated = per_query.iter().filter(|q| q.is_some()).count();
    let mut sums = vec![vec![0.0; cutoffs.len()]; 6];
    for q in per_query.iter().flatten() {
        for (m, values) in q.iter().enumerate() {
            for (c, v) in values.iter().enumerate() {
                sums[m][c] += v;
            }
        }
    }
    let denom = evaluated.max(1) as f64;
    let metrics = Metric::ALL
        .iter()
        .zip(&sums)
        .map(|(&m, s)| (m, cutoffs.iter().zip(s).map(|(&k, v)| (k, v / denom)).collect()))
        .collect();
    Ok(MetricReport {
        cutoffs,
        metrics,
        evaluated_queries: evaluated,
        skipped_queries: run.len() - evaluated,
    })
}
