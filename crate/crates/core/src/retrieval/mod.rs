//! Exact dense retrieval over an in-memory `f32` index.

mod io;

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::encoder::EncoderParams;
use crate::error::{Error, Result, ResultExt};

pub use io::{load_index, read_index, save_index, write_index, INDEX_MAGIC, INDEX_VERSION};

/// Row norms of a normalized index must be within this of 1.
pub const INDEX_NORM_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Measure {
    Cosine,
    Dot,
    Euclidean,
    Manhattan,
}

impl Measure {
    pub const ALL: [Measure; 4] = [Measure::Cosine, Measure::Dot, Measure::Euclidean, Measure::Manhattan];

    pub fn name(self) -> &'static str {
        match self {
            Measure::Cosine => "cosine",
            Measure::Dot => "dot",
            Measure::Euclidean => "euclidean",
            Measure::Manhattan => "manhattan",
        }
    }
}

impl fmt::Display for Measure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Measure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Measure::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown similarity measure {s:?}")))
    }
}

/// Larger-is-better similarity: cosine, dot, `-|u - v|_2`, `-|u - v|_1`.
pub fn similarity(u: &[f64], v: &[f64], measure: Measure) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::Shape(format!("vectors of length {} and {}", u.len(), v.len())));
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    Ok(match measure {
        Measure::Dot => dot,
        Measure::Cosine => {
            let nu = u.iter().map(|a| a * a).sum::<f64>().sqrt();
            let nv = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            if nu == 0.0 || nv == 0.0 {
                return Err(Error::InvalidArgument("cosine similarity of a zero vector".into()));
            }
            dot / (nu * nv)
        }
        Measure::Euclidean => -u.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt(),
        Measure::Manhattan => -u.iter().zip(v).map(|(a, b)| (a - b).abs()).sum::<f64>(),
    })
}

/// First `dim` coordinates re-normalized to unit length (norm computed in `f64`).
pub fn truncate_renorm(v: &[f64], dim: usize) -> Result<Vec<f64>> {
    if dim < 1 || dim > v.len() {
        return Err(Error::InvalidArgument(format!(
            "truncation dimension {dim} outside 1..={}",
            v.len()
        )));
    }
    if dim == v.len() {
        return Ok(v.to_vec());
    }
    let n = v[..dim].iter().map(|a| a * a).sum::<f64>().sqrt();
    if !(n >= 1e-12) {
        return Err(Error::InvalidArgument(format!("{dim}-prefix has zero norm")));
    }
    Ok(v[..dim].iter().map(|a| a / n).collect())
}

fn truncate_renorm_f32(v: &[f32], dim: usize) -> Option<Vec<f32>> {
    let n = v[..dim].iter().map(|&a| f64::from(a) * f64::from(a)).sum::<f64>().sqrt();
    (n >= 1e-12).then(|| v[..dim].iter().map(|&a| (f64::from(a) / n) as f32).collect())
}

/// Unit-norm document embeddings, row-major `N x dim`, with ids in corpus order.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingIndex {
    ids: Vec<String>,
    vectors: Vec<f32>,
    dim: usize,
}

impl EmbeddingIndex {
    /// Validates unique ids, shape and unit row norms.
    pub fn new(ids: Vec<String>, vectors: Vec<f32>, dim: usize) -> Result<Self> {
        if dim == 0 || vectors.len() != ids.len() * dim {
            return Err(Error::Shape(format!(
                "{} ids with {} values at dimension {dim}",
                ids.len(),
                vectors.len()
            )));
        }
        let mut seen = std::collections::HashSet::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if !seen.insert(id.as_str()) {
                return Err(Error::DuplicateId { id: id.clone(), line: i + 1 });
            }
        }
        let index = Self { ids, vectors, dim };
        for i in 0..index.len() {
            let n = index.row(i).iter().map(|&a| f64::from(a) * f64::from(a)).sum::<f64>().sqrt();
            if (n - 1.0).abs() > INDEX_NORM_TOLERANCE {
                return Err(Error::InvalidArgument(format!(
                    "row {} ({}) has norm {n}",
                    i, index.ids[i]
                )));
            }
        }
        Ok(index)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    pub fn vectors(&self) -> &[f32] {
        &self.vectors
    }

    /// Keeps the first `dim` coordinates of every row and re-normalizes.
    pub fn truncate_renorm(&self, dim: usize) -> Result<EmbeddingIndex> {
        if dim < 1 || dim > self.dim {
            return Err(Error::InvalidArgument(format!(
                "truncation dimension {dim} outside 1..={}",
                self.dim
            )));
        }
        if dim == self.dim {
            return Ok(self.clone());
        }
        let mut vectors = Vec::with_capacity(self.len() * dim);
        for i in 0..self.len() {
            let row = truncate_renorm_f32(self.row(i), dim).ok_or_else(|| {
                Error::InvalidArgument(format!("row {i} ({}) has a zero {dim}-prefix", self.ids[i]))
            })?;
            vectors.extend(row);
        }
        Ok(EmbeddingIndex {
            ids: self.ids.clone(),
            vectors,
            dim,
        })
    }

    /// Exhaustive top-`k` under `measure`, ties broken by ascending doc id.
    pub fn top_k(&self, query: &[f64], k: usize, measure: Measure) -> Result<RankedList> {
        top_k(self, "", query, k, measure)
    }
}

/// Encodes `title + " " + text` of every document, in corpus order.
pub fn build_index(params: &EncoderParams, corpus: &Corpus) -> Result<EmbeddingIndex> {
    if corpus.is_empty() {
        return Err(Error::InvalidArgument("cannot index an empty corpus".into()));
    }
    let rows: Vec<Vec<f64>> = corpus
        .documents()
        .par_iter()
        .map(|d| params.embed(&d.encoder_text()).context_with(|| format!("document {}", d.id)))
        .collect::<Result<_>>()?;
    let vectors = rows.iter().flatten().map(|&v| v as f32).collect();
    EmbeddingIndex::new(corpus.ids().map(str::to_owned).collect(), vectors, params.dim())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub doc_id: String,
    pub score: f32,
}

/// Ranked documents for one query: descending score, then ascending doc id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub query_id: String,
    pub hits: Vec<Hit>,
}

impl RankedList {
    pub fn doc_ids(&self) -> impl Iterator<Item = &str> {
        self.hits.iter().map(|h| h.doc_id.as_str())
    }
}

fn dot_f32(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Ranks every row of `index` against `query`.
///
/// Cosine ranks by the raw dot product (index rows are unit-norm, so dividing by the query norm
/// does not change the order) and reports `dot / |q|`. Distances accumulate in `f64`.
pub fn top_k(index: &EmbeddingIndex, query_id: &str, query: &[f64], k: usize, measure: Measure) -> Result<RankedList> {
    if k < 1 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if index.is_empty() {
        return Err(Error::InvalidArgument("empty index".into()));
    }
    if query.len() != index.dim() {
        return Err(Error::Shape(format!(
            "query has dimension {}, index has {}",
            query.len(),
            index.dim()
        )));
    }
    let q: Vec<f32> = query.iter().map(|&v| v as f32).collect();
    let q_norm = q.iter().map(|&a| f64::from(a) * f64::from(a)).sum::<f64>().sqrt() as f32;
    if measure == Measure::Cosine && q_norm == 0.0 {
        return Err(Error::InvalidArgument("cosine similarity of a zero query".into()));
    }
    // (rank key, reported score, row)
    let mut scored: Vec<(f32, f32, usize)> = (0..index.len())
        .map(|i| {
            let row = index.row(i);
            match measure {
                Measure::Dot => {
                    let s = dot_f32(&q, row);
                    (s, s, i)
                }
                Measure::Cosine => {
                    let s = dot_f32(&q, row);
                    (s, s / q_norm, i)
                }
                Measure::Euclidean => {
                    let d: f64 = q.iter().zip(row).map(|(&a, &b)| f64::from(a - b).powi(2)).sum();
                    let s = -(d.sqrt() as f32);
                    (s, s, i)
                }
                Measure::Manhattan => {
                    let d: f64 = q.iter().zip(row).map(|(&a, &b)| f64::from((a - b).abs())).sum();
                    let s = -(d as f32);
                    (s, s, i)
                }
            }
        })
        .collect();
    let order = |a: &(f32, f32, usize), b: &(f32, f32, usize)| -> Ordering {
        b.0.total_cmp(&a.0).then_with(|| index.ids[a.2].cmp(&index.ids[b.2]))
    };
    let k = k.min(scored.len());
    if k < scored.len() {
        scored.select_nth_unstable_by(k - 1, order);
        scored.truncate(k);
    }
    scored.sort_unstable_by(order);
    Ok(RankedList {
        query_id: query_id.to_owned(),
        hits: scored
            .into_iter()
            .map(|(_, s, i)| Hit {
                doc_id: index.ids[i].clone(),
                score: s,
            })
            .collect(),
    })
}

/// Ranks many queries; the output equals the sequential loop regardless of thread count.
pub fn batch_top_k(
    index: &EmbeddingIndex,
    queries: &[(String, Vec<f64>)],
    k: usize,
    measure: Measure,
) -> Result<Vec<RankedList>> {
    queries
        .par_iter()
        .map(|(id, q)| top_k(index, id, q, k, measure))
        .collect()
}
