use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::ScoredPair;
use crate::encoder::EncoderParams;
use crate::error::{Error, Result, ResultExt};
use crate::retrieval::{similarity, Measure};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlations {
    pub pearson: f64,
    pub spearman: f64,
}

/// Pearson and Spearman correlation with gold scores, per similarity measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StsReport {
    pub pairs: usize,
    pub measures: BTreeMap<Measure, Correlations>,
}

fn centered(xs: &[f64]) -> Vec<f64> {
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    xs.iter().map(|x| x - mean).collect()
}

/// Centered covariance over the product of standard deviations.
pub fn pearson(x: &[f64], y: &[f64], x_name: &str, y_name: &str) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::Shape(format!("series of length {} and {}", x.len(), y.len())));
    }
    let cx = centered(x);
    let cy = centered(y);
    let sxx: f64 = cx.iter().map(|v| v * v).sum();
    let syy: f64 = cy.iter().map(|v| v * v).sum();
    if sxx == 0.0 {
        return Err(Error::ZeroVariance { series: x_name.into() });
    }
    if syy == 0.0 {
        return Err(Error::ZeroVariance { series: y_name.into() });
    }
    let sxy: f64 = cx.iter().zip(&cy).map(|(a, b)| a * b).sum();
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// 1-based ranks; tied values share the average of their positions.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && xs[order[end]] == xs[order[start]] {
            end += 1;
        }
        let avg = (start + end + 1) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = avg;
        }
        start = end;
    }
    ranks
}

pub fn spearman(x: &[f64], y: &[f64], x_name: &str, y_name: &str) -> Result<f64> {
    pearson(&average_ranks(x), &average_ranks(y), x_name, y_name)
}

/// Correlations of a score series with the gold series.
pub fn correlate(predicted: &[f64], gold: &[f64], name: &str) -> Result<Correlations> {
    Ok(Correlations {
        pearson: pearson(predicted, gold, name, "gold")?,
        spearman: spearman(predicted, gold, name, "gold")?,
    })
}

/// Encodes both sides of every pair and correlates the four similarity measures with gold.
pub fn sts_eval(params: &EncoderParams, pairs: &[ScoredPair]) -> Result<StsReport> {
    if pairs.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "STS evaluation needs at least 3 pairs, got {}",
            pairs.len()
        )));
    }
    let embedded: Vec<(Vec<f64>, Vec<f64>)> = pairs
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let a = params.embed(&p.sentence_a).context_with(|| format!("pair {i}"))?;
            let b = params.embed(&p.sentence_b).context_with(|| format!("pair {i}"))?;
            Ok((a, b))
        })
        .collect::<Result<_>>()?;
    let gold: Vec<f64> = pairs.iter().map(|p| p.gold_score).collect();
    let mut measures = BTreeMap::new();
    for m in Measure::ALL {
        let scores = embedded
            .iter()
            .map(|(a, b)| similarity(a, b, m))
            .collect::<Result<Vec<_>>>()?;
        measures.insert(m, correlate(&scores, &gold, m.name())?);
    }
    Ok(StsReport {
        pairs: pairs.len(),
        measures,
    })
}
