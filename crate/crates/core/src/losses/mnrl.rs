use super::{BatchEmbeddings, LossOutput};
use crate::error::{Error, Result};
use crate::linalg::{cosine_with_grad, log_sum_exp, Matrix};

/// Mean softmax cross-entropy over rows of `scores` with the diagonal as target.
///
/// Returns the value and `dL/dscores`.
pub(crate) fn diagonal_cross_entropy(scores: &[Vec<f64>]) -> (f64, Vec<Vec<f64>>) {
    let b = scores.len() as f64;
    let mut value = 0.0;
    let mut grads = Vec::with_capacity(scores.len());
    for (i, row) in scores.iter().enumerate() {
        let lse = log_sum_exp(row);
        value += lse - row[i];
        let mut g: Vec<f64> = row.iter().map(|s| (s - lse).exp() / b).collect();
        g[i] -= 1.0 / b;
        grads.push(g);
    }
    (value / b, grads)
}

/// Multiple negatives ranking loss with in-batch negatives.
///
/// Anchor `i` is scored against every positive and every explicit negative of the batch
/// (`B` or `2B` candidates) with `scale * cos`; its own positive is the target. The value is the
/// mean cross-entropy over anchors.
pub fn mnrl_loss(batch: &BatchEmbeddings, scale: f64) -> Result<LossOutput> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::InvalidArgument(format!("scale must be positive, got {scale}")));
    }
    let b = batch.batch_size();
    if b < 2 && batch.negatives.is_none() {
        return Err(Error::InsufficientCandidates);
    }
    let candidates: Vec<&[f64]> = batch
        .positives
        .iter_rows()
        .chain(batch.negatives.iter().flat_map(|n| n.iter_rows()))
        .collect();

    let mut scores = vec![vec![0.0; candidates.len()]; b];
    let mut d_anchor = vec![Vec::with_capacity(candidates.len()); b];
    let mut d_cand = vec![Vec::with_capacity(b); candidates.len()];
    for (i, a) in batch.anchors.iter_rows().enumerate() {
        for (j, c) in candidates.iter().enumerate() {
            let (cos, ga, gc) = cosine_with_grad(a, c);
            scores[i][j] = scale * cos;
            d_anchor[i].push(ga);
            d_cand[j].push(gc);
        }
    }
    let (value, d_scores) = diagonal_cross_entropy(&scores);

    let dim = batch.dim();
    let mut ga = Matrix::zeros(b, dim);
    let mut gc = Matrix::zeros(candidates.len(), dim);
    for i in 0..b {
        for j in 0..candidates.len() {
            let w = scale * d_scores[i][j];
            for (x, y) in ga.row_mut(i).iter_mut().zip(&d_anchor[i][j]) {
                *x += w * y;
            }
            for (x, y) in gc.row_mut(j).iter_mut().zip(&d_cand[j][i]) {
                *x += w * y;
            }
        }
    }
    let n = candidates.len();
    let mut grads = vec![ga, gc.rows_range(0, b)];
    if batch.negatives.is_some() {
        grads.push(gc.rows_range(b, n));
    }
    Ok(LossOutput { value, grads })
}
