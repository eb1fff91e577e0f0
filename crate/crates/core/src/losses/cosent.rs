use super::{LossOutput, PairBatch};
use crate::error::{Error, Result};
use crate::linalg::{cosine_with_grad, log_sum_exp, Matrix};

/// CoSENT ranking loss over pair cosines.
///
/// `L = log(1 + sum over (i, j) with gold_i > gold_j of exp(tau * (cos_j - cos_i)))`. The
/// pair enumeration is `O(B^2)`. Only the order of gold scores matters.
pub fn cosent_loss(batch: &PairBatch, tau: f64) -> Result<LossOutput> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::InvalidArgument(format!("tau must be positive, got {tau}")));
    }
    let b = batch.gold.len();
    let mut cos = Vec::with_capacity(b);
    let mut d_left = Vec::with_capacity(b);
    let mut d_right = Vec::with_capacity(b);
    for (u, v) in batch.left.iter_rows().zip(batch.right.iter_rows()) {
        let (c, gu, gv) = cosine_with_grad(u, v);
        cos.push(c);
        d_left.push(gu);
        d_right.push(gv);
    }

    let mut pairs = Vec::new();
    // exp(0) for the leading 1
    let mut terms = vec![0.0];
    for i in 0..b {
        for j in 0..b {
            if batch.gold[i] > batch.gold[j] {
                pairs.push((i, j));
                terms.push(tau * (cos[j] - cos[i]));
            }
        }
    }
    let value = log_sum_exp(&terms);

    let mut d_cos = vec![0.0; b];
    for (&(i, j), t) in pairs.iter().zip(&terms[1..]) {
        let w = tau * (t - value).exp();
        d_cos[j] += w;
        d_cos[i] -= w;
    }
    let dim = batch.left.cols();
    let mut gl = Matrix::zeros(b, dim);
    let mut gr = Matrix::zeros(b, dim);
    for k in 0..b {
        for (x, y) in gl.row_mut(k).iter_mut().zip(&d_left[k]) {
            *x = d_cos[k] * y;
        }
        for (x, y) in gr.row_mut(k).iter_mut().zip(&d_right[k]) {
            *x = d_cos[k] * y;
        }
    }
    Ok(LossOutput {
        value,
        grads: vec![gl, gr],
    })
}
