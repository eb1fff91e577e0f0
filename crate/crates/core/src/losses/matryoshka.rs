use serde::{Deserialize, Serialize};

use super::{LossInput, LossOutput};
use crate::error::{Error, Result};
use crate::linalg::{dot, norm, Matrix};

/// Prefix lengths (strictly decreasing, first = full dimension) and their loss weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatryoshkaSpec {
    pub dims: Vec<usize>,
    pub weights: Vec<f64>,
}

impl MatryoshkaSpec {
    pub fn new(dims: Vec<usize>, weights: Vec<f64>) -> Result<Self> {
        let spec = Self { dims, weights };
        spec.validate()?;
        Ok(spec)
    }

    /// Halvings of `dim` down to 8, all weighted 1.
    pub fn halvings(dim: usize) -> Result<Self> {
        let mut dims = vec![dim];
        while *dims.last().unwrap() / 2 >= 8 {
            dims.push(dims.last().unwrap() / 2);
        }
        let weights = vec![1.0; dims.len()];
        Self::new(dims, weights)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.is_empty() || self.dims.len() != self.weights.len() {
            return Err(Error::InvalidArgument(
                "matryoshka spec needs one weight per prefix length and at least one prefix".into(),
            ));
        }
        if self.dims.windows(2).any(|w| w[1] >= w[0]) || *self.dims.last().unwrap() == 0 {
            return Err(Error::InvalidArgument(format!(
                "matryoshka dims must be strictly decreasing and positive: {:?}",
                self.dims
            )));
        }
        if self.weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::InvalidArgument("matryoshka weights must be positive".into()));
        }
        Ok(())
    }

    /// Checks the spec against an embedding dimension.
    pub fn check_dim(&self, dim: usize) -> Result<()> {
        self.validate()?;
        if let Some(&bad) = self.dims.iter().find(|&&k| k > dim) {
            return Err(Error::InvalidArgument(format!(
                "matryoshka prefix {bad} exceeds embedding dimension {dim}"
            )));
        }
        if self.dims[0] != dim {
            return Err(Error::InvalidArgument(format!(
                "first matryoshka prefix must be the full dimension {dim}, got {}",
                self.dims[0]
            )));
        }
        Ok(())
    }
}

/// Rows truncated to `cols` and rescaled to unit norm, with the prefix norms.
fn truncate_rows(m: &Matrix, cols: usize) -> Result<(Matrix, Vec<f64>)> {
    let mut out = m.prefix_columns(cols);
    let mut norms = Vec::with_capacity(m.rows());
    for i in 0..out.rows() {
        let n = norm(out.row(i));
        if !(n >= 1e-12) {
            return Err(Error::InvalidArgument(format!(
                "row {i} has a zero {cols}-dimensional prefix"
            )));
        }
        out.row_mut(i).iter_mut().for_each(|v| *v /= n);
        norms.push(n);
    }
    Ok((out, norms))
}

/// `sum_k weights[k] * base(renorm(truncate(E, dims[k])))`.
///
/// Gradients flow back through the re-normalization Jacobian `(I - e e^T) / |t|` and are
/// zero-padded to the full dimension.
pub fn matryoshka_wrap<I, F>(base: F, spec: &MatryoshkaSpec, input: &I) -> Result<LossOutput>
where
    I: LossInput,
    F: Fn(&I) -> Result<LossOutput>,
{
    let mats = input.matrices();
    let dim = mats[0].cols();
    spec.check_dim(dim)?;

    let mut value = 0.0;
    let mut grads: Vec<Matrix> = mats.iter().map(|m| Matrix::zeros(m.rows(), dim)).collect();
    for (&k, &w) in spec.dims.iter().zip(&spec.weights) {
        let mut truncated = Vec::with_capacity(mats.len());
        let mut norms = Vec::with_capacity(mats.len());
        for m in &mats {
            let (t, n) = truncate_rows(m, k)?;
            truncated.push(t);
            norms.push(n);
        }
        let out = base(&input.with_matrices(truncated.clone())?)?;
        value += w * out.value;
        for (((acc, g), t), n) in grads.iter_mut().zip(&out.grads).zip(&truncated).zip(&norms) {
            for i in 0..g.rows() {
                let e = t.row(i);
                let proj = dot(e, g.row(i));
                let row = acc.row_mut(i);
                for c in 0..k {
                    row[c] += w * (g.row(i)[c] - e[c] * proj) / n[i];
                }
            }
        }
    }
    Ok(LossOutput { value, grads })
}
