//! Training objectives over embedding matrices, each returning exact gradients with respect to its
//! input matrices.
//!
//! Similarities are true cosines, so inputs need not be exactly unit-norm for the gradients to be
//! correct; encoder outputs are unit-norm anyway.

mod cached;
mod cosent;
mod matryoshka;
mod mnrl;

use crate::error::{Error, Result};
use crate::linalg::{norm, Matrix};

pub use cached::{cached_mnrl_loss, gradient_cached, split_triplet_texts, CachedOutput};
pub(crate) use cached::{cached_triplet_loss, stack_grads};
pub use cosent::cosent_loss;
pub use matryoshka::{matryoshka_wrap, MatryoshkaSpec};
pub use mnrl::mnrl_loss;

pub const DEFAULT_MNRL_SCALE: f64 = 20.0;
pub const DEFAULT_COSENT_TAU: f64 = 20.0;

/// Row norm tolerance enforced by [`BatchEmbeddings::new`].
pub const UNIT_NORM_TOLERANCE: f64 = 1e-6;

/// Anchor/positive/optional-negative embedding rows for contrastive losses.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchEmbeddings {
    pub anchors: Matrix,
    pub positives: Matrix,
    pub negatives: Option<Matrix>,
}

fn check_rows(name: &str, m: &Matrix, unit: bool) -> Result<()> {
    for (i, row) in m.iter_rows().enumerate() {
        let n = norm(row);
        if !n.is_finite() || n == 0.0 {
            return Err(Error::InvalidArgument(format!("{name} row {i} has norm {n}")));
        }
        if unit && (n - 1.0).abs() > UNIT_NORM_TOLERANCE {
            return Err(Error::InvalidArgument(format!("{name} row {i} is not unit-norm ({n})")));
        }
    }
    Ok(())
}

impl BatchEmbeddings {
    /// Validated batch: equal shapes and unit-norm rows.
    pub fn new(anchors: Matrix, positives: Matrix, negatives: Option<Matrix>) -> Result<Self> {
        let b = Self::from_raw(anchors, positives, negatives)?;
        for (name, m) in b.named() {
            check_rows(name, m, true)?;
        }
        Ok(b)
    }

    /// Batch whose rows need only be finite and non-zero.
    pub fn from_raw(anchors: Matrix, positives: Matrix, negatives: Option<Matrix>) -> Result<Self> {
        let b = Self {
            anchors,
            positives,
            negatives,
        };
        if b.anchors.rows() == 0 {
            return Err(Error::Shape("empty batch".into()));
        }
        for (name, m) in b.named() {
            if !m.same_shape(&b.anchors) {
                return Err(Error::Shape(format!(
                    "{name} is {}x{}, anchors are {}x{}",
                    m.rows(),
                    m.cols(),
                    b.anchors.rows(),
                    b.anchors.cols()
                )));
            }
            check_rows(name, m, false)?;
        }
        Ok(b)
    }

    fn named(&self) -> Vec<(&'static str, &Matrix)> {
        let mut v = vec![("anchors", &self.anchors), ("positives", &self.positives)];
        if let Some(n) = &self.negatives {
            v.push(("negatives", n));
        }
        v
    }

    pub fn batch_size(&self) -> usize {
        self.anchors.rows()
    }

    pub fn dim(&self) -> usize {
        self.anchors.cols()
    }
}

/// Sentence pairs with gold similarity for CoSENT.
#[derive(Debug, Clone, PartialEq)]
pub struct PairBatch {
    pub left: Matrix,
    pub right: Matrix,
    pub gold: Vec<f64>,
}

impl PairBatch {
    pub fn new(left: Matrix, right: Matrix, gold: Vec<f64>) -> Result<Self> {
        if !left.same_shape(&right) || left.rows() != gold.len() {
            return Err(Error::Shape(format!(
                "pair batch: left {}x{}, right {}x{}, {} gold scores",
                left.rows(),
                left.cols(),
                right.rows(),
                right.cols(),
                gold.len()
            )));
        }
        if left.rows() == 0 {
            return Err(Error::Shape("empty batch".into()));
        }
        if gold.iter().any(|g| !g.is_finite()) {
            return Err(Error::InvalidArgument("gold scores must be finite".into()));
        }
        check_rows("left", &left, false)?;
        check_rows("right", &right, false)?;
        Ok(Self { left, right, gold })
    }
}

/// Loss value plus one gradient matrix per input matrix, in [`LossInput::matrices`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub value: f64,
    pub grads: Vec<Matrix>,
}

impl LossOutput {
    pub fn is_finite(&self) -> bool {
        self.value.is_finite() && self.grads.iter().all(Matrix::is_finite)
    }
}

/// An input made of embedding matrices that share a column dimension.
pub trait LossInput: Sized {
    fn matrices(&self) -> Vec<&Matrix>;
    /// Same input with its matrices replaced (same count and row counts).
    fn with_matrices(&self, mats: Vec<Matrix>) -> Result<Self>;
}

impl LossInput for BatchEmbeddings {
    fn matrices(&self) -> Vec<&Matrix> {
        self.named().into_iter().map(|(_, m)| m).collect()
    }

    fn with_matrices(&self, mats: Vec<Matrix>) -> Result<Self> {
        let mut it = mats.into_iter();
        let (a, p) = (it.next(), it.next());
        match (a, p) {
            (Some(a), Some(p)) => Self::from_raw(a, p, it.next()),
            _ => Err(Error::Shape("batch needs anchors and positives".into())),
        }
    }
}

impl LossInput for PairBatch {
    fn matrices(&self) -> Vec<&Matrix> {
        vec![&self.left, &self.right]
    }

    fn with_matrices(&self, mats: Vec<Matrix>) -> Result<Self> {
        let mut it = mats.into_iter();
        match (it.next(), it.next()) {
            (Some(l), Some(r)) => Self::new(l, r, self.gold.clone()),
            _ => Err(Error::Shape("pair batch needs two matrices".into())),
        }
    }
}
