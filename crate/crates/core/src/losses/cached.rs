//! Gradient caching: full-batch loss gradients with memory bounded by the chunk size.
//!
//! 1. Encode every text chunk by chunk, dropping tapes, to assemble the full embedding matrix.
//! 2. Evaluate the loss on that matrix; its gradient with respect to each row is the cache.
//! 3. Re-encode chunk by chunk keeping tapes, and push each row's cached gradient through the
//!    encoder backward pass.
//!
//! Encoding inside a chunk runs in parallel; gradient accumulation always runs serially in row
//! order, so the result is bitwise independent of thread count and of the chunk size.

use rayon::prelude::*;

use super::{mnrl_loss, BatchEmbeddings, LossOutput};
use crate::corpus::Triplet;
use crate::encoder::TapeEncoder;
use crate::error::{Error, Result, ResultExt};
use crate::linalg::Matrix;

#[derive(Debug, Clone)]
pub struct CachedOutput<G> {
    pub value: f64,
    pub grads: G,
    /// Largest number of encoder tapes alive at once.
    pub peak_live_tapes: usize,
}

/// Runs the three gradient-cache passes over `texts`.
///
/// `loss` receives the assembled `texts.len() x d` embedding matrix and returns the value and
/// `dL/dE` of the same shape.
pub fn gradient_cached<E, F>(encoder: &E, texts: &[&str], chunk_size: usize, loss: F) -> Result<CachedOutput<E::Grads>>
where
    E: TapeEncoder,
    F: FnOnce(Matrix) -> Result<(f64, Matrix)>,
{
    if chunk_size < 1 {
        return Err(Error::InvalidArgument("chunk_size must be at least 1".into()));
    }
    let dim = encoder.embedding_dim();
    let encode_chunk = |offset: usize, chunk: &[&str]| -> Result<Vec<(Vec<f64>, E::Tape)>> {
        chunk
            .par_iter()
            .enumerate()
            .map(|(i, t)| {
                encoder
                    .encode_with_tape(t)
                    .context_with(|| format!("encoding row {}", offset + i))
            })
            .collect()
    };

    let mut embeddings = Matrix::zeros(texts.len(), dim);
    for (c, chunk) in texts.chunks(chunk_size).enumerate() {
        let offset = c * chunk_size;
        // Tapes are dropped as soon as the chunk's embeddings are copied out.
        for (i, (e, _)) in encode_chunk(offset, chunk)?.into_iter().enumerate() {
            embeddings.row_mut(offset + i).copy_from_slice(&e);
        }
    }

    let (value, cache) = loss(embeddings)?;
    if cache.rows() != texts.len() || cache.cols() != dim {
        return Err(Error::Shape("loss gradient does not match the embedding matrix".into()));
    }

    let mut grads = encoder.zero_grads();
    let mut peak = 0;
    for (c, chunk) in texts.chunks(chunk_size).enumerate() {
        let offset = c * chunk_size;
        let tapes = encode_chunk(offset, chunk)?;
        peak = peak.max(tapes.len());
        for (i, (_, tape)) in tapes.iter().enumerate() {
            encoder.backward_into(tape, cache.row(offset + i), &mut grads)?;
        }
    }
    Ok(CachedOutput {
        value,
        grads,
        peak_live_tapes: peak,
    })
}

/// Flattens a batch of triplets into `[anchors.., positives.., negatives..]`.
///
/// Negatives must be present on every triplet or on none.
pub fn split_triplet_texts(triplets: &[Triplet]) -> Result<(Vec<&str>, bool)> {
    let with_neg = triplets.iter().filter(|t| t.negative.is_some()).count();
    if with_neg != 0 && with_neg != triplets.len() {
        return Err(Error::InvalidArgument(
            "batch mixes triplets with and without negatives".into(),
        ));
    }
    let mut texts: Vec<&str> = triplets.iter().map(|t| t.anchor.as_str()).collect();
    texts.extend(triplets.iter().map(|t| t.positive.as_str()));
    texts.extend(triplets.iter().filter_map(|t| t.negative.as_deref()));
    Ok((texts, with_neg > 0))
}

/// Reassembles a flattened triplet embedding matrix into a batch.
pub(crate) fn batch_from_rows(rows: &Matrix, b: usize, has_negatives: bool) -> Result<BatchEmbeddings> {
    let negatives = has_negatives.then(|| rows.rows_range(2 * b, 3 * b));
    BatchEmbeddings::from_raw(rows.rows_range(0, b), rows.rows_range(b, 2 * b), negatives)
}

/// Stacks loss gradients back into the flattened row order.
pub(crate) fn stack_grads(out: &LossOutput) -> Matrix {
    let rows: usize = out.grads.iter().map(Matrix::rows).sum();
    let cols = out.grads[0].cols();
    let data = out.grads.iter().flat_map(|g| g.as_slice().iter().copied()).collect();
    Matrix::from_vec(rows, cols, data).expect("consistent gradient shapes")
}

/// Any triplet-batch loss evaluated through the gradient cache.
pub(crate) fn cached_triplet_loss<E, F>(
    encoder: &E,
    triplets: &[Triplet],
    chunk_size: usize,
    loss: F,
) -> Result<CachedOutput<E::Grads>>
where
    E: TapeEncoder,
    F: FnOnce(&BatchEmbeddings) -> Result<LossOutput>,
{
    if chunk_size < 1 {
        return Err(Error::InvalidArgument("chunk_size must be at least 1".into()));
    }
    let (texts, has_negatives) = split_triplet_texts(triplets)?;
    let b = triplets.len();
    gradient_cached(encoder, &texts, chunk_size, |rows| {
        let batch = batch_from_rows(&rows, b, has_negatives)?;
        let out = loss(&batch)?;
        Ok((out.value, stack_grads(&out)))
    })
}

/// MNRL value and parameter gradients for a triplet batch, computed with the gradient cache.
///
/// Equal to encoding the whole batch at once and backpropagating directly; `chunk_size = B` is
/// exactly that computation.
pub fn cached_mnrl_loss<E: TapeEncoder>(
    encoder: &E,
    triplets: &[Triplet],
    chunk_size: usize,
    scale: f64,
) -> Result<CachedOutput<E::Grads>> {
    if chunk_size > triplets.len() {
        return Err(Error::InvalidArgument(format!(
            "chunk_size {chunk_size} exceeds batch size {}",
            triplets.len()
        )));
    }
    cached_triplet_loss(encoder, triplets, chunk_size, |b| mnrl_loss(b, scale))
}
