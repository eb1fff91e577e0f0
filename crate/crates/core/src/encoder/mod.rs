//! Hashed n-gram text encoder: `e = u / |u|`, `u = W2 tanh(W1 x + b1) + b2`.
//!
//! Parameters are held in `f64` for training and gradient checks. Checkpoints store `f32`, and
//! [`init_params`] draws `f32`-representable values so a fresh model survives a save/load
//! round trip bit for bit.

mod checkpoint;
mod features;

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub use checkpoint::{load_params, read_checkpoint, save_params, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use features::{featurize, fnv1a64, turkish_lowercase, FeatureVector, NGRAM_RANGE};

pub const DEFAULT_VOCAB: usize = 65536;
pub const DEFAULT_HIDDEN: usize = 256;
pub const DEFAULT_DIM: usize = 64;

/// Pre-normalization norms below this are rejected.
pub const DEGENERATE_NORM: f64 = 1e-12;

/// Encoder weights.
///
/// `W1` is logically `H x V` but stored column-major (one `H`-vector per hash bucket) because
/// inputs are sparse in `V`.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    vocab: usize,
    hidden: usize,
    dim: usize,
    pub(crate) w1t: Vec<f64>,
    pub(crate) b1: Vec<f64>,
    pub(crate) w2: Vec<f64>,
    pub(crate) b2: Vec<f64>,
}

fn check_dims(vocab: usize, hidden: usize, dim: usize) -> Result<()> {
    if vocab < 2 {
        return Err(Error::InvalidArgument(format!("V must be at least 2, got {vocab}")));
    }
    if hidden < 1 {
        return Err(Error::InvalidArgument("H must be at least 1".into()));
    }
    if dim < 8 || !dim.is_power_of_two() {
        return Err(Error::InvalidArgument(format!(
            "embedding dimension must be a power of two >= 8, got {dim}"
        )));
    }
    Ok(())
}

impl EncoderParams {
    /// All-zero parameters of the given shape.
    pub fn zeros(vocab: usize, hidden: usize, dim: usize) -> Result<Self> {
        check_dims(vocab, hidden, dim)?;
        Ok(Self {
            vocab,
            hidden,
            dim,
            w1t: vec![0.0; vocab * hidden],
            b1: vec![0.0; hidden],
            w2: vec![0.0; dim * hidden],
            b2: vec![0.0; dim],
        })
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `W1[row][col]` with `row < H`, `col < V`.
    pub fn w1(&self, row: usize, col: usize) -> f64 {
        self.w1t[col * self.hidden + row]
    }

    pub fn b1(&self) -> &[f64] {
        &self.b1
    }

    /// `W2` row-major, `d x H`.
    pub fn w2(&self) -> &[f64] {
        &self.w2
    }

    pub fn b2(&self) -> &[f64] {
        &self.b2
    }

    pub fn num_params(&self) -> usize {
        self.w1t.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    /// Maps a flat index in checkpoint order (W1 row-major, b1, W2, b2) to a storage slot.
    fn slot(&self, index: usize) -> (&'static str, usize) {
        let n1 = self.vocab * self.hidden;
        let n2 = n1 + self.hidden;
        let n3 = n2 + self.dim * self.hidden;
        if index < n1 {
            let (row, col) = (index / self.vocab, index % self.vocab);
            ("W1", col * self.hidden + row)
        } else if index < n2 {
            ("b1", index - n1)
        } else if index < n3 {
            ("W2", index - n2)
        } else {
            ("b2", index - n3)
        }
    }

    /// Parameter at a flat index in checkpoint order.
    pub fn get_flat(&self, index: usize) -> f64 {
        match self.slot(index) {
            ("W1", i) => self.w1t[i],
            ("b1", i) => self.b1[i],
            ("W2", i) => self.w2[i],
            (_, i) => self.b2[i],
        }
    }

    pub fn set_flat(&mut self, index: usize, value: f64) {
        match self.slot(index) {
            ("W1", i) => self.w1t[i] = value,
            ("b1", i) => self.b1[i] = value,
            ("W2", i) => self.w2[i] = value,
            (_, i) => self.b2[i] = value,
        }
    }

    pub fn is_finite(&self) -> bool {
        [&self.w1t, &self.b1, &self.w2, &self.b2]
            .iter()
            .all(|t| t.iter().all(|v| v.is_finite()))
    }

    /// Rounds every weight to `f32`, the checkpoint precision.
    pub fn round_to_storage(&mut self) {
        for t in [&mut self.w1t, &mut self.b1, &mut self.w2, &mut self.b2] {
            for v in t.iter_mut() {
                *v = f64::from(*v as f32);
            }
        }
    }

    /// Largest absolute difference to `other` over all parameters.
    pub fn max_abs_diff(&self, other: &EncoderParams) -> f64 {
        let pairs = [
            (&self.w1t, &other.w1t),
            (&self.b1, &other.b1),
            (&self.w2, &other.w2),
            (&self.b2, &other.b2),
        ];
        pairs
            .iter()
            .flat_map(|(a, b)| a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        [&self.w1t, &self.b1, &self.w2, &self.b2]
            .iter()
            .flat_map(|t| t.iter())
            .fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn encode(&self, text: &str) -> Result<(Vec<f64>, EncodeTape)> {
        self.encode_features(featurize(text, self.vocab))
    }

    pub fn embed(&self, text: &str) -> Result<Vec<f64>> {
        self.encode(text).map(|(e, _)| e)
    }

    pub fn encode_features(&self, features: FeatureVector) -> Result<(Vec<f64>, EncodeTape)> {
        let h_dim = self.hidden;
        let mut pre = self.b1.clone();
        for &(k, w) in features.entries() {
            let col = &self.w1t[k as usize * h_dim..(k as usize + 1) * h_dim];
            for (z, c) in pre.iter_mut().zip(col) {
                *z += w * c;
            }
        }
        let hidden: Vec<f64> = pre.iter().map(|z| z.tanh()).collect();
        let mut out = self.b2.clone();
        for (i, o) in out.iter_mut().enumerate() {
            let row = &self.w2[i * h_dim..(i + 1) * h_dim];
            *o += row.iter().zip(&hidden).map(|(a, b)| a * b).sum::<f64>();
        }
        let norm = out.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm >= DEGENERATE_NORM) {
            return Err(Error::DegenerateEmbedding { norm });
        }
        let tape = EncodeTape {
            features,
            pre,
            hidden,
            out,
            norm,
        };
        Ok((tape.embedding(), tape))
    }

    /// Gradients of `<grad_out, e>` with respect to every parameter.
    pub fn encode_backward(&self, tape: &EncodeTape, grad_out: &[f64]) -> Result<EncoderGrads> {
        let mut grads = EncoderGrads::zeros(self);
        self.accumulate_backward(tape, grad_out, &mut grads)?;
        Ok(grads)
    }

    /// Like [`encode_backward`](Self::encode_backward) but adds into `grads`.
    pub fn accumulate_backward(&self, tape: &EncodeTape, grad_out: &[f64], grads: &mut EncoderGrads) -> Result<()> {
        if grad_out.len() != self.dim {
            return Err(Error::Shape(format!(
                "upstream gradient has length {}, embedding dimension is {}",
                grad_out.len(),
                self.dim
            )));
        }
        if tape.hidden.len() != self.hidden || tape.out.len() != self.dim {
            return Err(Error::Shape("tape was not produced by parameters of this shape".into()));
        }
        let e = tape.embedding();
        let proj: f64 = e.iter().zip(grad_out).map(|(a, b)| a * b).sum();
        // (I - e e^T) g / |u|
        let d_out: Vec<f64> = grad_out
            .iter()
            .zip(&e)
            .map(|(g, ei)| (g - ei * proj) / tape.norm)
            .collect();

        let h_dim = self.hidden;
        let mut d_hidden = vec![0.0; h_dim];
        for (i, &du) in d_out.iter().enumerate() {
            grads.b2[i] += du;
            let row = &self.w2[i * h_dim..(i + 1) * h_dim];
            let grow = &mut grads.w2[i * h_dim..(i + 1) * h_dim];
            for j in 0..h_dim {
                grow[j] += du * tape.hidden[j];
                d_hidden[j] += row[j] * du;
            }
        }
        let d_pre: Vec<f64> = d_hidden
            .iter()
            .zip(&tape.hidden)
            .map(|(dh, h)| dh * (1.0 - h * h))
            .collect();
        for (b, d) in grads.b1.iter_mut().zip(&d_pre) {
            *b += d;
        }
        for &(k, w) in tape.features.entries() {
            let col = grads.w1.entry(k).or_insert_with(|| vec![0.0; h_dim]);
            for (c, d) in col.iter_mut().zip(&d_pre) {
                *c += w * d;
            }
        }
        Ok(())
    }
}

/// Forward intermediates needed to backpropagate one encoding.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodeTape {
    pub features: FeatureVector,
    /// `W1 x + b1`
    pub pre: Vec<f64>,
    /// `tanh(pre)`
    pub hidden: Vec<f64>,
    /// `u`, before normalization
    pub out: Vec<f64>,
    /// `|u|`
    pub norm: f64,
}

impl EncodeTape {
    /// Recomputes the normalized embedding; bitwise equal to what `encode` returned.
    pub fn embedding(&self) -> Vec<f64> {
        self.out.iter().map(|v| v / self.norm).collect()
    }
}

/// Parameter gradients. `W1` gradients are kept only for buckets that were touched.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderGrads {
    hidden: usize,
    vocab: usize,
    pub w1: BTreeMap<u32, Vec<f64>>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl EncoderGrads {
    pub fn zeros(params: &EncoderParams) -> Self {
        Self {
            hidden: params.hidden,
            vocab: params.vocab,
            w1: BTreeMap::new(),
            b1: vec![0.0; params.hidden],
            w2: vec![0.0; params.w2.len()],
            b2: vec![0.0; params.dim],
        }
    }

    /// Gradient at a flat index in checkpoint order.
    pub fn get_flat(&self, index: usize) -> f64 {
        let n1 = self.vocab * self.hidden;
        let n2 = n1 + self.hidden;
        let n3 = n2 + self.w2.len();
        if index < n1 {
            let (row, col) = (index / self.vocab, index % self.vocab);
            self.w1.get(&(col as u32)).map_or(0.0, |c| c[row])
        } else if index < n2 {
            self.b1[index - n1]
        } else if index < n3 {
            self.w2[index - n2]
        } else {
            self.b2[index - n3]
        }
    }

    pub fn num_params(&self) -> usize {
        self.vocab * self.hidden + self.b1.len() + self.w2.len() + self.b2.len()
    }

    pub fn add_assign(&mut self, other: &EncoderGrads) {
        for (k, col) in &other.w1 {
            let mine = self.w1.entry(*k).or_insert_with(|| vec![0.0; self.hidden]);
            for (a, b) in mine.iter_mut().zip(col) {
                *a += b;
            }
        }
        for (a, b) in [(&mut self.b1, &other.b1), (&mut self.w2, &other.w2), (&mut self.b2, &other.b2)] {
            for (x, y) in a.iter_mut().zip(b.iter()) {
                *x += y;
            }
        }
    }

    /// Name of the first tensor holding a NaN or infinity.
    pub fn first_non_finite(&self) -> Option<&'static str> {
        if self.w1.values().any(|c| c.iter().any(|v| !v.is_finite())) {
            return Some("W1");
        }
        [("b1", &self.b1), ("W2", &self.w2), ("b2", &self.b2)]
            .into_iter()
            .find(|(_, t)| t.iter().any(|v| !v.is_finite()))
            .map(|(name, _)| name)
    }

    pub fn max_abs(&self) -> f64 {
        self.w1
            .values()
            .flatten()
            .chain(&self.b1)
            .chain(&self.w2)
            .chain(&self.b2)
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Glorot-uniform weights from a seeded stream; biases start at zero.
pub fn init_params(seed: u64, vocab: usize, hidden: usize, dim: usize) -> Result<EncoderParams> {
    let mut p = EncoderParams::zeros(vocab, hidden, dim)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a1 = (6.0 / (vocab + hidden) as f64).sqrt() as f32;
    for row in 0..hidden {
        for col in 0..vocab {
            p.w1t[col * hidden + row] = f64::from(rng.gen_range(-a1..a1));
        }
    }
    let a2 = (6.0 / (hidden + dim) as f64).sqrt() as f32;
    for w in p.w2.iter_mut() {
        *w = f64::from(rng.gen_range(-a2..a2));
    }
    Ok(p)
}

/// Something that can embed text while recording a tape, and later turn an upstream gradient on
/// that embedding into accumulated parameter gradients.
pub trait TapeEncoder: Sync {
    type Tape: Send;
    type Grads;

    fn embedding_dim(&self) -> usize;
    fn encode_with_tape(&self, text: &str) -> Result<(Vec<f64>, Self::Tape)>;
    fn backward_into(&self, tape: &Self::Tape, grad_out: &[f64], grads: &mut Self::Grads) -> Result<()>;
    fn zero_grads(&self) -> Self::Grads;
}

impl TapeEncoder for EncoderParams {
    type Tape = EncodeTape;
    type Grads = EncoderGrads;

    fn embedding_dim(&self) -> usize {
        self.dim
    }

    fn encode_with_tape(&self, text: &str) -> Result<(Vec<f64>, EncodeTape)> {
        self.encode(text)
    }

    fn backward_into(&self, tape: &EncodeTape, grad_out: &[f64], grads: &mut EncoderGrads) -> Result<()> {
        self.accumulate_backward(tape, grad_out, grads)
    }

    fn zero_grads(&self) -> EncoderGrads {
        EncoderGrads::zeros(self)
    }
}
