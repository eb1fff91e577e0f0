//! Training and evaluation toolkit for dense retrieval embeddings at desk scale.
//!
//! A hashed n-gram encoder trained with in-batch contrastive (MNRL), CoSENT and gradient-cached
//! MNRL objectives, optional Matryoshka prefix losses, a staged trainer, exact top-k search and
//! the usual IR and STS metrics.

// `!(x >= y)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod evalkit;
pub mod linalg;
pub mod losses;
pub mod retrieval;
pub mod trainer;

pub use error::{Error, Result};
