//! Dense linear algebra, attention blocks, reverse-mode differentiation and
//! optimization primitives.

mod attention;
mod gradcheck;
mod graph;
mod optim;
mod params;
mod tensor;

pub use attention::{
    attention_pool, cross_attention_block, AttentionBlockParams, BlockVars, PoolParams, PoolVars,
};
pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport};
pub use graph::{Gradients, Graph, Var};
pub use optim::{cosine_lr, AdamW};
pub use params::{ParamEntry, ParamStore, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use tensor::{softmax_rows, Tensor2D};

use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NumericsError {
    #[error("empty input")]
    EmptyInput,
    #[error("nothing to pool")]
    NothingToPool,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
    #[error("invalid hyperparameter: {0}")]
    InvalidHyper(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("checkpoint checksum mismatch (stored {stored:#010x}, computed {computed:#010x})")]
    ChecksumMismatch { stored: u32, computed: u32 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Xavier-uniform matrix: entries in `±sqrt(6 / (rows + cols))`.
pub fn xavier_uniform<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Tensor2D {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.gen_range(-bound..=bound)).collect();
    Tensor2D::from_vec(rows, cols, data).expect("length matches")
}
