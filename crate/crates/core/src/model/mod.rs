//! Toy decoder, losses, decoding and the training stages.

mod data;
mod decoder;
mod generate;
mod loss;
mod pipeline;
mod train;

pub use data::{caption_samples, count_samples, counting_room_spec, pretrain_samples, CAPTION_PROMPT};
pub use decoder::{decoder_forward, lora_apply, BoundDecoder, LoraAdapter, LoraConfig, ToyDecoder, ToyDecoderConfig};
pub use generate::{apply_repetition_penalty, generate, nucleus, DecoderSource, GenerationConfig, LogitSource};
pub use loss::{contrastive_loss, contrastive_loss_var, prefix_lm_loss, prefix_lm_loss_var, DEFAULT_TAU};
pub use pipeline::{Dims, Model, ModelConfig};
pub use train::{
    pretrain_sparsifier, readout_eval, train_stage, EpochRecord, PretrainReport, PretrainSample, RetrievalEval, Stage,
    TrainConfig, TrainReport, TrainSample,
};

use thiserror::Error;

use crate::numerics::NumericsError;
use crate::scene::SceneError;
use crate::sparsifier::SparsifierError;
use crate::text::TextError;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("need negatives")]
    NeedNegatives,
    #[error("empty dataset")]
    EmptyDataset,
    #[error("sequence of {len} tokens exceeds the decoder maximum of {max}")]
    Overlength { len: usize, max: usize },
    #[error("token id {id} outside vocabulary of {vocab}")]
    TokenOutOfRange { id: usize, vocab: usize },
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error(transparent)]
    Sparsifier(#[from] SparsifierError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Text(#[from] TextError),
    #[error("{0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl ModelError {
    /// True for failures caused by non-finite numbers.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            ModelError::NonFinite(_)
                | ModelError::Numerics(NumericsError::NonFinite(_))
                | ModelError::Sparsifier(SparsifierError::Numerics(NumericsError::NonFinite(_)))
        )
    }
}
