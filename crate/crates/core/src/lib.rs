//! Language-augmented Gaussian splat scene tokenization.
//!
//! Scenes of Gaussian splats carrying per-splat language features are
//! distilled into a fixed budget of 128 task-selected tokens (plus 4 region
//! tokens when the prompt names a location), projected into the input space
//! of a small causal decoder, and trained with a prefix language-modeling
//! objective. A contrastive pretraining stage, an object-counting benchmark
//! generator and the usual captioning metrics round out the pipeline.

pub mod numerics;
pub mod scene;
pub mod text;
pub mod sparsifier;
pub mod bench;
pub mod model;
