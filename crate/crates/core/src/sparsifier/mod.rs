//! Task-guided and location-guided scene sparsification.
//!
//! Dense decoder-level tokens are re-tokenized into exactly 128 tokens by a
//! chain of cross-attention blocks whose queries are pooled from the task
//! prompt. When the prompt carries a 3D location, the splats around it are
//! pooled into 4 extra region tokens. Both are projected into the language
//! model's input width and prepended to the prompt embeddings.

mod downsample;
mod dump;
mod fourier;
mod stack;

pub use downsample::{downsample_knn_variant, downsample_uniform, kmeans_groups, uniform_indices};
pub use dump::{TokenDump, format_sig17};
pub use fourier::{fourier_encode, FourierPositionEncoder};
pub use stack::{
    embed_task, location_guided_sparsify, make_queries, project_and_assemble, task_guided_sparsify,
    BoundStack, Encoded, PreparedScene, SparseTokens, SparsifierStack,
};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::NumericsError;
use crate::scene::SceneError;

/// Task-selected scene tokens per prompt.
pub const SCENE_TOKENS: usize = 128;
/// Region tokens per located prompt.
pub const ROI_TOKENS: usize = 4;
/// Key/value tokens per block after downsampling.
pub const LEVEL_CAP: usize = 512;
/// Default initial ROI radius and growth step (m).
pub const ROI_STEP_M: f64 = 0.15;

#[derive(Debug, Error)]
pub enum SparsifierError {
    #[error("task token id {id} outside vocabulary of {vocab}")]
    OutOfVocab { id: usize, vocab: usize },
    #[error("task prompt has no tokens")]
    EmptyTask,
    #[error("invalid prompt: {0}")]
    InvalidPrompt(String),
    #[error("invalid sparsifier config: {0}")]
    Config(String),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Wiring variants: the full model and three ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    #[default]
    Full,
    /// All three blocks attend to the final level only.
    NoDepthwise,
    /// Queries are the seeds themselves, independent of the prompt.
    LearnableQueries,
    /// Levels are reduced by attention pooling / k-means instead of strides.
    KnnDownsample,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Full, Variant::NoDepthwise, Variant::LearnableQueries, Variant::KnnDownsample];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoDepthwise => "no_depthwise",
            Variant::LearnableQueries => "learnable_queries",
            Variant::KnnDownsample => "knn_downsample",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = SparsifierError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| SparsifierError::Config(format!("unknown variant `{s}` (expected full, no_depthwise, learnable_queries or knn_downsample)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Location {
    Point([f64; 3]),
    Box { min: [f64; 3], max: [f64; 3] },
}

impl Location {
    /// The point itself, or the box center.
    pub fn center(&self) -> [f64; 3] {
        match *self {
            Location::Point(p) => p,
            Location::Box { min, max } => std::array::from_fn(|a| 0.5 * (min[a] + max[a])),
        }
    }

    pub fn validate(&self) -> Result<(), SparsifierError> {
        let finite = |p: &[f64; 3]| p.iter().all(|v| v.is_finite());
        match self {
            Location::Point(p) if !finite(p) => Err(SparsifierError::InvalidPrompt("location is not finite".into())),
            Location::Box { min, max } => {
                if !finite(min) || !finite(max) {
                    return Err(SparsifierError::InvalidPrompt("box corners are not finite".into()));
                }
                if (0..3).any(|a| min[a] > max[a]) {
                    return Err(SparsifierError::InvalidPrompt(format!("box min {min:?} exceeds max {max:?}")));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskPrompt {
    pub token_ids: Vec<usize>,
    pub location: Option<Location>,
}

impl TaskPrompt {
    pub fn new(token_ids: Vec<usize>, location: Option<Location>) -> Result<Self, SparsifierError> {
        let p = Self { token_ids, location };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), SparsifierError> {
        if self.token_ids.is_empty() {
            return Err(SparsifierError::EmptyTask);
        }
        if let Some(loc) = &self.location {
            loc.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SparsifierConfig {
    /// Scene feature width.
    pub d_f: usize,
    /// Language model input width.
    pub d_lm: usize,
    /// Attention heads in every sparsifier block and pool.
    pub heads: usize,
    /// Task vocabulary size.
    pub vocab: usize,
    #[serde(default)]
    pub variant: Variant,
    /// Initial ROI radius (m); the radius grows in 0.15 m steps.
    #[serde(default = "default_roi_radius")]
    pub roi_radius_m: f64,
}

fn default_roi_radius() -> f64 {
    ROI_STEP_M
}

impl SparsifierConfig {
    pub fn validate(&self) -> Result<(), SparsifierError> {
        let bad = |m: String| Err(SparsifierError::Config(m));
        if self.d_f == 0 || self.d_f % 2 != 0 {
            return bad(format!("d_f = {} must be even and positive", self.d_f));
        }
        if self.heads == 0 || self.d_f % self.heads != 0 {
            return bad(format!("d_f = {} not divisible by {} heads", self.d_f, self.heads));
        }
        if self.d_lm == 0 || self.vocab == 0 {
            return bad("d_lm and vocab must be positive".into());
        }
        if !(self.roi_radius_m > 0.0 && self.roi_radius_m.is_finite()) {
            return bad(format!("roi_radius_m = {} must be positive", self.roi_radius_m));
        }
        Ok(())
    }
}
