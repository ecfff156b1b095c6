//! Gaussian splat scenes carrying per-splat language features.

mod grid;
mod io;
mod levels;
mod sample;
mod synth;

pub use grid::{brute_force_radius, roi_members, RoiResult, SpatialGrid, DEFAULT_CELL_SIZE};
pub use io::{load_scene, load_scene_json, load_scene_with_width, save_scene, save_scene_json, SCENE_MAGIC, SCENE_VERSION};
pub use levels::{mock_decoder_levels, morton_code, DecoderLevels, LevelTokens, LEVEL_SIZES};
pub use sample::{sample_gaussians, DEFAULT_SAMPLE_SIZE};
pub use synth::{synth_scene, ObjectGroup, SynthSceneSpec};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("bad magic: expected GSVL")]
    BadMagic,
    #[error("unsupported scene version {0}")]
    Version(u32),
    #[error("truncated payload: needed {needed} bytes, {available} available")]
    Truncated { needed: usize, available: usize },
    #[error("feature width mismatch: expected {expected}, found {found}")]
    FeatureWidth { expected: usize, found: usize },
    #[error("scene checksum mismatch (stored {stored:#010x}, computed {computed:#010x})")]
    Checksum { stored: u32, computed: u32 },
    #[error("invalid scene: {0}")]
    Invalid(String),
    #[error("no gaussians")]
    NoGaussians,
    #[error("label `{0}` has no embedding")]
    UnknownLabel(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianSplat {
    pub position: [f32; 3],
    pub scale: [f32; 3],
    /// Unit quaternion (w, x, y, z).
    pub rotation: [f32; 4],
    pub opacity: f32,
    pub color: [f32; 3],
    pub language_feature: Vec<f32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instance_id: Option<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: [f32; 3],
    pub max: [f32; 3],
}

impl Aabb {
    pub fn empty() -> Self {
        Self { min: [0.0; 3], max: [0.0; 3] }
    }

    pub fn around<'a>(points: impl IntoIterator<Item = &'a [f32; 3]>) -> Self {
        let mut it = points.into_iter();
        let Some(first) = it.next() else { return Self::empty() };
        let mut b = Self { min: *first, max: *first };
        for p in it {
            for a in 0..3 {
                b.min[a] = b.min[a].min(p[a]);
                b.max[a] = b.max[a].max(p[a]);
            }
        }
        b
    }

    pub fn contains(&self, p: &[f32; 3]) -> bool {
        (0..3).all(|a| self.min[a] <= p[a] && p[a] <= self.max[a])
    }

    /// Euclidean distance from `p` to the box (0 inside).
    pub fn distance_to(&self, p: [f64; 3]) -> f64 {
        let mut s = 0.0;
        for a in 0..3 {
            let lo = self.min[a] as f64;
            let hi = self.max[a] as f64;
            let d = if p[a] < lo { lo - p[a] } else if p[a] > hi { p[a] - hi } else { 0.0 };
            s += d * d;
        }
        s.sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianScene {
    pub scene_id: String,
    pub feature_dim: usize,
    pub splats: Vec<GaussianSplat>,
    #[serde(default)]
    pub label_table: BTreeMap<u32, String>,
    #[serde(skip)]
    bounds: Option<Aabb>,
}

/// Instance annotation record: `{scene_id, instances: [{id, label}]}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneAnnotations {
    pub scene_id: String,
    pub instances: Vec<InstanceLabel>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceLabel {
    pub id: u32,
    pub label: String,
}

impl GaussianScene {
    pub fn new(
        scene_id: impl Into<String>,
        feature_dim: usize,
        splats: Vec<GaussianSplat>,
        label_table: BTreeMap<u32, String>,
    ) -> Result<Self, SceneError> {
        let mut s = Self { scene_id: scene_id.into(), feature_dim, splats, label_table, bounds: None };
        s.validate()?;
        s.bounds = Some(Aabb::around(s.splats.iter().map(|g| &g.position)));
        Ok(s)
    }

    pub fn len(&self) -> usize {
        self.splats.len()
    }

    pub fn is_empty(&self) -> bool {
        self.splats.is_empty()
    }

    pub fn bounds(&self) -> Aabb {
        self.bounds.unwrap_or_else(|| Aabb::around(self.splats.iter().map(|g| &g.position)))
    }

    pub fn position(&self, i: usize) -> [f64; 3] {
        let p = self.splats[i].position;
        [p[0] as f64, p[1] as f64, p[2] as f64]
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        for (i, s) in self.splats.iter().enumerate() {
            if s.language_feature.len() != self.feature_dim {
                return Err(SceneError::FeatureWidth {
                    expected: self.feature_dim,
                    found: s.language_feature.len(),
                });
            }
            let finite = s.position.iter().chain(&s.scale).chain(&s.rotation).chain(&s.color)
                .chain(&s.language_feature)
                .all(|v| v.is_finite())
                && s.opacity.is_finite();
            if !finite {
                return Err(SceneError::Invalid(format!("splat {i} has non-finite values")));
            }
            let qn = s.rotation.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt();
            if (qn - 1.0).abs() > 1e-6 {
                return Err(SceneError::Invalid(format!("splat {i} quaternion norm {qn}")));
            }
            if !(0.0..=1.0).contains(&s.opacity) {
                return Err(SceneError::Invalid(format!("splat {i} opacity {}", s.opacity)));
            }
            if let Some(id) = s.instance_id {
                if !self.label_table.contains_key(&id) {
                    return Err(SceneError::Invalid(format!("splat {i} instance {id} has no label")));
                }
            }
        }
        Ok(())
    }

    /// Instance annotations derived from the label table, restricted to
    /// instances that own at least one splat.
    pub fn annotations(&self) -> SceneAnnotations {
        let used: std::collections::BTreeSet<u32> =
            self.splats.iter().filter_map(|s| s.instance_id).collect();
        SceneAnnotations {
            scene_id: self.scene_id.clone(),
            instances: self
                .label_table
                .iter()
                .filter(|(id, _)| used.contains(id))
                .map(|(id, label)| InstanceLabel { id: *id, label: label.clone() })
                .collect(),
        }
    }

    /// Instance centroids (mean splat position) with their labels.
    pub fn instance_centers(&self) -> Vec<(u32, String, [f64; 3])> {
        let mut acc: BTreeMap<u32, ([f64; 3], usize)> = BTreeMap::new();
        for (i, s) in self.splats.iter().enumerate() {
            if let Some(id) = s.instance_id {
                let e = acc.entry(id).or_insert(([0.0; 3], 0));
                let p = self.position(i);
                for a in 0..3 {
                    e.0[a] += p[a];
                }
                e.1 += 1;
            }
        }
        acc.into_iter()
            .map(|(id, (sum, n))| {
                let c = [sum[0] / n as f64, sum[1] / n as f64, sum[2] / n as f64];
                (id, self.label_table[&id].clone(), c)
            })
            .collect()
    }
}
