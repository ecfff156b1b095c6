//! Seeded synthetic rooms: labelled clusters of splats whose language
//! features are noisy copies of their label embedding.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::text::LabelBank;

use super::{GaussianScene, GaussianSplat, SceneError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectGroup {
    pub label: String,
    /// Number of object instances.
    pub count: u32,
    pub gaussians_per_object: u32,
    /// Radius (m) of the ball each instance's splats are drawn from.
    pub cluster_radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSceneSpec {
    pub scene_id: String,
    /// Room size (m); instance centers are drawn inside `[0, extent]`.
    pub extent: [f64; 3],
    pub objects: Vec<ObjectGroup>,
    /// Standard deviation of the per-dimension feature noise.
    #[serde(default)]
    pub feature_noise: f64,
    #[serde(default)]
    pub seed: u64,
}

impl SynthSceneSpec {
    pub fn validate(&self) -> Result<(), SceneError> {
        if !(self.feature_noise >= 0.0) {
            return Err(SceneError::Invalid("feature noise must be non-negative".into()));
        }
        if self.extent.iter().any(|e| !(*e > 0.0)) {
            return Err(SceneError::Invalid("room extent must be positive".into()));
        }
        for g in &self.objects {
            if g.count == 0 || g.gaussians_per_object == 0 {
                return Err(SceneError::Invalid(format!("group `{}` needs counts >= 1", g.label)));
            }
            if !(g.cluster_radius >= 0.0) {
                return Err(SceneError::Invalid(format!("group `{}` has a negative radius", g.label)));
            }
        }
        Ok(())
    }
}

pub fn synth_scene(spec: &SynthSceneSpec, bank: &LabelBank) -> Result<GaussianScene, SceneError> {
    spec.validate()?;
    for g in &spec.objects {
        if bank.index_of(&g.label).is_none() {
            return Err(SceneError::UnknownLabel(g.label.clone()));
        }
    }
    let dim = bank.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.feature_noise.max(0.0)).expect("finite sigma");
    let mut splats = Vec::new();
    let mut labels = BTreeMap::new();
    let mut next_id = 1u32;
    for group in &spec.objects {
        let base = bank.embedding(&group.label).expect("checked above");
        let tint = label_color(&group.label);
        for _ in 0..group.count {
            let id = next_id;
            next_id += 1;
            labels.insert(id, group.label.clone());
            let center: [f64; 3] = std::array::from_fn(|a| rng.gen_range(0.0..=spec.extent[a]));
            for _ in 0..group.gaussians_per_object {
                let offset = uniform_ball(group.cluster_radius, &mut rng);
                let position = std::array::from_fn(|a| (center[a] + offset[a]) as f32);
                let mut feat: Vec<f64> = base
                    .iter()
                    .map(|&b| if spec.feature_noise > 0.0 { b + noise.sample(&mut rng) } else { b })
                    .collect();
                let n = feat.iter().map(|v| v * v).sum::<f64>().sqrt();
                feat.iter_mut().for_each(|v| *v /= n);
                splats.push(GaussianSplat {
                    position,
                    scale: std::array::from_fn(|_| rng.gen_range(0.005..0.03)),
                    rotation: random_quaternion(&mut rng),
                    opacity: rng.gen_range(0.2f32..=1.0),
                    color: std::array::from_fn(|c| (tint[c] + rng.gen_range(-0.05..0.05)).clamp(0.0, 1.0) as f32),
                    language_feature: feat.into_iter().map(|v| v as f32).collect(),
                    instance_id: Some(id),
                });
            }
        }
    }
    GaussianScene::new(spec.scene_id.clone(), dim, splats, labels)
}

fn uniform_ball<R: Rng + ?Sized>(radius: f64, rng: &mut R) -> [f64; 3] {
    if radius == 0.0 {
        return [0.0; 3];
    }
    loop {
        let p: [f64; 3] = std::array::from_fn(|_| rng.gen_range(-1.0..=1.0));
        if p.iter().map(|v| v * v).sum::<f64>() <= 1.0 {
            return p.map(|v| v * radius);
        }
    }
}

fn random_quaternion<R: Rng + ?Sized>(rng: &mut R) -> [f32; 4] {
    loop {
        let q: [f64; 4] = std::array::from_fn(|_| rng.sample(StandardNormal));
        let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n < 1e-6 {
            continue;
        }
        let q32 = q.map(|v| (v / n) as f32);
        let n32 = q32.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt();
        if (n32 - 1.0).abs() <= 1e-6 {
            return q32;
        }
    }
}

fn label_color(label: &str) -> [f64; 3] {
    let h = label.bytes().fold(0xcbf29ce484222325u64, |h, b| (h ^ b as u64).wrapping_mul(0x100000001b3));
    [(h & 0xff) as f64 / 255.0, ((h >> 8) & 0xff) as f64 / 255.0, ((h >> 16) & 0xff) as f64 / 255.0]
}
