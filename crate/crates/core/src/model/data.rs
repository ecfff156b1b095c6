use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bench::{CountTemplates, ExclusionRules};
use crate::scene::{GaussianScene, ObjectGroup, SynthSceneSpec};
use crate::sparsifier::{Location, SparsifierError, TaskPrompt};
use crate::text::{LabelBank, Vocab, EOS};

use super::{ModelError, PretrainSample, TrainSample};

/// Prompt of the caption (alignment) stage; the object is given by the
/// prompt location.
pub const CAPTION_PROMPT: &str = "what is the object at this location";

const SPLATS_PER_OBJECT: u32 = 24;

/// A room holding `objects` (label, instance count) with exactly
/// `total_splats` splats: every instance gets the same number of splats and
/// a single floor instance takes the remainder, so the splat total says
/// nothing about the counts.
pub fn counting_room_spec(scene_id: &str, objects: &[(&str, u32)], total_splats: u32, seed: u64) -> Result<SynthSceneSpec, ModelError> {
    let used: u32 = objects.iter().map(|(_, c)| c * SPLATS_PER_OBJECT).sum();
    if used >= total_splats {
        return Err(ModelError::Config(format!("{used} object splats leave no room for the floor in {total_splats}")));
    }
    let mut groups: Vec<ObjectGroup> = objects
        .iter()
        .map(|(l, c)| ObjectGroup { label: l.to_string(), count: *c, gaussians_per_object: SPLATS_PER_OBJECT, cluster_radius: 0.1 })
        .collect();
    groups.push(ObjectGroup { label: "floor".into(), count: 1, gaussians_per_object: total_splats - used, cluster_radius: 1.5 });
    Ok(SynthSceneSpec { scene_id: scene_id.into(), extent: [4.0, 4.0, 2.5], objects: groups, feature_noise: 0.05, seed })
}

fn encode_known(vocab: &Vocab, text: &str) -> Result<Vec<usize>, ModelError> {
    let ids = vocab.encode(text);
    if ids.is_empty() {
        return Err(SparsifierError::EmptyTask.into());
    }
    Ok(ids)
}

/// Counting questions for every countable label of every scene, one sample
/// per question template. Targets are the count as a digit token.
pub fn count_samples(
    vocab: &Vocab,
    scenes: &[GaussianScene],
    templates: &CountTemplates,
    rules: &ExclusionRules,
) -> Result<Vec<TrainSample>, ModelError> {
    let mut out = Vec::new();
    for (s, scene) in scenes.iter().enumerate() {
        let mut counts = BTreeMap::<&str, u32>::new();
        for label in scene.label_table.values() {
            if !rules.excludes(label) {
                *counts.entry(label.as_str()).or_insert(0) += 1;
            }
        }
        for (label, n) in counts {
            let digit = vocab
                .id(&n.to_string())
                .ok_or_else(|| ModelError::Config(format!("count {n} has no vocabulary token")))?;
            for k in 0..templates.questions.len() {
                let prompt = TaskPrompt::new(encode_known(vocab, &templates.question(k, label))?, None)?;
                out.push(TrainSample { scene: s, prompt, target: vec![digit, EOS] });
            }
        }
    }
    Ok(out)
}

/// One caption sample per countable instance: the prompt points at the
/// instance centroid and the target is its label.
pub fn caption_samples(vocab: &Vocab, scenes: &[GaussianScene], rules: &ExclusionRules) -> Result<Vec<TrainSample>, ModelError> {
    let ids = encode_known(vocab, CAPTION_PROMPT)?;
    let mut out = Vec::new();
    for (s, scene) in scenes.iter().enumerate() {
        for (_, label, center) in scene.instance_centers() {
            if rules.excludes(&label) {
                continue;
            }
            let id = vocab.id(&label).ok_or_else(|| ModelError::Config(format!("label `{label}` not in vocabulary")))?;
            let prompt = TaskPrompt::new(ids.clone(), Some(Location::Point(center)))?;
            out.push(TrainSample { scene: s, prompt, target: vec![id, EOS] });
        }
    }
    Ok(out)
}

/// Located samples for contrastive pretraining. Each countable instance
/// gives its centroid plus `clicks - 1` extra locations at randomly picked
/// splats of the instance, paired with the label's bank index.
pub fn pretrain_samples(
    scenes: &[GaussianScene],
    bank: &LabelBank,
    rules: &ExclusionRules,
    clicks: usize,
    seed: u64,
) -> Result<Vec<PretrainSample>, ModelError> {
    if clicks == 0 {
        return Err(ModelError::Config("clicks per object must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for (s, scene) in scenes.iter().enumerate() {
        let mut members: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for (i, sp) in scene.splats.iter().enumerate() {
            if let Some(id) = sp.instance_id {
                members.entry(id).or_default().push(i);
            }
        }
        for (id, label, center) in scene.instance_centers() {
            if rules.excludes(&label) {
                continue;
            }
            let idx = bank.index_of(&label).ok_or_else(|| ModelError::Config(format!("label `{label}` not in bank")))?;
            out.push(PretrainSample { scene: s, location: center, label: idx });
            let m = &members[&id];
            for _ in 1..clicks {
                let location = scene.position(m[rng.gen_range(0..m.len())]);
                out.push(PretrainSample { scene: s, location, label: idx });
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::synth_scene;
    use crate::text::LABEL_BANK_SEED;

    #[test]
    fn counting_room_has_fixed_size() {
        let bank = LabelBank::builtin(16, LABEL_BANK_SEED).unwrap();
        for n in 1..=5 {
            let spec = counting_room_spec("r", &[("chair", n), ("lamp", 1)], 600, n as u64).unwrap();
            let scene = synth_scene(&spec, &bank).unwrap();
            assert_eq!(scene.len(), 600);
        }
        assert!(counting_room_spec("r", &[("chair", 30)], 600, 0).is_err());
    }

    #[test]
    fn samples_skip_stuff() {
        let bank = LabelBank::builtin(16, LABEL_BANK_SEED).unwrap();
        let scene = synth_scene(&counting_room_spec("r", &[("chair", 3)], 400, 1).unwrap(), &bank).unwrap();
        let v = Vocab::builtin();
        let rules = ExclusionRules::default();
        let scenes = [scene];
        let counts = count_samples(&v, &scenes, &CountTemplates::builtin(), &rules).unwrap();
        assert_eq!(counts.len(), 10);
        assert!(counts.iter().all(|s| s.target == vec![v.id("3").unwrap(), EOS]));
        let caps = caption_samples(&v, &scenes, &rules).unwrap();
        assert_eq!(caps.len(), 3);
        assert_eq!(pretrain_samples(&scenes, &bank, &rules, 1, 0).unwrap().len(), 3);
        assert_eq!(pretrain_samples(&scenes, &bank, &rules, 4, 0).unwrap().len(), 12);
    }
}
