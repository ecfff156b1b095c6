use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::scene::SceneAnnotations;
use crate::text::{plural, STUFF_LABELS};

use super::BenchError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CountQAItem {
    pub scene_id: String,
    pub qid: String,
    pub question: String,
    pub answers: Vec<String>,
    pub label: String,
    pub count: u32,
}

/// Labels never asked about: non-countable surfaces and annotation
/// artifacts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExclusionRules {
    /// Compared case-insensitively against the whole label.
    pub stuff: BTreeSet<String>,
    /// Case-sensitive substrings.
    pub artifacts: Vec<String>,
}

impl Default for ExclusionRules {
    fn default() -> Self {
        Self {
            stuff: STUFF_LABELS.iter().map(|s| s.to_string()).collect(),
            artifacts: vec!["SPLIT".into(), "REMOVE".into()],
        }
    }
}

impl ExclusionRules {
    pub fn excludes(&self, label: &str) -> bool {
        self.stuff.contains(&label.to_lowercase()) || self.artifacts.iter().any(|a| label.contains(a.as_str()))
    }
}

/// Question and answer templates. Questions use `{labels}` (plural);
/// answers use `{n}` and `{noun}` (singular for one, plural otherwise).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CountTemplates {
    pub version: u32,
    pub questions: Vec<String>,
    pub answers: Vec<String>,
}

impl CountTemplates {
    pub fn builtin() -> Self {
        serde_json::from_str(include_str!("../../data/count_templates_v1.json")).expect("bundled templates parse")
    }

    pub fn question(&self, k: usize, label: &str) -> String {
        self.questions[k].replace("{labels}", &plural(label))
    }

    pub fn answers(&self, label: &str, n: u32) -> Vec<String> {
        let noun = if n == 1 { label.to_string() } else { plural(label) };
        self.answers.iter().map(|a| a.replace("{n}", &n.to_string()).replace("{noun}", &noun)).collect()
    }
}

/// Counting questions over the countable labels of every scene. Each
/// (scene, label, question template) triple is one candidate; `n` of them
/// are drawn without replacement (all when fewer exist) and emitted in
/// scene, label and template order.
pub fn generate_count_qa(
    annotations: &[SceneAnnotations],
    n: usize,
    seed: u64,
    rules: &ExclusionRules,
    templates: &CountTemplates,
) -> Result<Vec<CountQAItem>, BenchError> {
    if templates.questions.is_empty() || templates.answers.is_empty() {
        return Err(BenchError::Invalid("templates need at least one question and one answer".into()));
    }
    let mut counts: Vec<(usize, String, u32)> = Vec::new();
    for (s, ann) in annotations.iter().enumerate() {
        let mut per: BTreeMap<&str, u32> = BTreeMap::new();
        for inst in &ann.instances {
            if !rules.excludes(&inst.label) {
                *per.entry(inst.label.as_str()).or_insert(0) += 1;
            }
        }
        counts.extend(per.into_iter().map(|(l, c)| (s, l.to_string(), c)));
    }
    if counts.is_empty() {
        return Err(BenchError::NoCountableLabels);
    }
    let k = templates.questions.len();
    let mut picks: Vec<usize> = (0..counts.len() * k).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let take = n.min(picks.len());
    let (chosen, _) = picks.partial_shuffle(&mut rng, take);
    let mut chosen = chosen.to_vec();
    chosen.sort_unstable();
    Ok(chosen
        .into_iter()
        .enumerate()
        .map(|(i, p)| {
            let (s, label, count) = &counts[p / k];
            CountQAItem {
                scene_id: annotations[*s].scene_id.clone(),
                qid: format!("count-{i:05}"),
                question: templates.question(p % k, label),
                answers: templates.answers(label, *count),
                label: label.clone(),
                count: *count,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::InstanceLabel;

    fn ann(id: &str, labels: &[&str]) -> SceneAnnotations {
        SceneAnnotations {
            scene_id: id.into(),
            instances: labels
                .iter()
                .enumerate()
                .map(|(i, l)| InstanceLabel { id: i as u32 + 1, label: l.to_string() })
                .collect(),
        }
    }

    #[test]
    fn templates_have_ten_questions_and_five_answers() {
        let t = CountTemplates::builtin();
        assert_eq!((t.questions.len(), t.answers.len()), (10, 5));
        assert_eq!(t.question(0, "chair"), "How many chairs are in the scene?");
        assert_eq!(t.answers("chair", 3), vec!["3", "3 chairs", "I can count 3", "there are 3", "3 of them"]);
        assert_eq!(t.answers("chair", 1)[1], "1 chair");
    }

    #[test]
    fn stuff_only_scene_is_an_error() {
        let r = generate_count_qa(&[ann("s", &["wall", "floor"])], 10, 0, &ExclusionRules::default(), &CountTemplates::builtin());
        assert!(matches!(r, Err(BenchError::NoCountableLabels)));
    }

    #[test]
    fn artifacts_are_case_sensitive() {
        let r = ExclusionRules::default();
        assert!(r.excludes("chair SPLIT"));
        assert!(!r.excludes("split pea"));
        assert!(r.excludes("Wall"));
    }

    #[test]
    fn fewer_candidates_than_requested() {
        let items = generate_count_qa(&[ann("s", &["chair", "chair", "wall"])], 1000, 3, &ExclusionRules::default(), &CountTemplates::builtin()).unwrap();
        assert_eq!(items.len(), 10);
        assert!(items.iter().all(|i| i.count == 2 && i.label == "chair"));
    }
}
