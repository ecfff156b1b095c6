use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{bleu4, cider, count_accuracy, exact_match, rouge_l, BenchError, CountQAItem};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Prediction {
    pub qid: String,
    pub prediction: String,
}

/// Means over the scored items. `cider` carries the metric's usual ×10
/// scaling; the other scores lie in [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricReport {
    pub accuracy: f64,
    pub exact_match: f64,
    pub bleu4: f64,
    pub rouge_l: f64,
    pub cider: f64,
    pub n_items: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemScore {
    pub qid: String,
    pub prediction: String,
    pub count: u32,
    pub accuracy: f64,
    pub exact_match: f64,
    pub bleu4: f64,
    pub rouge_l: f64,
    pub cider: f64,
}

/// Scores every prediction against its question, in question-id order.
pub fn evaluate_items(qa: &[CountQAItem], predictions: &[Prediction]) -> Result<(MetricReport, Vec<ItemScore>), BenchError> {
    let mut by_id: HashMap<&str, &CountQAItem> = HashMap::with_capacity(qa.len());
    for item in qa {
        if by_id.insert(item.qid.as_str(), item).is_some() {
            return Err(BenchError::DuplicateId(item.qid.clone()));
        }
    }
    let mut joined: BTreeMap<&str, (&CountQAItem, &str)> = BTreeMap::new();
    for p in predictions {
        let item = by_id.get(p.qid.as_str()).ok_or_else(|| BenchError::UnknownId(p.qid.clone()))?;
        if joined.insert(p.qid.as_str(), (item, p.prediction.as_str())).is_some() {
            return Err(BenchError::DuplicateId(p.qid.clone()));
        }
    }
    if joined.is_empty() {
        return Err(BenchError::Invalid("no predictions to score".into()));
    }
    let refs: BTreeMap<String, Vec<&str>> =
        joined.iter().map(|(id, (item, _))| (id.to_string(), item.answers.iter().map(String::as_str).collect())).collect();
    let cands: Vec<(String, String)> = joined.iter().map(|(id, (_, p))| (id.to_string(), p.to_string())).collect();
    let ciders = cider(&cands, &refs)?;
    let items: Vec<ItemScore> = joined
        .iter()
        .zip(ciders)
        .map(|((id, (item, pred)), c)| ItemScore {
            qid: id.to_string(),
            prediction: pred.to_string(),
            count: item.count,
            accuracy: count_accuracy(pred, item.count as u64),
            exact_match: exact_match(pred, &item.answers),
            bleu4: bleu4(pred, &item.answers),
            rouge_l: rouge_l(pred, &item.answers),
            cider: c,
        })
        .collect();
    let n = items.len() as f64;
    let mean = |f: fn(&ItemScore) -> f64| items.iter().map(f).sum::<f64>() / n;
    let report = MetricReport {
        accuracy: mean(|i| i.accuracy),
        exact_match: mean(|i| i.exact_match),
        bleu4: mean(|i| i.bleu4),
        rouge_l: mean(|i| i.rouge_l),
        cider: mean(|i| i.cider),
        n_items: items.len(),
    };
    Ok((report, items))
}

pub fn evaluate_run(predictions: &Path, qa: &Path) -> Result<(MetricReport, Vec<ItemScore>), BenchError> {
    let qa: Vec<CountQAItem> = read_jsonl(qa)?;
    let preds: Vec<Prediction> = read_jsonl(predictions)?;
    evaluate_items(&qa, &preds)
}

/// One JSON value per non-blank line.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, BenchError> {
    let f = std::fs::File::open(path)?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|source| BenchError::Json { line: i + 1, source })?);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize, W: Write>(items: &[T], mut w: W) -> Result<(), BenchError> {
    for it in items {
        serde_json::to_writer(&mut w, it).map_err(|source| BenchError::Json { line: 0, source })?;
        w.write_all(b"\n")?;
    }
    Ok(())
}
