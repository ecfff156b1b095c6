//! Object-counting question generation and the answer metrics.

mod eval;
mod metrics;
mod numbers;
mod qa;

pub use eval::{evaluate_items, evaluate_run, read_jsonl, write_jsonl, ItemScore, MetricReport, Prediction};
pub use metrics::{bleu4, cider, count_accuracy, exact_match, normalize, rouge_l, tokens};
pub use numbers::extract_numbers;
pub use qa::{generate_count_qa, CountQAItem, CountTemplates, ExclusionRules};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("no countable labels left after exclusions")]
    NoCountableLabels,
    #[error("prediction for unknown question id `{0}`")]
    UnknownId(String),
    #[error("duplicate question id `{0}`")]
    DuplicateId(String),
    #[error("empty reference corpus")]
    EmptyCorpus,
    #[error("{0}")]
    Invalid(String),
    #[error("line {line}: {source}")]
    Json { line: usize, source: serde_json::Error },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
