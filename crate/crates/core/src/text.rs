//! Word-level vocabulary and the label lexicon shared by the scene
//! generator, the task tokenizer and the decoder.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::numerics::Tensor2D;

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
/// Seed of the built-in label embeddings shared by scene synthesis and the
/// task embedding table.
pub const LABEL_BANK_SEED: u64 = 2024;
const SPECIALS: [&str; 4] = ["<pad>", "<bos>", "<eos>", "<unk>"];

/// Countable single-word object labels used by the synthetic generator.
pub const OBJECT_LABELS: [&str; 30] = [
    "chair", "table", "lamp", "sofa", "bed", "desk", "monitor", "book", "plant", "pillow", "cabinet",
    "shelf", "bottle", "cup", "towel", "box", "bag", "shoe", "clock", "picture", "keyboard",
    "backpack", "basket", "stool", "mirror", "sink", "toilet", "curtain", "printer", "microwave",
];

/// Non-countable surface labels.
pub const STUFF_LABELS: [&str; 4] = ["wall", "floor", "ceiling", "windowsill"];

const NUMBER_WORDS: [&str; 21] = [
    "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten", "eleven",
    "twelve", "thirteen", "fourteen", "fifteen", "sixteen", "seventeen", "eighteen", "nineteen",
    "twenty",
];

const FUNCTION_WORDS: &str = "how many are in the scene there room what is number of count this can you see \
    does contain tell me present i a an them it here at location object describe which thing";

#[derive(Debug, Error)]
pub enum TextError {
    #[error("could not place {label:?}: no candidate below cosine {max_cos} after {attempts} draws")]
    Crowded { label: String, max_cos: f64, attempts: usize },
    #[error("label `{0}` is not in the lexicon")]
    UnknownLabel(String),
}

/// English plural used in questions and answers.
pub fn plural(word: &str) -> String {
    if word.ends_with('s') || word.ends_with('x') || word.ends_with("ch") || word.ends_with("sh") {
        format!("{word}es")
    } else if word.ends_with('f') {
        format!("{}ves", &word[..word.len() - 1])
    } else if word.ends_with('y') && !word.ends_with("ay") && !word.ends_with("ey") {
        format!("{}ies", &word[..word.len() - 1])
    } else {
        format!("{word}s")
    }
}

/// Lowercased alphabetic and digit runs; everything else separates words.
pub fn words(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut cur_digit = false;
    for ch in text.chars().flat_map(char::to_lowercase) {
        let is_digit = ch.is_ascii_digit();
        if ch.is_alphanumeric() {
            if !cur.is_empty() && cur_digit != is_digit {
                out.push(std::mem::take(&mut cur));
            }
            cur_digit = is_digit;
            cur.push(ch);
        } else if !cur.is_empty() {
            out.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    /// Special tokens followed by `words` in first-seen order.
    pub fn from_words<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut v = Self { tokens: Vec::new(), index: HashMap::new() };
        for w in SPECIALS {
            v.push(w);
        }
        for w in words {
            v.push(w.as_ref());
        }
        v
    }

    fn push(&mut self, w: &str) {
        if !self.index.contains_key(w) {
            self.index.insert(w.to_string(), self.tokens.len());
            self.tokens.push(w.to_string());
        }
    }

    /// The fixed vocabulary: digits 0–50, number words, function words and
    /// every lexicon label with its plural.
    pub fn builtin() -> Self {
        let mut w: Vec<String> = (0..=50).map(|i| i.to_string()).collect();
        w.extend(NUMBER_WORDS.iter().map(|s| s.to_string()));
        w.extend(FUNCTION_WORDS.split_whitespace().map(str::to_string));
        for l in OBJECT_LABELS.iter().chain(&STUFF_LABELS) {
            w.push(l.to_string());
            w.push(plural(l));
        }
        Self::from_words(w)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode(&self, text: &str) -> Vec<usize> {
        words(text).iter().map(|w| self.id(w).unwrap_or(UNK)).collect()
    }

    /// Joins non-special tokens with single spaces.
    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter()
            .filter(|&&i| i >= SPECIALS.len())
            .filter_map(|&i| self.token(i))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Unit embeddings for labels with bounded pairwise cosine similarity.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelBank {
    labels: Vec<String>,
    embeddings: Tensor2D,
}

impl LabelBank {
    /// Draws one Gaussian direction per label, redrawing any candidate whose
    /// cosine with an already placed label reaches `max_cos`.
    pub fn generate<S: AsRef<str>>(labels: &[S], dim: usize, seed: u64, max_cos: f64) -> Result<Self, TextError> {
        const ATTEMPTS: usize = 10_000;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows: Vec<Vec<f64>> = Vec::with_capacity(labels.len());
        for label in labels {
            let mut placed = false;
            for _ in 0..ATTEMPTS {
                let cand = random_unit(dim, &mut rng);
                if rows.iter().all(|r| cosine(r, &cand) < max_cos) {
                    rows.push(cand);
                    placed = true;
                    break;
                }
            }
            if !placed {
                return Err(TextError::Crowded { label: label.as_ref().to_string(), max_cos, attempts: ATTEMPTS });
            }
        }
        Ok(Self {
            labels: labels.iter().map(|l| l.as_ref().to_string()).collect(),
            embeddings: Tensor2D::from_rows(&rows).unwrap_or_else(|_| Tensor2D::zeros(0, dim)),
        })
    }

    /// Every object and stuff label of the built-in lexicon.
    pub fn builtin(dim: usize, seed: u64) -> Result<Self, TextError> {
        let labels: Vec<&str> = OBJECT_LABELS.iter().chain(&STUFF_LABELS).copied().collect();
        Self::generate(&labels, dim, seed, 0.3)
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.embeddings.cols()
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn embedding(&self, label: &str) -> Result<&[f64], TextError> {
        self.index_of(label)
            .map(|i| self.embeddings.row(i))
            .ok_or_else(|| TextError::UnknownLabel(label.to_string()))
    }

    pub fn embeddings(&self) -> &Tensor2D {
        &self.embeddings
    }

    /// Rows for the given labels, in order.
    pub fn subset(&self, labels: &[&str]) -> Result<Tensor2D, TextError> {
        let mut idx = Vec::with_capacity(labels.len());
        for l in labels {
            idx.push(self.index_of(l).ok_or_else(|| TextError::UnknownLabel(l.to_string()))?);
        }
        Ok(self.embeddings.select_rows(&idx))
    }

    pub fn max_pairwise_cosine(&self) -> f64 {
        let mut m = f64::NEG_INFINITY;
        for i in 0..self.len() {
            for j in i + 1..self.len() {
                m = m.max(cosine(self.embeddings.row(i), self.embeddings.row(j)));
            }
        }
        m
    }
}

pub(crate) fn random_unit<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-9 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

pub(crate) fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn word_splitting() {
        assert_eq!(words("How many Chairs? 3chairs, twenty-one"), vec!["how", "many", "chairs", "3", "chairs", "twenty", "one"]);
    }

    #[test]
    fn plurals() {
        assert_eq!(plural("chair"), "chairs");
        assert_eq!(plural("box"), "boxes");
        assert_eq!(plural("shelf"), "shelves");
        assert_eq!(plural("bench"), "benches");
    }

    #[test]
    fn vocab_round_trip() {
        let v = Vocab::builtin();
        let ids = v.encode("How many chairs are in the scene?");
        assert!(!ids.contains(&UNK));
        assert_eq!(v.decode(&ids), "how many chairs are in the scene");
        assert_eq!(v.encode("zebra"), vec![UNK]);
        assert_eq!(v.id("<eos>"), Some(EOS));
    }

    #[test]
    fn label_bank_is_spread_out() {
        let bank = LabelBank::builtin(32, 5).unwrap();
        assert!(bank.max_pairwise_cosine() < 0.3);
        for i in 0..bank.len() {
            let n: f64 = bank.embeddings().row(i).iter().map(|x| x * x).sum();
            assert!((n - 1.0).abs() < 1e-12);
        }
        assert_eq!(bank, LabelBank::builtin(32, 5).unwrap());
    }
}
