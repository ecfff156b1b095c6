use serde::{Deserialize, Serialize};

use crate::numerics::{Graph, ParamStore, Tensor2D};
use crate::text::{BOS, EOS};

use super::{ModelError, ToyDecoder};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenerationConfig {
    pub beams: usize,
    pub top_p: f64,
    pub repetition_penalty: f64,
    pub max_length: usize,
    pub min_length: usize,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self { beams: 5, top_p: 0.9, repetition_penalty: 3.0, max_length: 768, min_length: 1 }
    }
}

impl GenerationConfig {
    pub fn greedy(max_length: usize) -> Self {
        Self { beams: 1, top_p: 1.0, repetition_penalty: 1.0, max_length, min_length: 1 }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.beams == 0 {
            return Err(ModelError::Config("beams must be at least 1".into()));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(ModelError::Config(format!("top_p = {} outside (0, 1]", self.top_p)));
        }
        if !(self.repetition_penalty >= 1.0) {
            return Err(ModelError::Config(format!("repetition_penalty = {} below 1", self.repetition_penalty)));
        }
        if self.max_length < self.min_length {
            return Err(ModelError::Config(format!(
                "max_length {} below min_length {}",
                self.max_length, self.min_length
            )));
        }
        Ok(())
    }
}

/// Anything that scores the next token given the tokens generated so far.
pub trait LogitSource {
    fn next_logits(&self, tokens: &[usize]) -> Result<Vec<f64>, ModelError>;

    /// Most tokens the source can condition on, if bounded.
    fn capacity(&self) -> Option<usize> {
        None
    }
}

/// Divides positive (multiplies negative) logits of already emitted tokens
/// by `penalty`, once per distinct token.
pub fn apply_repetition_penalty(logits: &mut [f64], emitted: &[usize], penalty: f64) {
    let mut seen = vec![false; logits.len()];
    for &t in emitted {
        if t < logits.len() && !seen[t] {
            seen[t] = true;
            let l = &mut logits[t];
            *l = if *l > 0.0 { *l / penalty } else { *l * penalty };
        }
    }
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = logits.iter().map(|l| (l - m).exp()).sum();
    let lz = m + z.ln();
    logits.iter().map(|l| l - lz).collect()
}

/// Smallest set of most probable tokens whose mass reaches `top_p`.
pub fn nucleus(logp: &[f64], top_p: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..logp.len()).filter(|&i| logp[i] > f64::NEG_INFINITY).collect();
    order.sort_by(|&a, &b| logp[b].total_cmp(&logp[a]).then(a.cmp(&b)));
    let mut mass = 0.0;
    let mut keep = Vec::new();
    for i in order {
        keep.push(i);
        mass += logp[i].exp();
        if mass >= top_p {
            break;
        }
    }
    keep
}

#[derive(Debug, Clone)]
struct Hyp {
    tokens: Vec<usize>,
    logp: f64,
    done: bool,
}

impl Hyp {
    /// Log-probability per generated token (the end token counts).
    fn score(&self) -> f64 {
        let len = self.tokens.len() + usize::from(self.done);
        self.logp / len.max(1) as f64
    }
}

/// Beam search with length-normalized scores. Returns generated ids
/// without the end token.
pub fn generate(src: &dyn LogitSource, cfg: &GenerationConfig) -> Result<Vec<usize>, ModelError> {
    cfg.validate()?;
    let max_len = src.capacity().map_or(cfg.max_length, |c| c.min(cfg.max_length));
    let mut live = vec![Hyp { tokens: Vec::new(), logp: 0.0, done: false }];
    let mut finished: Vec<Hyp> = Vec::new();
    while !live.is_empty() && finished.len() < cfg.beams && live[0].tokens.len() < max_len {
        let mut cands: Vec<(f64, usize, usize)> = Vec::new();
        for (h, hyp) in live.iter().enumerate() {
            let mut logits = src.next_logits(&hyp.tokens)?;
            if logits.iter().any(|l| l.is_nan()) {
                return Err(ModelError::NonFinite("generation logits".into()));
            }
            apply_repetition_penalty(&mut logits, &hyp.tokens, cfg.repetition_penalty);
            if hyp.tokens.len() < cfg.min_length && EOS < logits.len() {
                logits[EOS] = f64::NEG_INFINITY;
            }
            let lp = log_softmax(&logits);
            for t in nucleus(&lp, cfg.top_p) {
                cands.push((hyp.logp + lp[t], h, t));
            }
        }
        cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut next = Vec::with_capacity(cfg.beams);
        for (rank, &(logp, h, t)) in cands.iter().enumerate() {
            if next.len() == cfg.beams {
                break;
            }
            if t == EOS {
                if rank < cfg.beams {
                    finished.push(Hyp { tokens: live[h].tokens.clone(), logp, done: true });
                }
                continue;
            }
            let mut tokens = live[h].tokens.clone();
            tokens.push(t);
            next.push(Hyp { tokens, logp, done: false });
        }
        live = next;
    }
    let pool = if finished.is_empty() { &live } else { &finished };
    let best = pool
        .iter()
        .enumerate()
        .max_by(|(i, a), (j, b)| a.score().total_cmp(&b.score()).then(j.cmp(i)))
        .map(|(_, h)| h.tokens.clone())
        .unwrap_or_default();
    Ok(best)
}

/// Next-token logits of a decoder behind a fixed input prefix. The first
/// generated token is predicted from the begin token.
pub struct DecoderSource<'a> {
    pub decoder: &'a ToyDecoder,
    pub store: &'a ParamStore,
    pub prefix: Tensor2D,
}

impl LogitSource for DecoderSource<'_> {
    fn next_logits(&self, tokens: &[usize]) -> Result<Vec<f64>, ModelError> {
        let mut g = Graph::new();
        let d = self.decoder.bind(&mut g, self.store, &|_| false)?;
        let p = g.constant(self.prefix.clone());
        let mut input = Vec::with_capacity(tokens.len() + 1);
        input.push(BOS);
        input.extend_from_slice(tokens);
        let logits = d.forward(&mut g, p, &input)?;
        let v = g.value(logits);
        Ok(v.row(v.rows() - 1).to_vec())
    }

    fn capacity(&self) -> Option<usize> {
        Some(self.decoder.config.max_len.saturating_sub(self.prefix.rows() + 1))
    }
}
