use crate::numerics::{Graph, NumericsError, Tensor2D, Var};

use super::ModelError;

pub const DEFAULT_TAU: f64 = 0.07;

/// Summed next-token cross-entropy over target positions `prefix_len..`.
pub fn prefix_lm_loss_var(g: &mut Graph, logits: Var, gt: &[usize], prefix_len: usize) -> Result<Var, ModelError> {
    let (rows, vocab) = g.value(logits).shape();
    check_targets(rows, vocab, gt, prefix_len)?;
    let tail = g.slice_rows(logits, prefix_len, gt.len() - prefix_len)?;
    Ok(g.cross_entropy(tail, &gt[prefix_len..])?)
}

fn check_targets(rows: usize, vocab: usize, gt: &[usize], prefix_len: usize) -> Result<(), ModelError> {
    if rows != gt.len() {
        return Err(NumericsError::Shape(format!("{rows} logit rows for {} targets", gt.len())).into());
    }
    if let Some(&id) = gt.iter().find(|&&i| i >= vocab) {
        return Err(ModelError::TokenOutOfRange { id, vocab });
    }
    if prefix_len >= gt.len() {
        return Err(ModelError::Config(format!("prefix of {prefix_len} leaves no targets among {}", gt.len())));
    }
    Ok(())
}

/// `Σ_{t ≥ prefix_len} −log softmax(logits_t)[gt_t]`
pub fn prefix_lm_loss(logits: &Tensor2D, gt: &[usize], prefix_len: usize) -> Result<f64, ModelError> {
    let mut g = Graph::new();
    let l = g.constant(logits.clone());
    let out = prefix_lm_loss_var(&mut g, l, gt, prefix_len)?;
    Ok(g.scalar(out))
}

/// Mean over rows of `−log softmax(ŝ·L̂ᵀ/τ)[matches]` with rows of both
/// sides normalized.
pub fn contrastive_loss_var(
    g: &mut Graph,
    s: Var,
    labels: Var,
    matches: &[usize],
    tau: f64,
) -> Result<Var, ModelError> {
    let n = g.value(labels).rows();
    if n < 2 {
        return Err(ModelError::NeedNegatives);
    }
    if !(tau > 0.0) {
        return Err(ModelError::Config(format!("temperature {tau} must be positive")));
    }
    let k = g.value(s).rows();
    if matches.len() != k || k == 0 {
        return Err(NumericsError::Shape(format!("{k} outputs for {} matches", matches.len())).into());
    }
    let sn = g.normalize_rows(s);
    let ln = g.normalize_rows(labels);
    let sims = g.matmul_nt(sn, ln)?;
    let logits = g.scale(sims, 1.0 / tau);
    let total = g.cross_entropy(logits, matches)?;
    Ok(g.scale(total, 1.0 / k as f64))
}

pub fn contrastive_loss(s: &Tensor2D, labels: &Tensor2D, matches: &[usize], tau: f64) -> Result<f64, ModelError> {
    let mut g = Graph::new();
    let sv = g.constant(s.clone());
    let lv = g.constant(labels.clone());
    let out = contrastive_loss_var(&mut g, sv, lv, matches, tau)?;
    Ok(g.scalar(out))
}
