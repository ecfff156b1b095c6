use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::numerics::{cosine_lr, AdamW, Graph, NumericsError, ParamStore, Tensor2D, Var};
use crate::sparsifier::{Location, PreparedScene, TaskPrompt, Variant};
use crate::text::{cosine, random_unit, LabelBank};

use super::{contrastive_loss_var, Model, ModelError, DEFAULT_TAU};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    /// Object captions from located prompts.
    #[default]
    Align,
    /// Question answering.
    Instruct,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub stage: Stage,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_max: f64,
    pub lr_min: f64,
    pub weight_decay: f64,
    pub seed: u64,
    /// Contrastive temperature (pretraining only).
    pub tau: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            stage: Stage::Align,
            epochs: 5,
            batch_size: 8,
            lr_max: 1e-4,
            lr_min: 1e-6,
            weight_decay: 0.1,
            seed: 0,
            tau: DEFAULT_TAU,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(ModelError::Config("epochs and batch_size must be positive".into()));
        }
        if !(self.lr_max >= self.lr_min && self.lr_min >= 0.0 && self.lr_max.is_finite()) {
            return Err(ModelError::Config(format!("learning rates {} → {} invalid", self.lr_max, self.lr_min)));
        }
        if !(self.weight_decay >= 0.0) || !(self.tau > 0.0) {
            return Err(ModelError::Config("weight_decay must be non-negative and tau positive".into()));
        }
        Ok(())
    }

    fn steps(&self, n: usize) -> u64 {
        (self.epochs * n.div_ceil(self.batch_size)) as u64
    }
}

/// One prefix-LM example: scene index, prompt and target ids (ending with
/// the end token).
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample {
    pub scene: usize,
    pub prompt: TaskPrompt,
    pub target: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub steps: u64,
    /// Largest gradient norm seen on any frozen tensor.
    pub max_frozen_grad_norm: f64,
}

impl TrainReport {
    pub fn losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.loss).collect()
    }
}

type EpochHook<'a> = &'a mut dyn FnMut(&EpochRecord, &ParamStore) -> bool;

fn log_epoch(metrics: &mut Option<&mut dyn Write>, rec: &EpochRecord) -> Result<(), ModelError> {
    if let Some(w) = metrics.as_mut() {
        serde_json::to_writer(&mut **w, rec)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

fn non_finite(e: ModelError, epoch: usize, step: u64) -> ModelError {
    if e.is_numeric() {
        ModelError::NonFinite(format!("loss at epoch {epoch}, step {step}: {e}"))
    } else {
        e
    }
}

/// Prefix-LM training of the sparsifier, projection and adapters with the
/// decoder base frozen. Writes one `{epoch, loss, lr}` line per epoch to
/// `metrics`; `on_epoch` may stop training early by returning false.
pub fn train_stage(
    model: &Model,
    store: &mut ParamStore,
    scenes: &[PreparedScene],
    data: &[TrainSample],
    cfg: &TrainConfig,
    mut metrics: Option<&mut dyn Write>,
    mut on_epoch: Option<EpochHook<'_>>,
) -> Result<TrainReport, ModelError> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    if let Some(bad) = data.iter().find(|s| s.scene >= scenes.len()) {
        return Err(ModelError::Config(format!("sample refers to scene {} of {}", bad.scene, scenes.len())));
    }
    let trainable = |n: &str| model.is_trainable(n);
    let total = cfg.steps(data.len());
    let mut opt = AdamW::new(cfg.lr_max, cfg.weight_decay)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut report = TrainReport::default();
    let mut step = 0u64;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            opt.lr = cosine_lr(step, total, cfg.lr_max, cfg.lr_min)?;
            store.zero_grads();
            for &i in batch {
                let s = &data[i];
                let mut g = Graph::new();
                let loss = model
                    .loss_var(&mut g, store, &scenes[s.scene], &s.prompt, &s.target, &trainable)
                    .map_err(|e| non_finite(e, epoch, step))?;
                let grads = g.backward(loss).map_err(|e| non_finite(e.into(), epoch, step))?;
                store.accumulate_grads(&g, &grads, 1.0 / batch.len() as f64)?;
                sum += g.scalar(loss);
            }
            report.max_frozen_grad_norm = report.max_frozen_grad_norm.max(store.grad_norm(|n| !trainable(n)));
            opt.step(store, trainable).map_err(|e| non_finite(e.into(), epoch, step))?;
            step += 1;
        }
        let rec = EpochRecord { epoch, loss: sum / data.len() as f64, lr: opt.lr };
        log_epoch(&mut metrics, &rec)?;
        report.epochs.push(rec);
        report.steps = step;
        if let Some(h) = on_epoch.as_mut() {
            if !h(&rec, store) {
                break;
            }
        }
    }
    Ok(report)
}

/// One contrastive example: an object location and its label's index in
/// the label bank.
#[derive(Debug, Clone, PartialEq)]
pub struct PretrainSample {
    pub scene: usize,
    pub location: [f64; 3],
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainReport {
    pub initial: RetrievalEval,
    pub epochs: Vec<EpochRecord>,
}

/// Loss against the whole label bank and top-1 retrieval accuracy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetrievalEval {
    pub loss: f64,
    pub top1: f64,
}

const HEAD: &str = "pre.head";
const ANCHOR: &str = "pre.anchor";

/// Unit vector orthogonal to every label embedding (when the width allows),
/// so a zero head yields equal similarity to all labels.
fn readout_anchor(bank: &LabelBank, seed: u64) -> Tensor2D {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for i in 0..bank.len() {
        let mut v = bank.embeddings().row(i).to_vec();
        for b in &basis {
            let d: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= d * y);
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-9 {
            basis.push(v.into_iter().map(|x| x / n).collect());
        }
    }
    let mut a = random_unit(bank.dim(), &mut rng);
    for b in &basis {
        let d: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        a.iter_mut().zip(b).for_each(|(x, y)| *x -= d * y);
    }
    let n = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let a = if n > 1e-9 { a.into_iter().map(|x| x / n).collect() } else { random_unit(bank.dim(), &mut rng) };
    Tensor2D::row_vector(&a)
}

fn readout_var(model: &Model, g: &mut Graph, store: &ParamStore, scene: &PreparedScene, loc: [f64; 3], trainable: &dyn Fn(&str) -> bool) -> Result<Var, ModelError> {
    let s = model.sparsifier.bind(g, store, trainable)?;
    let tokens = s.encode_location(g, scene, &Location::Point(loc))?;
    let pooled = g.mean_rows(tokens);
    let head = store.bind(g, HEAD, trainable(HEAD))?;
    let anchor = store.bind(g, ANCHOR, false)?;
    let h = g.matmul(pooled, head)?;
    Ok(g.add(h, anchor)?)
}

fn pretrain_trainable(variant: Variant) -> impl Fn(&str) -> bool {
    move |n: &str| {
        n == HEAD
            || n == "sp.seeds"
            || n == "sp.fourier_b"
            || n.starts_with("sp.query_pool.")
            || n.starts_with("sp.block")
            || (variant == Variant::KnnDownsample && n.starts_with("sp.knn"))
    }
}

/// Consecutive chunks of `order`; a trailing chunk without two distinct
/// labels is folded into the one before it.
fn contrastive_batches(order: &[usize], size: usize, label: impl Fn(usize) -> usize) -> Vec<&[usize]> {
    let mut batches: Vec<&[usize]> = order.chunks(size).collect();
    if batches.len() >= 2 {
        let last = batches[batches.len() - 1];
        if last.iter().all(|&i| label(i) == label(last[0])) {
            batches.pop();
            let start = order.len() - last.len() - batches[batches.len() - 1].len();
            *batches.last_mut().expect("two or more") = &order[start..];
        }
    }
    batches
}

/// Contrastive pretraining of the task-guided path: the Fourier-encoded
/// object location is the only task input, the mean output token (through
/// a zero-initialized linear head) is pulled towards the object's label
/// embedding against the other labels of the batch.
pub fn pretrain_sparsifier(
    model: &Model,
    store: &mut ParamStore,
    scenes: &[PreparedScene],
    samples: &[PretrainSample],
    bank: &LabelBank,
    cfg: &TrainConfig,
    mut metrics: Option<&mut dyn Write>,
) -> Result<PretrainReport, ModelError> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    if bank.dim() != model.config.dims.d_f {
        return Err(ModelError::Config(format!("label width {} but d_f = {}", bank.dim(), model.config.dims.d_f)));
    }
    if let Some(bad) = samples.iter().find(|s| s.scene >= scenes.len() || s.label >= bank.len()) {
        return Err(ModelError::Config(format!("sample refers to scene {} / label {}", bad.scene, bad.label)));
    }
    let d = bank.dim();
    if !store.contains(HEAD) {
        store.insert(HEAD, Tensor2D::zeros(d, d));
        store.insert(ANCHOR, readout_anchor(bank, cfg.seed));
    }
    let initial = readout_eval(model, store, scenes, samples, bank, cfg.tau)?;
    let trainable = pretrain_trainable(model.config.variant);
    let total = (cfg.epochs * samples.len().div_ceil(cfg.batch_size)) as u64;
    let mut opt = AdamW::new(cfg.lr_max, cfg.weight_decay)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut epochs = Vec::new();
    let mut step = 0u64;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for batch in contrastive_batches(&order, cfg.batch_size, |i| samples[i].label) {
            opt.lr = cosine_lr(step, total, cfg.lr_max, cfg.lr_min)?;
            store.zero_grads();
            let mut labels: Vec<usize> = batch.iter().map(|&i| samples[i].label).collect();
            labels.sort_unstable();
            labels.dedup();
            if labels.len() < 2 {
                return Err(ModelError::NeedNegatives);
            }
            let mut g = Graph::new();
            let mut outs = Vec::with_capacity(batch.len());
            let mut matches = Vec::with_capacity(batch.len());
            for &i in batch {
                let s = &samples[i];
                outs.push(readout_var(model, &mut g, store, &scenes[s.scene], s.location, &trainable)?);
                matches.push(labels.binary_search(&s.label).expect("label collected above"));
            }
            let out = g.concat_rows(&outs)?;
            let lv = g.constant(bank.embeddings().select_rows(&labels));
            let loss = contrastive_loss_var(&mut g, out, lv, &matches, cfg.tau)?;
            let grads = g.backward(loss).map_err(|e| non_finite(e.into(), epoch, step))?;
            store.accumulate_grads(&g, &grads, 1.0)?;
            sum += g.scalar(loss) * batch.len() as f64;
            opt.step(store, &trainable).map_err(|e| non_finite(e.into(), epoch, step))?;
            step += 1;
        }
        let rec = EpochRecord { epoch, loss: sum / samples.len() as f64, lr: opt.lr };
        log_epoch(&mut metrics, &rec)?;
        epochs.push(rec);
    }
    Ok(PretrainReport { initial, epochs })
}

/// Contrastive loss against every bank label and top-1 retrieval by
/// cosine similarity.
pub fn readout_eval(
    model: &Model,
    store: &ParamStore,
    scenes: &[PreparedScene],
    samples: &[PretrainSample],
    bank: &LabelBank,
    tau: f64,
) -> Result<RetrievalEval, ModelError> {
    if samples.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    if !store.contains(HEAD) {
        return Err(NumericsError::UnknownParam(HEAD.into()).into());
    }
    let mut loss = 0.0;
    let mut hits = 0usize;
    for s in samples {
        let mut g = Graph::new();
        let out = readout_var(model, &mut g, store, &scenes[s.scene], s.location, &|_| false)?;
        let lv = g.constant(bank.embeddings().clone());
        let l = contrastive_loss_var(&mut g, out, lv, &[s.label], tau)?;
        loss += g.scalar(l);
        let v = g.value(out).row(0).to_vec();
        let best = (0..bank.len())
            .map(|j| cosine(&v, bank.embeddings().row(j)))
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)))
            .map(|(j, _)| j);
        hits += usize::from(best == Some(s.label));
    }
    let n = samples.len() as f64;
    Ok(RetrievalEval { loss: loss / n, top1: hits as f64 / n })
}
