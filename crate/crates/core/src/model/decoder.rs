//! Pre-LN causal decoder with low-rank adapters on its attention
//! projections.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::numerics::{xavier_uniform, Graph, NumericsError, ParamStore, Tensor2D, Var};

use super::ModelError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToyDecoderConfig {
    #[serde(default = "default_layers")]
    pub layers: usize,
    #[serde(default = "default_width")]
    pub d_lm: usize,
    #[serde(default = "default_heads")]
    pub heads: usize,
    pub vocab: usize,
    #[serde(default = "default_max_len")]
    pub max_len: usize,
}

fn default_layers() -> usize {
    2
}
fn default_width() -> usize {
    64
}
fn default_heads() -> usize {
    4
}
fn default_max_len() -> usize {
    1024
}

impl ToyDecoderConfig {
    pub fn new(vocab: usize) -> Self {
        Self { layers: default_layers(), d_lm: default_width(), heads: default_heads(), vocab, max_len: default_max_len() }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.layers == 0 || self.d_lm == 0 || self.max_len == 0 {
            return Err(ModelError::Config("decoder layers, width and max length must be positive".into()));
        }
        if self.heads == 0 || self.d_lm % self.heads != 0 {
            return Err(ModelError::Config(format!("d_lm = {} not divisible by {} heads", self.d_lm, self.heads)));
        }
        if self.vocab < 2 {
            return Err(ModelError::Config(format!("vocabulary of {} tokens; need at least 2", self.vocab)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoraConfig {
    pub rank: usize,
    pub alpha: f64,
}

impl Default for LoraConfig {
    fn default() -> Self {
        Self { rank: 8, alpha: 16.0 }
    }
}

impl LoraConfig {
    pub fn scaling(&self) -> f64 {
        self.alpha / self.rank as f64
    }
}

/// Low-rank update `(α/r)·A·B` of one square projection.
#[derive(Debug, Clone, PartialEq)]
pub struct LoraAdapter {
    /// d × r
    pub a: Tensor2D,
    /// r × d
    pub b: Tensor2D,
    pub alpha: f64,
}

impl LoraAdapter {
    /// Xavier-initialized `A`, zero `B`.
    pub fn init<R: Rng + ?Sized>(d: usize, cfg: LoraConfig, rng: &mut R) -> Self {
        Self { a: xavier_uniform(d, cfg.rank, rng), b: Tensor2D::zeros(cfg.rank, d), alpha: cfg.alpha }
    }

    pub fn rank(&self) -> usize {
        self.a.cols()
    }
}

/// `W + (α/r)·A·B`; `W` is left untouched.
pub fn lora_apply(w: &Tensor2D, adapter: &LoraAdapter) -> Result<Tensor2D, ModelError> {
    let r = adapter.rank();
    if r == 0 || adapter.b.rows() != r {
        return Err(ModelError::Config(format!("adapter rank mismatch: A is {:?}, B is {:?}", adapter.a.shape(), adapter.b.shape())));
    }
    if adapter.a.rows() != w.rows() || adapter.b.cols() != w.cols() {
        return Err(NumericsError::Shape(format!("adapter {:?}·{:?} against weight {:?}", adapter.a.shape(), adapter.b.shape(), w.shape())).into());
    }
    let delta = adapter.a.matmul(&adapter.b)?.scale(adapter.alpha / r as f64);
    Ok(w.add(&delta)?)
}

const PROJ: [&str; 4] = ["wq", "wk", "wv", "wo"];

fn layer(l: usize) -> String {
    format!("dec.l{l}")
}

/// Parameter layout of the decoder (`dec.`) and its adapters (`lora.`).
#[derive(Debug, Clone, PartialEq)]
pub struct ToyDecoder {
    pub config: ToyDecoderConfig,
    pub lora: Option<LoraConfig>,
}

impl ToyDecoder {
    pub fn init<R: Rng + ?Sized>(
        config: ToyDecoderConfig,
        lora: Option<LoraConfig>,
        store: &mut ParamStore,
        rng: &mut R,
    ) -> Result<Self, ModelError> {
        config.validate()?;
        if let Some(c) = lora {
            if c.rank == 0 {
                return Err(ModelError::Config("LoRA rank must be at least 1".into()));
            }
        }
        let d = config.d_lm;
        let emb = Normal::new(0.0, 1.0 / (d as f64).sqrt()).expect("finite sigma");
        let mut normal = |r: usize, c: usize| {
            Tensor2D::from_vec(r, c, (0..r * c).map(|_| emb.sample(rng)).collect()).expect("length matches")
        };
        let tok_emb = normal(config.vocab, d);
        // Head starts tied to the embeddings so the frozen base can express
        // confident next-token distributions.
        let head = tok_emb.transpose();
        store.insert("dec.tok_emb", tok_emb);
        store.insert("dec.pos_emb", normal(config.max_len, d));
        for l in 0..config.layers {
            let p = layer(l);
            for w in PROJ {
                store.insert(format!("{p}.{w}"), xavier_uniform(d, d, rng));
            }
            for ln in ["ln1", "ln2"] {
                store.insert(format!("{p}.{ln}_g"), Tensor2D::filled(1, d, 1.0));
                store.insert(format!("{p}.{ln}_b"), Tensor2D::zeros(1, d));
            }
            store.insert(format!("{p}.ffn_w1"), xavier_uniform(d, 4 * d, rng));
            store.insert(format!("{p}.ffn_b1"), Tensor2D::zeros(1, 4 * d));
            store.insert(format!("{p}.ffn_w2"), xavier_uniform(4 * d, d, rng));
            store.insert(format!("{p}.ffn_b2"), Tensor2D::zeros(1, d));
            if let Some(c) = lora {
                for w in PROJ {
                    let a = LoraAdapter::init(d, c, rng);
                    store.insert(format!("lora.l{l}.{w}.a"), a.a);
                    store.insert(format!("lora.l{l}.{w}.b"), a.b);
                }
            }
        }
        store.insert("dec.lnf_g", Tensor2D::filled(1, d, 1.0));
        store.insert("dec.lnf_b", Tensor2D::zeros(1, d));
        store.insert("dec.head", head);
        Ok(Self { config, lora })
    }

    pub fn is_lora(name: &str) -> bool {
        name.starts_with("lora.")
    }

    pub fn is_base(name: &str) -> bool {
        name.starts_with("dec.")
    }

    pub fn adapter(&self, store: &ParamStore, l: usize, proj: &str) -> Result<Option<LoraAdapter>, ModelError> {
        let Some(c) = self.lora else { return Ok(None) };
        Ok(Some(LoraAdapter {
            a: store.value(&format!("lora.l{l}.{proj}.a"))?.clone(),
            b: store.value(&format!("lora.l{l}.{proj}.b"))?.clone(),
            alpha: c.alpha,
        }))
    }

    pub fn bind(&self, g: &mut Graph, store: &ParamStore, trainable: &dyn Fn(&str) -> bool) -> Result<BoundDecoder, ModelError> {
        let b = |g: &mut Graph, n: &str| store.bind(g, n, trainable(n));
        let mut layers = Vec::with_capacity(self.config.layers);
        for l in 0..self.config.layers {
            let p = layer(l);
            let mut proj = [None; 4];
            for (slot, w) in proj.iter_mut().zip(PROJ) {
                let base = b(g, &format!("{p}.{w}"))?;
                *slot = Some(match self.lora {
                    Some(c) => {
                        let a = b(g, &format!("lora.l{l}.{w}.a"))?;
                        let bb = b(g, &format!("lora.l{l}.{w}.b"))?;
                        let ab = g.matmul(a, bb)?;
                        let ab = g.scale(ab, c.scaling());
                        g.add(base, ab)?
                    }
                    None => base,
                });
            }
            let [wq, wk, wv, wo] = proj.map(|v| v.expect("filled above"));
            layers.push(LayerVars {
                wq,
                wk,
                wv,
                wo,
                ln1: (b(g, &format!("{p}.ln1_g"))?, b(g, &format!("{p}.ln1_b"))?),
                ln2: (b(g, &format!("{p}.ln2_g"))?, b(g, &format!("{p}.ln2_b"))?),
                w1: b(g, &format!("{p}.ffn_w1"))?,
                b1: b(g, &format!("{p}.ffn_b1"))?,
                w2: b(g, &format!("{p}.ffn_w2"))?,
                b2: b(g, &format!("{p}.ffn_b2"))?,
            });
        }
        Ok(BoundDecoder {
            config: self.config.clone(),
            tok_emb: b(g, "dec.tok_emb")?,
            pos_emb: b(g, "dec.pos_emb")?,
            layers,
            lnf: (b(g, "dec.lnf_g")?, b(g, "dec.lnf_b")?),
            head: b(g, "dec.head")?,
        })
    }
}

#[derive(Debug, Clone, Copy)]
struct LayerVars {
    wq: Var,
    wk: Var,
    wv: Var,
    wo: Var,
    ln1: (Var, Var),
    ln2: (Var, Var),
    w1: Var,
    b1: Var,
    w2: Var,
    b2: Var,
}

/// A [`ToyDecoder`] bound into one [`Graph`], adapters already merged.
#[derive(Debug, Clone)]
pub struct BoundDecoder {
    config: ToyDecoderConfig,
    tok_emb: Var,
    pos_emb: Var,
    layers: Vec<LayerVars>,
    lnf: (Var, Var),
    head: Var,
}

impl BoundDecoder {
    /// Token embeddings of `ids`.
    pub fn embed(&self, g: &mut Graph, ids: &[usize]) -> Result<Var, ModelError> {
        if let Some(&id) = ids.iter().find(|&&i| i >= self.config.vocab) {
            return Err(ModelError::TokenOutOfRange { id, vocab: self.config.vocab });
        }
        Ok(g.gather_rows(self.tok_emb, ids)?)
    }

    /// Logits for every position after the prefix: row `t` scores the token
    /// following `gt_in[t]` and sees only the prefix and `gt_in[..=t]`.
    pub fn forward(&self, g: &mut Graph, prefix: Var, gt_in: &[usize]) -> Result<Var, ModelError> {
        let p = g.value(prefix).rows();
        let total = p + gt_in.len();
        if total > self.config.max_len {
            return Err(ModelError::Overlength { len: total, max: self.config.max_len });
        }
        if gt_in.is_empty() {
            return Err(NumericsError::EmptyInput.into());
        }
        let emb = self.embed(g, gt_in)?;
        let x = g.concat_rows(&[prefix, emb])?;
        let positions: Vec<usize> = (0..total).collect();
        let pos = g.gather_rows(self.pos_emb, &positions)?;
        let mut x = g.add(x, pos)?;
        for l in &self.layers {
            let h = g.layer_norm(x, l.ln1.0, l.ln1.1)?;
            let q = g.matmul(h, l.wq)?;
            let k = g.matmul(h, l.wk)?;
            let v = g.matmul(h, l.wv)?;
            let a = g.attention(q, k, v, self.config.heads, true)?;
            let o = g.matmul(a, l.wo)?;
            x = g.add(x, o)?;
            let h = g.layer_norm(x, l.ln2.0, l.ln2.1)?;
            let f = g.matmul(h, l.w1)?;
            let f = g.add_row(f, l.b1)?;
            let f = g.gelu(f);
            let f = g.matmul(f, l.w2)?;
            let f = g.add_row(f, l.b2)?;
            x = g.add(x, f)?;
        }
        let x = g.layer_norm(x, self.lnf.0, self.lnf.1)?;
        let tail = g.slice_rows(x, p, gt_in.len())?;
        Ok(g.matmul(tail, self.head)?)
    }
}

/// Logits (`|gt_in|` × V) for a prefix of input embeddings followed by the
/// tokens `gt_in`.
pub fn decoder_forward(
    decoder: &ToyDecoder,
    store: &ParamStore,
    prefix: &Tensor2D,
    gt_in: &[usize],
) -> Result<Tensor2D, ModelError> {
    let mut g = Graph::new();
    let d = decoder.bind(&mut g, store, &|_| false)?;
    let p = g.constant(prefix.clone());
    let out = d.forward(&mut g, p, gt_in)?;
    Ok(g.value(out).clone())
}
