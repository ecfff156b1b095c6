//! Cross-attention sparsifier blocks and attention pooling.

use rand::Rng;

use super::graph::{Graph, Var};
use super::params::ParamStore;
use super::{xavier_uniform, NumericsError, Tensor2D};

/// Weights of one cross-attention block: multi-head attention with residual
/// and layer norm, then a 4× GELU feed-forward with residual and layer norm.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionBlockParams {
    pub heads: usize,
    pub wq: Tensor2D,
    pub wk: Tensor2D,
    pub wv: Tensor2D,
    pub wo: Tensor2D,
    pub ffn_w1: Tensor2D,
    pub ffn_b1: Tensor2D,
    pub ffn_w2: Tensor2D,
    pub ffn_b2: Tensor2D,
    pub ln1_gain: Tensor2D,
    pub ln1_bias: Tensor2D,
    pub ln2_gain: Tensor2D,
    pub ln2_bias: Tensor2D,
}

const BLOCK_FIELDS: [&str; 12] = [
    "wq", "wk", "wv", "wo", "ffn_w1", "ffn_b1", "ffn_w2", "ffn_b2", "ln1_g", "ln1_b", "ln2_g", "ln2_b",
];

impl AttentionBlockParams {
    pub fn init<R: Rng + ?Sized>(d: usize, heads: usize, rng: &mut R) -> Result<Self, NumericsError> {
        check_heads(d, heads)?;
        Ok(Self {
            heads,
            wq: xavier_uniform(d, d, rng),
            wk: xavier_uniform(d, d, rng),
            wv: xavier_uniform(d, d, rng),
            wo: xavier_uniform(d, d, rng),
            ffn_w1: xavier_uniform(d, 4 * d, rng),
            ffn_b1: Tensor2D::zeros(1, 4 * d),
            ffn_w2: xavier_uniform(4 * d, d, rng),
            ffn_b2: Tensor2D::zeros(1, d),
            ln1_gain: Tensor2D::filled(1, d, 1.0),
            ln1_bias: Tensor2D::zeros(1, d),
            ln2_gain: Tensor2D::filled(1, d, 1.0),
            ln2_bias: Tensor2D::zeros(1, d),
        })
    }

    pub fn width(&self) -> usize {
        self.wq.rows()
    }

    fn tensors(&self) -> [&Tensor2D; 12] {
        [
            &self.wq,
            &self.wk,
            &self.wv,
            &self.wo,
            &self.ffn_w1,
            &self.ffn_b1,
            &self.ffn_w2,
            &self.ffn_b2,
            &self.ln1_gain,
            &self.ln1_bias,
            &self.ln2_gain,
            &self.ln2_bias,
        ]
    }

    pub fn insert_into(&self, store: &mut ParamStore, prefix: &str) {
        for (field, t) in BLOCK_FIELDS.iter().zip(self.tensors()) {
            store.insert(format!("{prefix}.{field}"), t.clone());
        }
    }

    pub fn from_store(store: &ParamStore, prefix: &str, heads: usize) -> Result<Self, NumericsError> {
        let get = |f: &str| store.value(&format!("{prefix}.{f}")).cloned();
        let p = Self {
            heads,
            wq: get("wq")?,
            wk: get("wk")?,
            wv: get("wv")?,
            wo: get("wo")?,
            ffn_w1: get("ffn_w1")?,
            ffn_b1: get("ffn_b1")?,
            ffn_w2: get("ffn_w2")?,
            ffn_b2: get("ffn_b2")?,
            ln1_gain: get("ln1_g")?,
            ln1_bias: get("ln1_b")?,
            ln2_gain: get("ln2_g")?,
            ln2_bias: get("ln2_b")?,
        };
        check_heads(p.width(), heads)?;
        Ok(p)
    }
}

/// Projection weights of an attention pool (learnable seeds attend over a
/// token set; no feed-forward).
#[derive(Debug, Clone, PartialEq)]
pub struct PoolParams {
    pub heads: usize,
    pub wq: Tensor2D,
    pub wk: Tensor2D,
    pub wv: Tensor2D,
    pub wo: Tensor2D,
}

impl PoolParams {
    pub fn init<R: Rng + ?Sized>(d: usize, heads: usize, rng: &mut R) -> Result<Self, NumericsError> {
        check_heads(d, heads)?;
        Ok(Self {
            heads,
            wq: xavier_uniform(d, d, rng),
            wk: xavier_uniform(d, d, rng),
            wv: xavier_uniform(d, d, rng),
            wo: xavier_uniform(d, d, rng),
        })
    }

    pub fn insert_into(&self, store: &mut ParamStore, prefix: &str) {
        for (field, t) in ["wq", "wk", "wv", "wo"].iter().zip([&self.wq, &self.wk, &self.wv, &self.wo]) {
            store.insert(format!("{prefix}.{field}"), t.clone());
        }
    }

    pub fn from_store(store: &ParamStore, prefix: &str, heads: usize) -> Result<Self, NumericsError> {
        let get = |f: &str| store.value(&format!("{prefix}.{f}")).cloned();
        let p = Self { heads, wq: get("wq")?, wk: get("wk")?, wv: get("wv")?, wo: get("wo")? };
        check_heads(p.wq.rows(), heads)?;
        Ok(p)
    }
}

fn check_heads(d: usize, heads: usize) -> Result<(), NumericsError> {
    if heads == 0 || d % heads != 0 {
        return Err(NumericsError::Shape(format!("width {d} not divisible by {heads} heads")));
    }
    Ok(())
}

/// A cross-attention block bound into a [`Graph`].
#[derive(Debug, Clone, Copy)]
pub struct BlockVars {
    heads: usize,
    vars: [Var; 12],
}

impl BlockVars {
    pub fn bind(
        g: &mut Graph,
        store: &ParamStore,
        prefix: &str,
        heads: usize,
        trainable: bool,
    ) -> Result<Self, NumericsError> {
        let mut vars = Vec::with_capacity(12);
        for f in BLOCK_FIELDS {
            vars.push(store.bind(g, &format!("{prefix}.{f}"), trainable)?);
        }
        Ok(Self { heads, vars: vars.try_into().expect("12 fields") })
    }

    pub fn constants(g: &mut Graph, p: &AttentionBlockParams) -> Self {
        let vars = p.tensors().map(|t| g.constant(t.clone()));
        Self { heads: p.heads, vars }
    }

    /// `LN(x1 + FFN(x1))` with `x1 = LN(q + MHA(q, kv))`.
    pub fn forward(&self, g: &mut Graph, queries: Var, kv: Var) -> Result<Var, NumericsError> {
        let [wq, wk, wv, wo, w1, b1, w2, b2, g1, bb1, g2, bb2] = self.vars;
        let d = g.value(wq).rows();
        if g.value(queries).cols() != d || g.value(kv).cols() != d {
            return Err(NumericsError::Shape(format!(
                "block width {d}, queries width {}, kv width {}",
                g.value(queries).cols(),
                g.value(kv).cols()
            )));
        }
        let q = g.matmul(queries, wq)?;
        let k = g.matmul(kv, wk)?;
        let v = g.matmul(kv, wv)?;
        let a = g.attention(q, k, v, self.heads, false)?;
        let o = g.matmul(a, wo)?;
        let r1 = g.add(queries, o)?;
        let x1 = g.layer_norm(r1, g1, bb1)?;
        let h = g.matmul(x1, w1)?;
        let h = g.add_row(h, b1)?;
        let h = g.gelu(h);
        let f = g.matmul(h, w2)?;
        let f = g.add_row(f, b2)?;
        let r2 = g.add(x1, f)?;
        g.layer_norm(r2, g2, bb2)
    }
}

/// An attention pool bound into a [`Graph`].
#[derive(Debug, Clone, Copy)]
pub struct PoolVars {
    heads: usize,
    wq: Var,
    wk: Var,
    wv: Var,
    wo: Var,
}

impl PoolVars {
    pub fn bind(
        g: &mut Graph,
        store: &ParamStore,
        prefix: &str,
        heads: usize,
        trainable: bool,
    ) -> Result<Self, NumericsError> {
        Ok(Self {
            heads,
            wq: store.bind(g, &format!("{prefix}.wq"), trainable)?,
            wk: store.bind(g, &format!("{prefix}.wk"), trainable)?,
            wv: store.bind(g, &format!("{prefix}.wv"), trainable)?,
            wo: store.bind(g, &format!("{prefix}.wo"), trainable)?,
        })
    }

    pub fn constants(g: &mut Graph, p: &PoolParams) -> Self {
        Self {
            heads: p.heads,
            wq: g.constant(p.wq.clone()),
            wk: g.constant(p.wk.clone()),
            wv: g.constant(p.wv.clone()),
            wo: g.constant(p.wo.clone()),
        }
    }

    /// `MHA(seeds·Wq, tokens·Wk, tokens·Wv)·Wo`
    pub fn forward(&self, g: &mut Graph, seeds: Var, tokens: Var) -> Result<Var, NumericsError> {
        if g.value(tokens).rows() == 0 {
            return Err(NumericsError::NothingToPool);
        }
        let q = g.matmul(seeds, self.wq)?;
        let k = g.matmul(tokens, self.wk)?;
        let v = g.matmul(tokens, self.wv)?;
        let a = g.attention(q, k, v, self.heads, false)?;
        g.matmul(a, self.wo)
    }
}

pub fn cross_attention_block(
    queries: &Tensor2D,
    kv: &Tensor2D,
    params: &AttentionBlockParams,
) -> Result<Tensor2D, NumericsError> {
    if queries.rows() == 0 || kv.rows() == 0 {
        return Err(NumericsError::EmptyInput);
    }
    let mut g = Graph::new();
    let b = BlockVars::constants(&mut g, params);
    let q = g.constant(queries.clone());
    let kv = g.constant(kv.clone());
    let out = b.forward(&mut g, q, kv)?;
    Ok(g.value(out).clone())
}

pub fn attention_pool(
    seeds: &Tensor2D,
    tokens: &Tensor2D,
    params: &PoolParams,
) -> Result<Tensor2D, NumericsError> {
    if tokens.rows() == 0 {
        return Err(NumericsError::NothingToPool);
    }
    if seeds.rows() == 0 {
        return Err(NumericsError::EmptyInput);
    }
    let mut g = Graph::new();
    let p = PoolVars::constants(&mut g, params);
    let s = g.constant(seeds.clone());
    let t = g.constant(tokens.clone());
    let out = p.forward(&mut g, s, t)?;
    Ok(g.value(out).clone())
}
