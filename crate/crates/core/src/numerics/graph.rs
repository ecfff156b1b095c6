//! Tape-based reverse-mode differentiation over [`Tensor2D`] values.
//!
//! A [`Graph`] records every operation in evaluation order. Nodes are
//! coarse-grained (a whole multi-head attention is one node) so the tape
//! stays short and each backward rule is written out by hand.

use std::f64::consts::PI;

use super::tensor::{dot, log_sum_exp, matmul_acc, matmul_nt_acc, matmul_tn_acc, softmax_in_place};
use super::{NumericsError, Tensor2D};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Tensor2D, inv_std: Vec<f64> },
    Gelu(Var),
    Attention { q: Var, k: Var, v: Var, heads: usize, causal: bool, probs: Vec<f64> },
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize),
    GatherRows(Var, Vec<usize>),
    MeanRows(Var),
    Sum(Var),
    Fourier { pos: Tensor2D, b: Var },
    NormalizeRows { x: Var, norms: Vec<f64> },
    CrossEntropy { logits: Var, targets: Vec<usize>, probs: Tensor2D },
}

struct Node {
    value: Tensor2D,
    op: Op,
    needs_grad: bool,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor2D>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor2D> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: Vec<(Var, String)>,
}

const LN_EPS: f64 = 1e-5;
const NORM_EPS: f64 = 1e-12;

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor2D, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor2D {
        &self.nodes[v.0].value
    }

    /// Scalar value of a 1×1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data()[0]
    }

    /// A leaf that receives no gradient.
    pub fn constant(&mut self, t: Tensor2D) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// A named trainable leaf.
    pub fn param(&mut self, name: &str, t: Tensor2D) -> Var {
        let v = self.push(t, Op::Leaf, true);
        self.params.push((v, name.to_string()));
        v
    }

    /// Named trainable leaves registered so far.
    pub fn params(&self) -> &[(Var, String)] {
        &self.params
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let value = self.value(a).matmul(self.value(b))?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::MatMul(a, b), ng))
    }

    /// `a · bᵀ`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let value = self.value(a).matmul_nt(self.value(b))?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::MatMulNt(a, b), ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let value = self.value(a).add(self.value(b))?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Add(a, b), ng))
    }

    /// Adds a 1×c row to every row of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var, NumericsError> {
        let (xv, rv) = (self.value(x), self.value(row));
        if rv.rows() != 1 || rv.cols() != xv.cols() {
            return Err(NumericsError::Shape(format!(
                "add_row: {}x{} + {}x{}",
                xv.rows(),
                xv.cols(),
                rv.rows(),
                rv.cols()
            )));
        }
        let mut value = xv.clone();
        let r = rv.data().to_vec();
        for i in 0..value.rows() {
            for (o, b) in value.row_mut(i).iter_mut().zip(&r) {
                *o += b;
            }
        }
        let ng = self.needs(x) || self.needs(row);
        Ok(self.push(value, Op::AddRow(x, row), ng))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let value = self.value(x).scale(s);
        let ng = self.needs(x);
        self.push(value, Op::Scale(x, s), ng)
    }

    /// Row-wise layer normalization with learnable gain and bias (each 1×c).
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var, NumericsError> {
        let xv = self.value(x);
        let (n, c) = xv.shape();
        let (gv, bv) = (self.value(gain), self.value(bias));
        if gv.shape() != (1, c) || bv.shape() != (1, c) {
            return Err(NumericsError::Shape(format!("layer_norm gain/bias must be 1x{c}")));
        }
        let mut xhat = Tensor2D::zeros(n, c);
        let mut out = Tensor2D::zeros(n, c);
        let mut inv_std = Vec::with_capacity(n);
        for r in 0..n {
            let row = xv.row(r);
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let is = 1.0 / (var + LN_EPS).sqrt();
            inv_std.push(is);
            for j in 0..c {
                let h = (row[j] - mean) * is;
                xhat.set(r, j, h);
                out.set(r, j, h * gv.data()[j] + bv.data()[j]);
            }
        }
        let ng = self.needs(x) || self.needs(gain) || self.needs(bias);
        Ok(self.push(out, Op::LayerNorm { x, gain, bias, xhat, inv_std }, ng))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Var {
        let mut value = self.value(x).clone();
        value.data_mut().iter_mut().for_each(|v| *v = gelu(*v));
        let ng = self.needs(x);
        self.push(value, Op::Gelu(x), ng)
    }

    /// Multi-head scaled dot-product attention over already projected
    /// queries (`q`, Tq×d), keys and values (Tk×d). With `causal`, query `i`
    /// sees keys `0..=i` only.
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        causal: bool,
    ) -> Result<Var, NumericsError> {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let (tq, d) = qv.shape();
        let tk = kv.rows();
        if heads == 0 || d % heads != 0 {
            return Err(NumericsError::Shape(format!("width {d} not divisible into {heads} heads")));
        }
        if kv.cols() != d || vv.shape() != (tk, d) {
            return Err(NumericsError::Shape(format!(
                "attention q {}x{}, k {}x{}, v {}x{}",
                tq,
                d,
                kv.rows(),
                kv.cols(),
                vv.rows(),
                vv.cols()
            )));
        }
        if tk == 0 || tq == 0 {
            return Err(NumericsError::EmptyInput);
        }
        if causal && tq != tk {
            return Err(NumericsError::Shape("causal attention requires square scores".into()));
        }
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut probs = vec![0.0; heads * tq * tk];
        let mut out = Tensor2D::zeros(tq, d);
        let (qd, kd, vd) = (qv.data(), kv.data(), vv.data());
        for h in 0..heads {
            let off = h * dh;
            for i in 0..tq {
                let limit = if causal { i + 1 } else { tk };
                let p = &mut probs[(h * tq + i) * tk..(h * tq + i) * tk + limit];
                let qi = &qd[i * d + off..i * d + off + dh];
                for (j, pj) in p.iter_mut().enumerate() {
                    *pj = scale * dot(qi, &kd[j * d + off..j * d + off + dh]);
                }
                softmax_in_place(p);
                let o = &mut out.data_mut()[i * d + off..i * d + off + dh];
                for (j, &pj) in p.iter().enumerate() {
                    let vj = &vd[j * d + off..j * d + off + dh];
                    for (ov, &x) in o.iter_mut().zip(vj) {
                        *ov += pj * x;
                    }
                }
            }
        }
        let ng = self.needs(q) || self.needs(k) || self.needs(v);
        Ok(self.push(out, Op::Attention { q, k, v, heads, causal, probs }, ng))
    }

    /// Attention weights of head `h` recorded by an attention node (Tq×Tk).
    pub fn attention_weights(&self, node: Var, h: usize) -> Option<Tensor2D> {
        if let Op::Attention { q, k, heads, probs, .. } = &self.nodes[node.0].op {
            if h >= *heads {
                return None;
            }
            let (tq, tk) = (self.value(*q).rows(), self.value(*k).rows());
            let slice = probs[h * tq * tk..(h + 1) * tq * tk].to_vec();
            return Tensor2D::from_vec(tq, tk, slice).ok();
        }
        None
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, NumericsError> {
        let tensors: Vec<&Tensor2D> = parts.iter().map(|p| self.value(*p)).collect();
        let value = Tensor2D::concat_rows(&tensors)?;
        let ng = parts.iter().any(|p| self.needs(*p));
        Ok(self.push(value, Op::ConcatRows(parts.to_vec()), ng))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var, NumericsError> {
        let xv = self.value(x);
        if start + len > xv.rows() {
            return Err(NumericsError::Shape(format!(
                "slice {start}..{} of {} rows",
                start + len,
                xv.rows()
            )));
        }
        let value = xv.slice_rows(start, len);
        let ng = self.needs(x);
        Ok(self.push(value, Op::SliceRows(x, start), ng))
    }

    /// Row lookup (embedding gather); indices may repeat.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var, NumericsError> {
        let tv = self.value(table);
        if let Some(&bad) = ids.iter().find(|&&i| i >= tv.rows()) {
            return Err(NumericsError::Shape(format!("row {bad} out of {} rows", tv.rows())));
        }
        let value = tv.select_rows(ids);
        let ng = self.needs(table);
        Ok(self.push(value, Op::GatherRows(table, ids.to_vec()), ng))
    }

    pub fn mean_rows(&mut self, x: Var) -> Var {
        let value = self.value(x).mean_rows();
        let ng = self.needs(x);
        self.push(value, Op::MeanRows(x), ng)
    }

    /// Sum of all entries as a 1×1 node.
    pub fn sum(&mut self, x: Var) -> Var {
        let s: f64 = self.value(x).data().iter().sum();
        let ng = self.needs(x);
        self.push(Tensor2D::filled(1, 1, s), Op::Sum(x), ng)
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let n = self.value(x).data().len().max(1) as f64;
        let s = self.sum(x);
        self.scale(s, 1.0 / n)
    }

    /// `[sin(2π·P·B) ; cos(2π·P·B)]` for constant positions `P` (n×3) and a
    /// frequency matrix `B` (3×h), giving n×2h.
    pub fn fourier(&mut self, positions: &Tensor2D, b: Var) -> Result<Var, NumericsError> {
        let proj = positions.matmul(self.value(b))?;
        let (n, h) = proj.shape();
        let mut out = Tensor2D::zeros(n, 2 * h);
        for r in 0..n {
            for j in 0..h {
                let t = 2.0 * PI * proj.get(r, j);
                out.set(r, j, t.sin());
                out.set(r, h + j, t.cos());
            }
        }
        let ng = self.needs(b);
        Ok(self.push(out, Op::Fourier { pos: positions.clone(), b }, ng))
    }

    /// Scales each row to unit Euclidean length.
    pub fn normalize_rows(&mut self, x: Var) -> Var {
        let mut value = self.value(x).clone();
        let mut norms = Vec::with_capacity(value.rows());
        for r in 0..value.rows() {
            let row = value.row_mut(r);
            let n = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(NORM_EPS);
            row.iter_mut().for_each(|v| *v /= n);
            norms.push(n);
        }
        let ng = self.needs(x);
        self.push(value, Op::NormalizeRows { x, norms }, ng)
    }

    /// Summed softmax cross-entropy of each logit row against its target
    /// index, as a 1×1 node.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var, NumericsError> {
        let lv = self.value(logits);
        if lv.rows() != targets.len() {
            return Err(NumericsError::Shape(format!(
                "{} logit rows for {} targets",
                lv.rows(),
                targets.len()
            )));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= lv.cols()) {
            return Err(NumericsError::Shape(format!(
                "target {bad} outside {} classes",
                lv.cols()
            )));
        }
        let mut probs = lv.clone();
        let mut loss = 0.0;
        for (r, &t) in targets.iter().enumerate() {
            loss += log_sum_exp(lv.row(r)) - lv.get(r, t);
            softmax_in_place(probs.row_mut(r));
        }
        let ng = self.needs(logits);
        Ok(self.push(
            Tensor2D::filled(1, 1, loss),
            Op::CrossEntropy { logits, targets: targets.to_vec(), probs },
            ng,
        ))
    }

    /// Reverse sweep from a 1×1 node.
    pub fn backward(&self, loss: Var) -> Result<Gradients, NumericsError> {
        let lv = self.value(loss);
        if lv.shape() != (1, 1) {
            return Err(NumericsError::Shape("backward needs a scalar node".into()));
        }
        if !lv.data()[0].is_finite() {
            return Err(NumericsError::NonFinite("loss".into()));
        }
        let mut grads: Vec<Option<Tensor2D>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor2D::filled(1, 1, 1.0));
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            self.backprop_node(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn backprop_node(&self, node: &Node, g: &Tensor2D, grads: &mut [Option<Tensor2D>]) {
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.needs(*a) {
                    let mut da = Tensor2D::zeros(av.rows(), av.cols());
                    matmul_nt_acc(g.data(), bv.data(), da.data_mut(), g.rows(), g.cols(), bv.rows());
                    accumulate(grads, *a, da);
                }
                if self.needs(*b) {
                    let mut db = Tensor2D::zeros(bv.rows(), bv.cols());
                    matmul_tn_acc(av.data(), g.data(), db.data_mut(), av.rows(), av.cols(), g.cols());
                    accumulate(grads, *b, db);
                }
            }
            Op::MatMulNt(a, b) => {
                // c = a bᵀ: da = g b, db = gᵀ a
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.needs(*a) {
                    let mut da = Tensor2D::zeros(av.rows(), av.cols());
                    matmul_acc(g.data(), bv.data(), da.data_mut(), g.rows(), g.cols(), bv.cols());
                    accumulate(grads, *a, da);
                }
                if self.needs(*b) {
                    let mut db = Tensor2D::zeros(bv.rows(), bv.cols());
                    matmul_tn_acc(g.data(), av.data(), db.data_mut(), g.rows(), g.cols(), av.cols());
                    accumulate(grads, *b, db);
                }
            }
            Op::Add(a, b) => {
                if self.needs(*a) {
                    accumulate(grads, *a, g.clone());
                }
                if self.needs(*b) {
                    accumulate(grads, *b, g.clone());
                }
            }
            Op::AddRow(x, row) => {
                if self.needs(*x) {
                    accumulate(grads, *x, g.clone());
                }
                if self.needs(*row) {
                    accumulate(grads, *row, g.mean_rows().scale(g.rows() as f64));
                }
            }
            Op::Scale(x, s) => {
                if self.needs(*x) {
                    accumulate(grads, *x, g.scale(*s));
                }
            }
            Op::LayerNorm { x, gain, bias, xhat, inv_std } => {
                let (n, c) = xhat.shape();
                let gv = self.value(*gain).data();
                if self.needs(*gain) || self.needs(*bias) {
                    let mut dg = Tensor2D::zeros(1, c);
                    let mut db = Tensor2D::zeros(1, c);
                    for r in 0..n {
                        for j in 0..c {
                            dg.data_mut()[j] += g.get(r, j) * xhat.get(r, j);
                            db.data_mut()[j] += g.get(r, j);
                        }
                    }
                    if self.needs(*gain) {
                        accumulate(grads, *gain, dg);
                    }
                    if self.needs(*bias) {
                        accumulate(grads, *bias, db);
                    }
                }
                if self.needs(*x) {
                    let mut dx = Tensor2D::zeros(n, c);
                    let cf = c as f64;
                    for r in 0..n {
                        let mut s1 = 0.0;
                        let mut s2 = 0.0;
                        for j in 0..c {
                            let dxh = g.get(r, j) * gv[j];
                            s1 += dxh;
                            s2 += dxh * xhat.get(r, j);
                        }
                        for j in 0..c {
                            let dxh = g.get(r, j) * gv[j];
                            dx.set(r, j, inv_std[r] / cf * (cf * dxh - s1 - xhat.get(r, j) * s2));
                        }
                    }
                    accumulate(grads, *x, dx);
                }
            }
            Op::Gelu(x) => {
                let xv = self.value(*x);
                let mut dx = g.clone();
                for (d, &v) in dx.data_mut().iter_mut().zip(xv.data()) {
                    *d *= gelu_grad(v);
                }
                accumulate(grads, *x, dx);
            }
            Op::Attention { q, k, v, heads, causal, probs } => {
                self.backprop_attention(*q, *k, *v, *heads, *causal, probs, g, grads);
            }
            Op::ConcatRows(parts) => {
                let mut start = 0;
                for p in parts {
                    let rows = self.value(*p).rows();
                    if self.needs(*p) {
                        accumulate(grads, *p, g.slice_rows(start, rows));
                    }
                    start += rows;
                }
            }
            Op::SliceRows(x, start) => {
                let xv = self.value(*x);
                let mut dx = Tensor2D::zeros(xv.rows(), xv.cols());
                let c = xv.cols();
                dx.data_mut()[start * c..start * c + g.data().len()].copy_from_slice(g.data());
                accumulate(grads, *x, dx);
            }
            Op::GatherRows(table, ids) => {
                let tv = self.value(*table);
                let mut dt = Tensor2D::zeros(tv.rows(), tv.cols());
                for (r, &id) in ids.iter().enumerate() {
                    for (o, v) in dt.row_mut(id).iter_mut().zip(g.row(r)) {
                        *o += v;
                    }
                }
                accumulate(grads, *table, dt);
            }
            Op::MeanRows(x) => {
                let xv = self.value(*x);
                let inv = 1.0 / xv.rows() as f64;
                let mut dx = Tensor2D::zeros(xv.rows(), xv.cols());
                for r in 0..xv.rows() {
                    for (o, v) in dx.row_mut(r).iter_mut().zip(g.row(0)) {
                        *o = v * inv;
                    }
                }
                accumulate(grads, *x, dx);
            }
            Op::Sum(x) => {
                let xv = self.value(*x);
                accumulate(grads, *x, Tensor2D::filled(xv.rows(), xv.cols(), g.data()[0]));
            }
            Op::Fourier { pos, b } => {
                let bv = self.value(*b);
                let h = bv.cols();
                let proj = pos.matmul(bv).expect("shape checked in forward");
                let mut dproj = Tensor2D::zeros(pos.rows(), h);
                for r in 0..pos.rows() {
                    for j in 0..h {
                        let t = 2.0 * PI * proj.get(r, j);
                        let d = 2.0 * PI * (g.get(r, j) * t.cos() - g.get(r, h + j) * t.sin());
                        dproj.set(r, j, d);
                    }
                }
                let db = pos.matmul_tn(&dproj).expect("shape checked in forward");
                accumulate(grads, *b, db);
            }
            Op::NormalizeRows { x, norms } => {
                let y = &node.value;
                let mut dx = Tensor2D::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let yg = dot(y.row(r), g.row(r));
                    for j in 0..y.cols() {
                        dx.set(r, j, (g.get(r, j) - y.get(r, j) * yg) / norms[r]);
                    }
                }
                accumulate(grads, *x, dx);
            }
            Op::CrossEntropy { logits, targets, probs } => {
                let s = g.data()[0];
                let mut dl = probs.clone();
                for (r, &t) in targets.iter().enumerate() {
                    let v = dl.get(r, t);
                    dl.set(r, t, v - 1.0);
                }
                accumulate(grads, *logits, dl.scale(s));
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn backprop_attention(
        &self,
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        causal: bool,
        probs: &[f64],
        g: &Tensor2D,
        grads: &mut [Option<Tensor2D>],
    ) {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let (tq, d) = qv.shape();
        let tk = kv.rows();
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut dq = Tensor2D::zeros(tq, d);
        let mut dk = Tensor2D::zeros(tk, d);
        let mut dv = Tensor2D::zeros(tk, d);
        let (qd, kd, vd, gd) = (qv.data(), kv.data(), vv.data(), g.data());
        let mut dp = vec![0.0; tk];
        for h in 0..heads {
            let off = h * dh;
            for i in 0..tq {
                let limit = if causal { i + 1 } else { tk };
                let p = &probs[(h * tq + i) * tk..(h * tq + i) * tk + limit];
                let gi = &gd[i * d + off..i * d + off + dh];
                let mut weighted = 0.0;
                for j in 0..limit {
                    let vj = &vd[j * d + off..j * d + off + dh];
                    dp[j] = dot(gi, vj);
                    weighted += p[j] * dp[j];
                    let dvj = &mut dv.data_mut()[j * d + off..j * d + off + dh];
                    for (o, &x) in dvj.iter_mut().zip(gi) {
                        *o += p[j] * x;
                    }
                }
                let qi = &qd[i * d + off..i * d + off + dh];
                for j in 0..limit {
                    let ds = p[j] * (dp[j] - weighted) * scale;
                    if ds == 0.0 {
                        continue;
                    }
                    let kj = &kd[j * d + off..j * d + off + dh];
                    let dqi = &mut dq.data_mut()[i * d + off..i * d + off + dh];
                    for (o, &x) in dqi.iter_mut().zip(kj) {
                        *o += ds * x;
                    }
                    let dkj = &mut dk.data_mut()[j * d + off..j * d + off + dh];
                    for (o, &x) in dkj.iter_mut().zip(qi) {
                        *o += ds * x;
                    }
                }
            }
        }
        if self.needs(q) {
            accumulate(grads, q, dq);
        }
        if self.needs(k) {
            accumulate(grads, k, dk);
        }
        if self.needs(v) {
            accumulate(grads, v, dv);
        }
    }
}

fn accumulate(grads: &mut [Option<Tensor2D>], v: Var, g: Tensor2D) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

#[inline]
pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

#[inline]
fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lcg_tensor(rows: usize, cols: usize, seed: u64) -> Tensor2D {
        let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        let data = (0..rows * cols)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
            })
            .collect();
        Tensor2D::from_vec(rows, cols, data).unwrap()
    }

    /// Central differences of `build` with respect to every entry of every
    /// input tensor, compared with the tape gradients.
    fn check<F>(inputs: Vec<Tensor2D>, build: F)
    where
        F: Fn(&mut Graph, &[Var]) -> Var,
    {
        let eval = |ins: &[Tensor2D]| {
            let mut g = Graph::new();
            let vars: Vec<Var> =
                ins.iter().enumerate().map(|(i, t)| g.param(&format!("p{i}"), t.clone())).collect();
            let out = build(&mut g, &vars);
            (g, vars, out)
        };
        let (g, vars, out) = eval(&inputs);
        let grads = g.backward(out).unwrap();
        let eps = 1e-5;
        for (idx, v) in vars.iter().enumerate() {
            let analytic = grads.get(*v).cloned().unwrap_or_else(|| {
                Tensor2D::zeros(inputs[idx].rows(), inputs[idx].cols())
            });
            for e in 0..inputs[idx].data().len() {
                let mut plus = inputs.clone();
                plus[idx].data_mut()[e] += eps;
                let mut minus = inputs.clone();
                minus[idx].data_mut()[e] -= eps;
                let (gp, _, op) = eval(&plus);
                let (gm, _, om) = eval(&minus);
                let fd = (gp.scalar(op) - gm.scalar(om)) / (2.0 * eps);
                let ad = analytic.data()[e];
                let rel = (ad - fd).abs() / 1f64.max(ad.abs()).max(fd.abs());
                assert!(rel < 1e-6, "input {idx} entry {e}: ad {ad} fd {fd}");
            }
        }
    }

    #[test]
    fn grad_matmul_and_add() {
        check(vec![lcg_tensor(3, 4, 1), lcg_tensor(4, 2, 2), lcg_tensor(1, 2, 3)], |g, v| {
            let m = g.matmul(v[0], v[1]).unwrap();
            let a = g.add_row(m, v[2]).unwrap();
            let s = g.gelu(a);
            g.sum(s)
        });
    }

    #[test]
    fn grad_matmul_nt_normalize() {
        check(vec![lcg_tensor(3, 4, 4), lcg_tensor(5, 4, 5)], |g, v| {
            let a = g.normalize_rows(v[0]);
            let b = g.normalize_rows(v[1]);
            let m = g.matmul_nt(a, b).unwrap();
            let s = g.scale(m, 3.0);
            g.cross_entropy(s, &[0, 4, 2]).unwrap()
        });
    }

    #[test]
    fn grad_layer_norm() {
        check(vec![lcg_tensor(3, 6, 6), lcg_tensor(1, 6, 7), lcg_tensor(1, 6, 8), lcg_tensor(3, 6, 9)], |g, v| {
            let y = g.layer_norm(v[0], v[1], v[2]).unwrap();
            let w = g.matmul_nt(y, v[3]).unwrap();
            g.sum(w)
        });
    }

    #[test]
    fn grad_attention_cross_and_causal() {
        for causal in [false, true] {
            let tk = if causal { 4 } else { 5 };
            check(
                vec![lcg_tensor(4, 8, 10), lcg_tensor(tk, 8, 11), lcg_tensor(tk, 8, 12), lcg_tensor(4, 8, 13)],
                move |g, v| {
                    let a = g.attention(v[0], v[1], v[2], 2, causal).unwrap();
                    let w = g.matmul_nt(a, v[3]).unwrap();
                    g.sum(w)
                },
            );
        }
    }

    #[test]
    fn grad_structural_ops() {
        let pos = lcg_tensor(5, 3, 14);
        check(vec![lcg_tensor(6, 4, 15), lcg_tensor(3, 2, 16), lcg_tensor(2, 4, 17)], move |g, v| {
            let gathered = g.gather_rows(v[0], &[1, 3, 3, 0]).unwrap();
            let f = g.fourier(&pos, v[1]).unwrap();
            let f2 = g.slice_rows(f, 1, 2).unwrap();
            let c = g.concat_rows(&[gathered, f2, v[2]]).unwrap();
            let m = g.mean_rows(c);
            let cc = g.concat_rows(&[m, c]).unwrap();
            let sq = g.matmul_nt(cc, cc).unwrap();
            g.mean_all(sq)
        });
    }

    #[test]
    fn causal_rows_ignore_future() {
        let mut g = Graph::new();
        let x = lcg_tensor(3, 4, 20);
        let mut y = x.clone();
        y.row_mut(2).iter_mut().for_each(|v| *v += 1.0);
        let a = g.constant(x);
        let b = g.constant(y);
        let oa = g.attention(a, a, a, 2, true).unwrap();
        let ob = g.attention(b, b, b, 2, true).unwrap();
        assert_eq!(g.value(oa).slice_rows(0, 2), g.value(ob).slice_rows(0, 2));
    }
}
