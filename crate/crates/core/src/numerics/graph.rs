//! Tape-based reverse-mode differentiation over [`Tensor`]s.
//!
//! Every operation appends a node to the tape; nodes only reference earlier
//! nodes, so a reverse sweep over the tape visits them in a valid order.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::numerics::tensor::{gemm, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

pub const LAYER_NORM_EPS: f32 = 1e-5;
const GELU_C: f32 = 0.797_884_6; // sqrt(2/π)

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    /// `a + b`, where `b` has the same shape as `a` or is a single row.
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f32),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f32>,
        rstd: Vec<f32>,
    },
    Softmax(Var),
    LogSoftmax(Var),
    Gelu(Var),
    Log(Var),
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },
    Gather {
        x: Var,
        idx: Vec<usize>,
    },
    SliceRows {
        x: Var,
        start: usize,
    },
    Sum(Var),
    Mean(Var),
    IclAttention {
        q: Var,
        k: Var,
        v: Var,
        n_ctx: usize,
        heads: usize,
        probs: Vec<f32>,
    },
}

struct Node {
    value: Tensor,
    grad: Option<Vec<f32>>,
    op: Op,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn mismatch(op: &'static str, detail: alloc::string::String) -> Error {
    Error::ShapeMismatch { op, detail }
}

fn matrix(rows: usize, cols: usize, data: Vec<f32>) -> Tensor {
    Tensor::matrix(rows, cols, data).expect("shape computed by the op")
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, grad: None, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> Option<&[f32]> {
        self.nodes[v.0].grad.as_deref()
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        let t = &self.nodes[v.0].value;
        (t.rows(), t.cols())
    }

    fn data(&self, v: Var) -> &[f32] {
        self.nodes[v.0].value.data()
    }

    /// `[m,k]·[k,n] → [m,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let ((m, k), (k2, n)) = (self.dims(a), self.dims(b));
        if k != k2 {
            return Err(mismatch("matmul", format!("[{m},{k}] x [{k2},{n}]")));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.data(a), (k as isize, 1), self.data(b), (n as isize, 1), 0.0, &mut out);
        Ok(self.push(matrix(m, n, out), Op::MatMul(a, b)))
    }

    fn broadcast_check(&self, op: &'static str, a: Var, b: Var) -> Result<(usize, usize)> {
        let ((m, n), (mb, nb)) = (self.dims(a), self.dims(b));
        if nb != n || (mb != m && mb != 1) {
            return Err(mismatch(op, format!("[{m},{n}] with [{mb},{nb}]")));
        }
        Ok((m, n))
    }

    /// Elementwise sum; `b` may be a single row broadcast over `a`'s rows.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, n) = self.broadcast_check("add", a, b)?;
        let (ad, bd) = (self.data(a), self.data(b));
        let bro = self.dims(b).0 == 1;
        let out = (0..m * n).map(|i| ad[i] + bd[if bro { i % n } else { i }]).collect();
        Ok(self.push(matrix(m, n, out), Op::Add(a, b)))
    }

    /// Elementwise product; `b` may be a single row broadcast over `a`'s rows.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, n) = self.broadcast_check("mul", a, b)?;
        let (ad, bd) = (self.data(a), self.data(b));
        let bro = self.dims(b).0 == 1;
        let out = (0..m * n).map(|i| ad[i] * bd[if bro { i % n } else { i }]).collect();
        Ok(self.push(matrix(m, n, out), Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, s: f32) -> Var {
        let (m, n) = self.dims(a);
        let out = self.data(a).iter().map(|x| x * s).collect();
        self.push(matrix(m, n, out), Op::Scale(a, s))
    }

    /// Row-wise layer normalization with affine `gamma`, `beta` of shape `[1,n]`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let (m, n) = self.dims(x);
        if self.dims(gamma) != (1, n) || self.dims(beta) != (1, n) {
            return Err(mismatch("layer_norm", format!("rows of width {n} need [1,{n}] gamma and beta")));
        }
        let (xd, g, b) = (self.data(x), self.data(gamma), self.data(beta));
        let mut xhat = vec![0.0; m * n];
        let mut rstd = vec![0.0; m];
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &xd[i * n..(i + 1) * n];
            let mean = row.iter().map(|&v| f64::from(v)).sum::<f64>() / n as f64;
            let var = row.iter().map(|&v| libm::pow(f64::from(v) - mean, 2.0)).sum::<f64>() / n as f64;
            let r = 1.0 / libm::sqrt(var + f64::from(LAYER_NORM_EPS));
            rstd[i] = r as f32;
            for j in 0..n {
                let h = ((f64::from(row[j]) - mean) * r) as f32;
                xhat[i * n + j] = h;
                out[i * n + j] = h * g[j] + b[j];
            }
        }
        Ok(self.push(matrix(m, n, out), Op::LayerNorm { x, gamma, beta, xhat, rstd }))
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, a: Var) -> Var {
        let (m, n) = self.dims(a);
        let out = row_log_softmax(self.data(a), m, n).into_iter().map(libm::expf).collect();
        self.push(matrix(m, n, out), Op::Softmax(a))
    }

    /// Row-wise log-softmax.
    pub fn log_softmax(&mut self, a: Var) -> Var {
        let (m, n) = self.dims(a);
        let out = row_log_softmax(self.data(a), m, n);
        self.push(matrix(m, n, out), Op::LogSoftmax(a))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        let (m, n) = self.dims(a);
        let out =
            self.data(a).iter().map(|&x| 0.5 * x * (1.0 + libm::tanhf(GELU_C * (x + 0.044_715 * x * x * x)))).collect();
        self.push(matrix(m, n, out), Op::Gelu(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        let (m, n) = self.dims(a);
        let out = self.data(a).iter().map(|&x| libm::logf(x)).collect();
        self.push(matrix(m, n, out), Op::Log(a))
    }

    /// Rows `table[ids[i]]`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (rows, n) = self.dims(table);
        if let Some(&bad) = ids.iter().find(|&&i| i >= rows) {
            return Err(mismatch("embedding", format!("id {bad} out of range for {rows} rows")));
        }
        let td = self.data(table);
        let mut out = Vec::with_capacity(ids.len() * n);
        for &i in ids {
            out.extend_from_slice(&td[i * n..(i + 1) * n]);
        }
        Ok(self.push(matrix(ids.len(), n, out), Op::Embedding { table, ids: ids.to_vec() }))
    }

    /// Column `x[i, idx[i]]` of shape `[m,1]`.
    pub fn gather(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let (m, n) = self.dims(x);
        if idx.len() != m || idx.iter().any(|&j| j >= n) {
            return Err(mismatch("gather", format!("{} indices into [{m},{n}]", idx.len())));
        }
        let xd = self.data(x);
        let out = idx.iter().enumerate().map(|(i, &j)| xd[i * n + j]).collect();
        Ok(self.push(matrix(m, 1, out), Op::Gather { x, idx: idx.to_vec() }))
    }

    /// Rows `start..end`.
    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let (m, n) = self.dims(x);
        if start > end || end > m || start == end {
            return Err(mismatch("slice_rows", format!("rows {start}..{end} of {m}")));
        }
        let out = self.data(x)[start * n..end * n].to_vec();
        Ok(self.push(matrix(end - start, n, out), Op::SliceRows { x, start }))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.data(a).iter().map(|&v| f64::from(v)).sum::<f64>();
        self.push(Tensor::scalar(s as f32), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let d = self.data(a);
        let s = d.iter().map(|&v| f64::from(v)).sum::<f64>() / d.len() as f64;
        self.push(Tensor::scalar(s as f32), Op::Mean(a))
    }

    /// Multi-head scaled dot-product attention for in-context rows.
    ///
    /// Rows `0..n_ctx` attend to all context rows; every later row attends to
    /// the context rows and to itself, never to other later rows.
    pub fn icl_attention(&mut self, q: Var, k: Var, v: Var, n_ctx: usize, heads: usize) -> Result<Var> {
        let (n, e) = self.dims(q);
        if self.dims(k) != (n, e) || self.dims(v) != (n, e) {
            return Err(mismatch("icl_attention", format!("q [{n},{e}], k {:?}, v {:?}", self.dims(k), self.dims(v))));
        }
        if heads == 0 || e % heads != 0 || n_ctx > n {
            return Err(mismatch("icl_attention", format!("{heads} heads, width {e}, {n_ctx} context rows of {n}")));
        }
        let dh = e / heads;
        let scale = 1.0 / libm::sqrtf(dh as f32);
        let slots = n_ctx + 1;
        let (qd, kd, vd) = (self.data(q), self.data(k), self.data(v));
        let mut probs = vec![0.0f32; heads * n * slots];
        let mut out = vec![0.0f32; n * e];
        let mut scores = vec![0.0f32; slots];
        for h in 0..heads {
            let off = h * dh;
            for i in 0..n {
                let qi = &qd[i * e + off..i * e + off + dh];
                let n_keys = if i < n_ctx { n_ctx } else { n_ctx + 1 };
                let mut max = f32::NEG_INFINITY;
                for (s, score) in scores.iter_mut().enumerate().take(n_keys) {
                    let j = if s < n_ctx { s } else { i };
                    let kj = &kd[j * e + off..j * e + off + dh];
                    *score = dot(qi, kj) * scale;
                    max = max.max(*score);
                }
                let mut z = 0.0f32;
                for score in scores.iter_mut().take(n_keys) {
                    *score = libm::expf(*score - max);
                    z += *score;
                }
                let p = &mut probs[(h * n + i) * slots..(h * n + i + 1) * slots];
                let oi = &mut out[i * e + off..i * e + off + dh];
                for s in 0..n_keys {
                    let j = if s < n_ctx { s } else { i };
                    let w = scores[s] / z;
                    p[s] = w;
                    let vj = &vd[j * e + off..j * e + off + dh];
                    for (o, &vv) in oi.iter_mut().zip(vj) {
                        *o += w * vv;
                    }
                }
            }
        }
        Ok(self.push(matrix(n, e, out), Op::IclAttention { q, k, v, n_ctx, heads, probs }))
    }

    /// Reverse sweep from a scalar `loss` with seed 1.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(mismatch("backward", "loss must be a scalar".into()));
        }
        self.backward_with_seed(loss, &[1.0])
    }

    /// Reverse sweep seeding `∂/∂out` with `seed` (same length as `out`).
    pub fn backward_with_seed(&mut self, out: Var, seed: &[f32]) -> Result<()> {
        if seed.len() != self.nodes[out.0].value.len() {
            return Err(mismatch(
                "backward",
                format!("seed of {} for {} values", seed.len(), self.nodes[out.0].value.len()),
            ));
        }
        for node in &mut self.nodes {
            node.grad = None;
        }
        self.nodes[out.0].grad = Some(seed.to_vec());
        for i in (0..=out.0).rev() {
            let Some(g) = self.nodes[i].grad.take() else { continue };
            self.propagate(i, &g);
            self.nodes[i].grad = Some(g);
        }
        Ok(())
    }

    fn grad_buf(&mut self, v: Var) -> &mut Vec<f32> {
        let n = self.nodes[v.0].value.len();
        self.nodes[v.0].grad.get_or_insert_with(|| vec![0.0; n])
    }

    fn accumulate(&mut self, v: Var, contrib: impl Iterator<Item = (usize, f32)>) {
        let buf = self.grad_buf(v);
        for (i, c) in contrib {
            buf[i] += c;
        }
    }

    fn propagate(&mut self, i: usize, g: &[f32]) {
        let (m, n) = (self.nodes[i].value.rows(), self.nodes[i].value.cols());
        // Detach the op so the tape can be borrowed mutably for accumulation.
        let op = core::mem::replace(&mut self.nodes[i].op, Op::Leaf);
        match &op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (a, b) = (*a, *b);
                let k = self.dims(a).1;
                let bd = self.nodes[b.0].value.data().to_vec();
                let ad = self.nodes[a.0].value.data().to_vec();
                // dA += dC·Bᵀ
                gemm(m, n, k, g, (n as isize, 1), &bd, (1, n as isize), 1.0, self.grad_buf(a));
                // dB += Aᵀ·dC
                gemm(k, m, n, &ad, (1, k as isize), g, (n as isize, 1), 1.0, self.grad_buf(b));
            }
            Op::Add(a, b) => {
                let (a, b) = (*a, *b);
                self.accumulate(a, g.iter().copied().enumerate());
                if self.dims(b).0 == 1 && m != 1 {
                    self.accumulate(b, g.iter().enumerate().map(|(idx, &v)| (idx % n, v)));
                } else {
                    self.accumulate(b, g.iter().copied().enumerate());
                }
            }
            Op::Mul(a, b) => {
                let (a, b) = (*a, *b);
                let bro = self.dims(b).0 == 1 && m != 1;
                let ad = self.nodes[a.0].value.data().to_vec();
                let bd = self.nodes[b.0].value.data().to_vec();
                let bidx = |idx: usize| if bro { idx % n } else { idx };
                self.accumulate(a, g.iter().enumerate().map(|(idx, &v)| (idx, v * bd[bidx(idx)])));
                self.accumulate(b, g.iter().enumerate().map(|(idx, &v)| (bidx(idx), v * ad[idx])));
            }
            Op::Scale(a, s) => {
                let s = *s;
                self.accumulate(*a, g.iter().enumerate().map(|(idx, &v)| (idx, v * s)));
            }
            Op::LayerNorm { x, gamma, beta, xhat, rstd } => {
                let gd = self.nodes[gamma.0].value.data().to_vec();
                let mut dgamma = vec![0.0f32; n];
                let mut dbeta = vec![0.0f32; n];
                let mut dx = vec![0.0f32; m * n];
                let mut dxhat = vec![0.0f32; n];
                for r in 0..m {
                    let row = r * n..(r + 1) * n;
                    let (gr, hr) = (&g[row.clone()], &xhat[row.clone()]);
                    let (mut s1, mut s2) = (0.0f64, 0.0f64);
                    for j in 0..n {
                        dgamma[j] += gr[j] * hr[j];
                        dbeta[j] += gr[j];
                        dxhat[j] = gr[j] * gd[j];
                        s1 += f64::from(dxhat[j]);
                        s2 += f64::from(dxhat[j]) * f64::from(hr[j]);
                    }
                    let (m1, m2) = ((s1 / n as f64) as f32, (s2 / n as f64) as f32);
                    for j in 0..n {
                        dx[r * n + j] = rstd[r] * (dxhat[j] - m1 - hr[j] * m2);
                    }
                }
                let (x, gamma, beta) = (*x, *gamma, *beta);
                self.accumulate(x, dx.into_iter().enumerate());
                self.accumulate(gamma, dgamma.into_iter().enumerate());
                self.accumulate(beta, dbeta.into_iter().enumerate());
            }
            Op::Softmax(a) => {
                let y = self.nodes[i].value.data().to_vec();
                let mut dx = vec![0.0f32; m * n];
                for r in 0..m {
                    let row = r * n..(r + 1) * n;
                    let dot_gy: f64 = g[row.clone()].iter().zip(&y[row.clone()]).map(|(&a, &b)| f64::from(a * b)).sum();
                    for j in row {
                        dx[j] = y[j] * (g[j] - dot_gy as f32);
                    }
                }
                self.accumulate(*a, dx.into_iter().enumerate());
            }
            Op::LogSoftmax(a) => {
                let y = self.nodes[i].value.data().to_vec();
                let mut dx = vec![0.0f32; m * n];
                for r in 0..m {
                    let row = r * n..(r + 1) * n;
                    let gsum: f64 = g[row.clone()].iter().map(|&v| f64::from(v)).sum();
                    for j in row {
                        dx[j] = g[j] - libm::expf(y[j]) * gsum as f32;
                    }
                }
                self.accumulate(*a, dx.into_iter().enumerate());
            }
            Op::Gelu(a) => {
                let xd = self.nodes[a.0].value.data().to_vec();
                self.accumulate(
                    *a,
                    g.iter().zip(xd).enumerate().map(|(idx, (&gv, x))| {
                        let th = libm::tanhf(GELU_C * (x + 0.044_715 * x * x * x));
                        let d = 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * GELU_C * (1.0 + 3.0 * 0.044_715 * x * x);
                        (idx, gv * d)
                    }),
                );
            }
            Op::Log(a) => {
                let xd = self.nodes[a.0].value.data().to_vec();
                self.accumulate(*a, g.iter().zip(xd).enumerate().map(|(idx, (&gv, x))| (idx, gv / x)));
            }
            Op::Embedding { table, ids } => {
                let buf = self.grad_buf(*table);
                for (r, &id) in ids.iter().enumerate() {
                    for j in 0..n {
                        buf[id * n + j] += g[r * n + j];
                    }
                }
            }
            Op::Gather { x, idx } => {
                let width = self.dims(*x).1;
                self.accumulate(*x, idx.iter().enumerate().map(|(r, &j)| (r * width + j, g[r])));
            }
            Op::SliceRows { x, start } => {
                let off = start * n;
                self.accumulate(*x, g.iter().enumerate().map(|(idx, &v)| (off + idx, v)));
            }
            Op::Sum(a) => {
                let len = self.nodes[a.0].value.len();
                let g0 = g[0];
                self.accumulate(*a, (0..len).map(|idx| (idx, g0)));
            }
            Op::Mean(a) => {
                let len = self.nodes[a.0].value.len();
                let g0 = g[0] / len as f32;
                self.accumulate(*a, (0..len).map(|idx| (idx, g0)));
            }
            Op::IclAttention { q, k, v, n_ctx, heads, probs } => {
                self.attention_backward(g, *q, *k, *v, *n_ctx, *heads, probs);
            }
        }
        self.nodes[i].op = op;
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_backward(&mut self, g: &[f32], q: Var, k: Var, v: Var, n_ctx: usize, heads: usize, probs: &[f32]) {
        let (n, e) = self.dims(q);
        let dh = e / heads;
        let scale = 1.0 / libm::sqrtf(dh as f32);
        let slots = n_ctx + 1;
        let qd = self.nodes[q.0].value.data().to_vec();
        let kd = self.nodes[k.0].value.data().to_vec();
        let vd = self.nodes[v.0].value.data().to_vec();
        let mut dq = vec![0.0f32; n * e];
        let mut dk = vec![0.0f32; n * e];
        let mut dv = vec![0.0f32; n * e];
        let mut dp = vec![0.0f32; slots];
        for h in 0..heads {
            let off = h * dh;
            for i in 0..n {
                let n_keys = if i < n_ctx { n_ctx } else { n_ctx + 1 };
                let p = &probs[(h * n + i) * slots..(h * n + i + 1) * slots];
                let gi = &g[i * e + off..i * e + off + dh];
                let mut pdp = 0.0f32;
                for s in 0..n_keys {
                    let j = if s < n_ctx { s } else { i };
                    dp[s] = dot(gi, &vd[j * e + off..j * e + off + dh]);
                    pdp += p[s] * dp[s];
                    for (d, &gv) in dv[j * e + off..j * e + off + dh].iter_mut().zip(gi) {
                        *d += p[s] * gv;
                    }
                }
                for s in 0..n_keys {
                    let j = if s < n_ctx { s } else { i };
                    let ds = p[s] * (dp[s] - pdp) * scale;
                    for c in 0..dh {
                        dq[i * e + off + c] += ds * kd[j * e + off + c];
                        dk[j * e + off + c] += ds * qd[i * e + off + c];
                    }
                }
            }
        }
        self.accumulate(q, dq.into_iter().enumerate());
        self.accumulate(k, dk.into_iter().enumerate());
        self.accumulate(v, dv.into_iter().enumerate());
    }
}

#[inline]
fn dot(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn row_log_softmax(x: &[f32], m: usize, n: usize) -> Vec<f32> {
    let mut out = vec![0.0; m * n];
    for r in 0..m {
        let row = &x[r * n..(r + 1) * n];
        let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let lse = f64::from(max) + libm::log(row.iter().map(|&v| libm::exp(f64::from(v - max))).sum::<f64>());
        for j in 0..n {
            out[r * n + j] = (f64::from(row[j]) - lse) as f32;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_matmul_and_sum_gradient() {
        let mut g = Graph::new();
        let eye = g.leaf(Tensor::matrix(3, 3, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]).unwrap());
        let x = g.leaf(Tensor::matrix(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
        let y = g.matmul(eye, x).unwrap();
        assert_eq!(g.value(y).data(), g.value(x).data());
        let s = g.sum(x);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[1.0; 6]);
    }

    #[test]
    fn uniform_softmax() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::full(&[2, 5], 0.3));
        let y = g.softmax(x);
        assert!(g.value(y).data().iter().all(|&p| (p - 0.2).abs() < 1e-7));
    }

    #[test]
    fn shape_errors() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::zeros(&[2, 3]));
        let b = g.leaf(Tensor::zeros(&[2, 3]));
        assert!(matches!(g.matmul(a, b), Err(Error::ShapeMismatch { .. })));
        let c = g.leaf(Tensor::zeros(&[2, 4]));
        assert!(g.add(a, c).is_err());
        assert!(g.gather(a, &[0, 3]).is_err());
        assert!(g.embedding(a, &[2]).is_err());
        assert!(g.slice_rows(a, 1, 3).is_err());
        assert!(g.icl_attention(a, a, a, 1, 2).is_err());
    }

    #[test]
    fn attention_mask_blocks_query_query_links() {
        // Changing one query row must not move another query row's output.
        let mut rng = crate::rng::stream(1, crate::rng::Domain::Init, 0);
        let base = Tensor::randn(&[6, 4], 1.0, &mut rng);
        let mut moved = base.clone();
        for v in &mut moved.data_mut()[5 * 4..] {
            *v += 3.0;
        }
        let run = |t: &Tensor| {
            let mut g = Graph::new();
            let x = g.leaf(t.clone());
            let y = g.icl_attention(x, x, x, 3, 2).unwrap();
            g.value(y).clone()
        };
        let (a, b) = (run(&base), run(&moved));
        assert_eq!(a.data()[..5 * 4], b.data()[..5 * 4]);
    }
}
