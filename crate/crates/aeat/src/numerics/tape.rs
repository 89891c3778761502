//! Reverse-mode automatic differentiation over dense 2-D f64 arrays.
//!
//! A [`Tape`] records every forward operation; [`Tape::backward`] walks the
//! record in reverse and accumulates parameter gradients into a [`GradStore`].
//! The operator set is exactly what the transformer autoencoder and the
//! Q-network need; there is no broadcasting beyond row vectors.
//!
//! Tensors are immutable once created within a forward pass. A tape is
//! single-threaded; independent tapes may run in parallel over a shared
//! read-only [`ParamStore`].

use super::store::{GradStore, ParamStore};
use crate::error::{Error, Result};

/// Handle to a node on the tape; carries its shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    id: u32,
    pub rows: u32,
    pub cols: u32,
}

impl Var {
    pub fn len(&self) -> usize {
        self.rows as usize * self.cols as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

enum Payload {
    Owned(Vec<f64>),
    Param(usize),
}

enum Op {
    Leaf,
    /// C = A . B
    MatMul(u32, u32),
    /// C = A . B^T
    MatMulNt(u32, u32),
    Add(u32, u32),
    Sub(u32, u32),
    Mul(u32, u32),
    /// Broadcast-add a 1 x n row vector to every row.
    AddRow(u32, u32),
    Scale(u32, f64),
    Relu(u32),
    Sigmoid(u32),
    RowSoftmax(u32, f64),
    LayerNorm {
        x: u32,
        gain: u32,
        bias: u32,
        eps: f64,
    },
    ConcatCols(Vec<u32>),
    SliceCols(u32, usize, usize),
    Reshape(u32),
    RowSum(u32),
    MeanAll(u32),
    Square(u32),
    /// Mean binary cross entropy; predictions clamped to [1e-7, 1-1e-7].
    BceMean(u32, u32),
}

struct Node {
    rows: usize,
    cols: usize,
    payload: Payload,
    op: Op,
}

/// The recording tape. Holds a read-only borrow of the parameter store so
/// parameter leaves are views, not copies.
pub struct Tape<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_nodes: Vec<(usize, u32)>,
}

const BCE_CLAMP: f64 = 1e-7;

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self {
            params,
            nodes: Vec::with_capacity(256),
            param_nodes: Vec::new(),
        }
    }

    fn push(&mut self, rows: usize, cols: usize, payload: Payload, op: Op) -> Var {
        #[cfg(debug_assertions)]
        if let Payload::Owned(ref d) = payload {
            debug_assert!(
                d.iter().all(|v| v.is_finite()),
                "non-finite value produced by a forward op"
            );
        }
        let id = self.nodes.len() as u32;
        self.nodes.push(Node {
            rows,
            cols,
            payload,
            op,
        });
        Var {
            id,
            rows: rows as u32,
            cols: cols as u32,
        }
    }

    fn data(&self, id: u32) -> &[f64] {
        match &self.nodes[id as usize].payload {
            Payload::Owned(v) => v,
            Payload::Param(idx) => &self.params.get(*idx).data,
        }
    }

    /// Value of a recorded node.
    pub fn value(&self, v: Var) -> &[f64] {
        self.data(v.id)
    }

    /// Value of a 1x1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        debug_assert_eq!(v.len(), 1);
        self.data(v.id)[0]
    }

    /// Introduce a trainable parameter leaf (by store index).
    pub fn param(&mut self, idx: usize) -> Var {
        let t = self.params.get(idx);
        let v = self.push(t.rows, t.cols, Payload::Param(idx), Op::Leaf);
        self.param_nodes.push((idx, v.id));
        v
    }

    /// Introduce a constant leaf.
    pub fn leaf(&mut self, rows: usize, cols: usize, data: Vec<f64>) -> Result<Var> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "leaf data length {} != {rows}x{cols}",
                data.len()
            )));
        }
        Ok(self.push(rows, cols, Payload::Owned(data), Op::Leaf))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        if a.cols != b.rows {
            return Err(Error::Shape(format!(
                "matmul {}x{} . {}x{}",
                a.rows, a.cols, b.rows, b.cols
            )));
        }
        let (m, k, n) = (a.rows as usize, a.cols as usize, b.cols as usize);
        let mut out = vec![0.0; m * n];
        mm_nn(self.data(a.id), self.data(b.id), m, k, n, &mut out);
        Ok(self.push(m, n, Payload::Owned(out), Op::MatMul(a.id, b.id)))
    }

    /// C = A . B^T with B given as an n x k matrix.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        if a.cols != b.cols {
            return Err(Error::Shape(format!(
                "matmul_nt {}x{} . ({}x{})^T",
                a.rows, a.cols, b.rows, b.cols
            )));
        }
        let (m, k, n) = (a.rows as usize, a.cols as usize, b.rows as usize);
        let mut out = vec![0.0; m * n];
        mm_nt(self.data(a.id), self.data(b.id), m, k, n, &mut out);
        Ok(self.push(m, n, Payload::Owned(out), Op::MatMulNt(a.id, b.id)))
    }

    fn binary_same_shape(&mut self, a: Var, b: Var, which: &str) -> Result<()> {
        if a.rows != b.rows || a.cols != b.cols {
            return Err(Error::Shape(format!(
                "{which}: {}x{} vs {}x{}",
                a.rows, a.cols, b.rows, b.cols
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape(a, b, "add")?;
        let out: Vec<f64> = self
            .data(a.id)
            .iter()
            .zip(self.data(b.id))
            .map(|(x, y)| x + y)
            .collect();
        Ok(self.push(
            a.rows as usize,
            a.cols as usize,
            Payload::Owned(out),
            Op::Add(a.id, b.id),
        ))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape(a, b, "sub")?;
        let out: Vec<f64> = self
            .data(a.id)
            .iter()
            .zip(self.data(b.id))
            .map(|(x, y)| x - y)
            .collect();
        Ok(self.push(
            a.rows as usize,
            a.cols as usize,
            Payload::Owned(out),
            Op::Sub(a.id, b.id),
        ))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape(a, b, "mul")?;
        let out: Vec<f64> = self
            .data(a.id)
            .iter()
            .zip(self.data(b.id))
            .map(|(x, y)| x * y)
            .collect();
        Ok(self.push(
            a.rows as usize,
            a.cols as usize,
            Payload::Owned(out),
            Op::Mul(a.id, b.id),
        ))
    }

    /// Add a 1 x n row vector to every row of an m x n matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        if row.rows != 1 || row.cols != a.cols {
            return Err(Error::Shape(format!(
                "add_row: {}x{} + {}x{}",
                a.rows, a.cols, row.rows, row.cols
            )));
        }
        let n = a.cols as usize;
        let r = self.data(row.id).to_vec();
        let out: Vec<f64> = self
            .data(a.id)
            .iter()
            .enumerate()
            .map(|(i, x)| x + r[i % n])
            .collect();
        Ok(self.push(
            a.rows as usize,
            n,
            Payload::Owned(out),
            Op::AddRow(a.id, row.id),
        ))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out: Vec<f64> = self.data(a.id).iter().map(|x| x * c).collect();
        self.push(
            a.rows as usize,
            a.cols as usize,
            Payload::Owned(out),
            Op::Scale(a.id, c),
        )
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out: Vec<f64> = self.data(a.id).iter().map(|x| x.max(0.0)).collect();
        self.push(
            a.rows as usize,
            a.cols as usize,
            Payload::Owned(out),
            Op::Relu(a.id),
        )
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out: Vec<f64> = self
            .data(a.id)
            .iter()
            .map(|x| 1.0 / (1.0 + (-x).exp()))
            .collect();
        self.push(
            a.rows as usize,
            a.cols as usize,
            Payload::Owned(out),
            Op::Sigmoid(a.id),
        )
    }

    /// Row-wise softmax of `scale * a` with max subtraction.
    pub fn row_softmax(&mut self, a: Var, scale: f64) -> Var {
        let (m, n) = (a.rows as usize, a.cols as usize);
        let x = self.data(a.id);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &x[i * n..(i + 1) * n];
            let mx = row.iter().fold(f64::NEG_INFINITY, |acc, v| acc.max(scale * v));
            let orow = &mut out[i * n..(i + 1) * n];
            let mut sum = 0.0;
            for (o, v) in orow.iter_mut().zip(row) {
                *o = (scale * v - mx).exp();
                sum += *o;
            }
            orow.iter_mut().for_each(|o| *o /= sum);
        }
        self.push(m, n, Payload::Owned(out), Op::RowSoftmax(a.id, scale))
    }

    /// Row-wise standardization followed by a learned affine map.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        if gain.rows != 1 || gain.cols != x.cols || bias.rows != 1 || bias.cols != x.cols {
            return Err(Error::Shape(format!(
                "layer_norm: x {}x{}, gain {}x{}, bias {}x{}",
                x.rows, x.cols, gain.rows, gain.cols, bias.rows, bias.cols
            )));
        }
        let (m, n) = (x.rows as usize, x.cols as usize);
        let g = self.data(gain.id).to_vec();
        let b = self.data(bias.id).to_vec();
        let xd = self.data(x.id);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &xd[i * n..(i + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let inv = 1.0 / (var + eps).sqrt();
            let orow = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                orow[j] = g[j] * (row[j] - mean) * inv + b[j];
            }
        }
        Ok(self.push(
            m,
            n,
            Payload::Owned(out),
            Op::LayerNorm {
                x: x.id,
                gain: gain.id,
                bias: bias.id,
                eps,
            },
        ))
    }

    /// Concatenate matrices with equal row counts along columns.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = parts[0].rows;
        if parts.iter().any(|p| p.rows != rows) {
            return Err(Error::Shape("concat_cols: row mismatch".into()));
        }
        let m = rows as usize;
        let n: usize = parts.iter().map(|p| p.cols as usize).sum();
        let mut out = vec![0.0; m * n];
        let mut off = 0;
        for p in parts {
            let pc = p.cols as usize;
            let d = self.data(p.id);
            for i in 0..m {
                out[i * n + off..i * n + off + pc].copy_from_slice(&d[i * pc..(i + 1) * pc]);
            }
            off += pc;
        }
        Ok(self.push(
            m,
            n,
            Payload::Owned(out),
            Op::ConcatCols(parts.iter().map(|p| p.id).collect()),
        ))
    }

    /// Take columns [start, start+len) of a matrix.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = (a.rows as usize, a.cols as usize);
        if start + len > n {
            return Err(Error::Shape(format!(
                "slice_cols [{start}, {}) of {n} columns",
                start + len
            )));
        }
        let d = self.data(a.id);
        let mut out = vec![0.0; m * len];
        for i in 0..m {
            out[i * len..(i + 1) * len].copy_from_slice(&d[i * n + start..i * n + start + len]);
        }
        Ok(self.push(
            m,
            len,
            Payload::Owned(out),
            Op::SliceCols(a.id, start, len),
        ))
    }

    /// Reinterpret the flat data with a new shape of equal size.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        if rows * cols != a.len() {
            return Err(Error::Shape(format!(
                "reshape {}x{} -> {rows}x{cols}",
                a.rows, a.cols
            )));
        }
        let out = self.data(a.id).to_vec();
        Ok(self.push(rows, cols, Payload::Owned(out), Op::Reshape(a.id)))
    }

    /// Sum each row: m x n -> m x 1.
    pub fn row_sum(&mut self, a: Var) -> Var {
        let (m, n) = (a.rows as usize, a.cols as usize);
        let d = self.data(a.id);
        let out: Vec<f64> = (0..m).map(|i| d[i * n..(i + 1) * n].iter().sum()).collect();
        self.push(m, 1, Payload::Owned(out), Op::RowSum(a.id))
    }

    /// Mean of all elements: -> 1 x 1.
    pub fn mean_all(&mut self, a: Var) -> Var {
        let d = self.data(a.id);
        let mean = d.iter().sum::<f64>() / d.len() as f64;
        self.push(1, 1, Payload::Owned(vec![mean]), Op::MeanAll(a.id))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let out: Vec<f64> = self.data(a.id).iter().map(|x| x * x).collect();
        self.push(
            a.rows as usize,
            a.cols as usize,
            Payload::Owned(out),
            Op::Square(a.id),
        )
    }

    /// Mean binary cross entropy of predictions against {0,1} targets.
    /// Predictions are clamped to [1e-7, 1-1e-7] before the logs.
    pub fn bce_mean(&mut self, pred: Var, target: Var) -> Result<Var> {
        self.binary_same_shape(pred, target, "bce_mean")?;
        let p = self.data(pred.id);
        let t = self.data(target.id);
        let n = p.len() as f64;
        let mut acc = 0.0;
        for (pi, ti) in p.iter().zip(t) {
            let pc = pi.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
            acc -= ti * pc.ln() + (1.0 - ti) * (1.0 - pc).ln();
        }
        Ok(self.push(
            1,
            1,
            Payload::Owned(vec![acc / n]),
            Op::BceMean(pred.id, target.id),
        ))
    }

    /// Mean squared error between two same-shape nodes.
    pub fn mse_mean(&mut self, a: Var, b: Var) -> Result<Var> {
        let d = self.sub(a, b)?;
        let s = self.square(d);
        Ok(self.mean_all(s))
    }

    /// Reverse pass from a scalar loss; accumulates parameter gradients into
    /// `out` (callers zero it explicitly when starting a fresh accumulation).
    pub fn backward(&self, loss: Var, out: &mut GradStore) -> Result<()> {
        if loss.len() != 1 {
            return Err(Error::Usage(format!(
                "backward requires a scalar loss, got {}x{}",
                loss.rows, loss.cols
            )));
        }
        let n_nodes = self.nodes.len();
        let mut grads: Vec<Vec<f64>> = Vec::with_capacity(n_nodes);
        for node in &self.nodes {
            grads.push(vec![0.0; node.rows * node.cols]);
        }
        grads[loss.id as usize][0] = 1.0;

        for id in (0..n_nodes).rev() {
            let node = &self.nodes[id];
            // cheap skip: nothing flowed into this node
            if grads[id].iter().all(|v| *v == 0.0) {
                continue;
            }
            let g = std::mem::take(&mut grads[id]);
            match &node.op {
                Op::Leaf => {
                    grads[id] = g;
                    continue;
                }
                Op::MatMul(a, b) => {
                    let (m, k) = (
                        self.nodes[*a as usize].rows,
                        self.nodes[*a as usize].cols,
                    );
                    let n = node.cols;
                    // dA += dC . B^T ; dB += A^T . dC
                    let bd = self.data(*b);
                    let ad = self.data(*a);
                    mm_nt(&g, bd, m, n, k, &mut grads[*a as usize]);
                    mm_tn(ad, &g, m, k, n, &mut grads[*b as usize]);
                }
                Op::MatMulNt(a, b) => {
                    let (m, k) = (
                        self.nodes[*a as usize].rows,
                        self.nodes[*a as usize].cols,
                    );
                    let n = node.cols;
                    // C = A . B^T : dA += dC . B ; dB += dC^T . A
                    let bd = self.data(*b);
                    let ad = self.data(*a);
                    mm_nn(&g, bd, m, n, k, &mut grads[*a as usize]);
                    mm_tn(&g, ad, m, n, k, &mut grads[*b as usize]);
                }
                Op::Add(a, b) => {
                    axpy(&mut grads[*a as usize], &g, 1.0);
                    axpy(&mut grads[*b as usize], &g, 1.0);
                }
                Op::Sub(a, b) => {
                    axpy(&mut grads[*a as usize], &g, 1.0);
                    axpy(&mut grads[*b as usize], &g, -1.0);
                }
                Op::Mul(a, b) => {
                    let ad = self.data(*a);
                    let bd = self.data(*b);
                    for (i, gi) in g.iter().enumerate() {
                        grads[*a as usize][i] += gi * bd[i];
                    }
                    for (i, gi) in g.iter().enumerate() {
                        grads[*b as usize][i] += gi * ad[i];
                    }
                }
                Op::AddRow(a, row) => {
                    let n = node.cols;
                    axpy(&mut grads[*a as usize], &g, 1.0);
                    for (i, gi) in g.iter().enumerate() {
                        grads[*row as usize][i % n] += gi;
                    }
                }
                Op::Scale(a, c) => {
                    axpy(&mut grads[*a as usize], &g, *c);
                }
                Op::Relu(a) => {
                    let ad = self.data(*a);
                    for (i, gi) in g.iter().enumerate() {
                        if ad[i] > 0.0 {
                            grads[*a as usize][i] += gi;
                        }
                    }
                }
                Op::Sigmoid(a) => {
                    let y = match &node.payload {
                        Payload::Owned(v) => v,
                        Payload::Param(_) => unreachable!(),
                    };
                    for (i, gi) in g.iter().enumerate() {
                        grads[*a as usize][i] += gi * y[i] * (1.0 - y[i]);
                    }
                }
                Op::RowSoftmax(a, scale) => {
                    let y = match &node.payload {
                        Payload::Owned(v) => v,
                        Payload::Param(_) => unreachable!(),
                    };
                    let (m, n) = (node.rows, node.cols);
                    for i in 0..m {
                        let yr = &y[i * n..(i + 1) * n];
                        let gr = &g[i * n..(i + 1) * n];
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        let ga = &mut grads[*a as usize][i * n..(i + 1) * n];
                        for j in 0..n {
                            ga[j] += scale * yr[j] * (gr[j] - dot);
                        }
                    }
                }
                Op::LayerNorm { x, gain, bias, eps } => {
                    let (m, n) = (node.rows, node.cols);
                    let xd = self.data(*x);
                    let gd = self.data(*gain);
                    for i in 0..m {
                        let row = &xd[i * n..(i + 1) * n];
                        let mean = row.iter().sum::<f64>() / n as f64;
                        let var =
                            row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
                        let inv = 1.0 / (var + eps).sqrt();
                        let gr = &g[i * n..(i + 1) * n];
                        // xhat and dxhat
                        let mut mean_dxhat = 0.0;
                        let mut mean_dxhat_xhat = 0.0;
                        for j in 0..n {
                            let xhat = (row[j] - mean) * inv;
                            let dxhat = gr[j] * gd[j];
                            mean_dxhat += dxhat;
                            mean_dxhat_xhat += dxhat * xhat;
                            grads[*gain as usize][j] += gr[j] * xhat;
                            grads[*bias as usize][j] += gr[j];
                        }
                        mean_dxhat /= n as f64;
                        mean_dxhat_xhat /= n as f64;
                        let gx = &mut grads[*x as usize][i * n..(i + 1) * n];
                        for j in 0..n {
                            let xhat = (row[j] - mean) * inv;
                            let dxhat = gr[j] * gd[j];
                            gx[j] += inv * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat);
                        }
                    }
                }
                Op::ConcatCols(parts) => {
                    let m = node.rows;
                    let n = node.cols;
                    let mut off = 0;
                    for p in parts {
                        let pc = self.nodes[*p as usize].cols;
                        let gp = &mut grads[*p as usize];
                        for i in 0..m {
                            for j in 0..pc {
                                gp[i * pc + j] += g[i * n + off + j];
                            }
                        }
                        off += pc;
                    }
                }
                Op::SliceCols(a, start, len) => {
                    let m = node.rows;
                    let an = self.nodes[*a as usize].cols;
                    let ga = &mut grads[*a as usize];
                    for i in 0..m {
                        for j in 0..*len {
                            ga[i * an + start + j] += g[i * len + j];
                        }
                    }
                }
                Op::Reshape(a) => {
                    axpy(&mut grads[*a as usize], &g, 1.0);
                }
                Op::RowSum(a) => {
                    let n = self.nodes[*a as usize].cols;
                    let ga = &mut grads[*a as usize];
                    for (i, gi) in g.iter().enumerate() {
                        for j in 0..n {
                            ga[i * n + j] += gi;
                        }
                    }
                }
                Op::MeanAll(a) => {
                    let len = self.nodes[*a as usize].rows * self.nodes[*a as usize].cols;
                    let c = g[0] / len as f64;
                    grads[*a as usize].iter_mut().for_each(|v| *v += c);
                }
                Op::Square(a) => {
                    let ad = self.data(*a);
                    for (i, gi) in g.iter().enumerate() {
                        grads[*a as usize][i] += 2.0 * ad[i] * gi;
                    }
                }
                Op::BceMean(pred, target) => {
                    let p = self.data(*pred);
                    let t = self.data(*target);
                    let n = p.len() as f64;
                    let c = g[0] / n;
                    for (i, (pi, ti)) in p.iter().zip(t).enumerate() {
                        if *pi > BCE_CLAMP && *pi < 1.0 - BCE_CLAMP {
                            grads[*pred as usize][i] += c * (pi - ti) / (pi * (1.0 - pi));
                        }
                    }
                }
            }
            grads[id] = g;
        }

        for (param_idx, node_id) in &self.param_nodes {
            let src = &grads[*node_id as usize];
            let dst = &mut out.grads[*param_idx];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
        Ok(())
    }
}

#[inline]
fn axpy(dst: &mut [f64], src: &[f64], c: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += c * s;
    }
}

/// C[m x n] += A[m x k] . B[k x n]
pub fn mm_nn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, c: &mut [f64]) {
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for l in 0..k {
            let av = a[i * k + l];
            if av == 0.0 {
                continue;
            }
            let brow = &b[l * n..(l + 1) * n];
            for (cv, bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

/// C[m x n] += A[m x k] . B^T with B stored as n x k
pub fn mm_nt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, c: &mut [f64]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut c[i * n..(i + 1) * n];
        for (j, cv) in crow.iter_mut().enumerate() {
            let brow = &b[j * k..(j + 1) * k];
            let mut acc = 0.0;
            for (av, bv) in arow.iter().zip(brow) {
                acc += av * bv;
            }
            *cv += acc;
        }
    }
}

/// C[k x n] += A^T . B with A stored as m x k and B as m x n
pub fn mm_tn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, c: &mut [f64]) {
    for l in 0..m {
        let arow = &a[l * k..(l + 1) * k];
        let brow = &b[l * n..(l + 1) * n];
        for (i, av) in arow.iter().enumerate() {
            if *av == 0.0 {
                continue;
            }
            let crow = &mut c[i * n..(i + 1) * n];
            for (cv, bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}
