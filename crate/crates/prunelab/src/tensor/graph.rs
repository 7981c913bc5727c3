//! Define-by-run compute graph. A graph is rebuilt for every forward pass;
//! node ids are insertion-ordered, so reverse id order is a reverse
//! topological order and backward visits each node exactly once.

use super::ops::{self, OpKind, Padding};
use super::{Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    Conv2d { input: NodeId, kernel: NodeId, padding: Padding },
    AddBias { input: NodeId, bias: NodeId },
    Relu(NodeId),
    Flatten(NodeId),
    Softmax(NodeId),
    CrossEntropy { logits: NodeId, targets: NodeId },
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Mean(NodeId),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Recorded forward pass with gradients filled in by [`Graph::backward`].
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        self.grads.push(None);
        NodeId(self.nodes.len() - 1)
    }

    fn check(&self, id: NodeId) -> Result<(), TensorError> {
        if id.0 < self.nodes.len() {
            Ok(())
        } else {
            Err(TensorError::DetachedNode(id.0))
        }
    }

    /// Inserts an input or parameter value.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Gradient of the last backward pass w.r.t. node `id`.
    pub fn grad(&self, id: NodeId) -> Option<&[f64]> {
        self.grads.get(id.0).and_then(|g| g.as_deref())
    }

    /// Records one op. Convenience wrappers below are thin aliases.
    pub fn apply(&mut self, kind: OpKind, inputs: &[NodeId]) -> Result<NodeId, TensorError> {
        for &id in inputs {
            self.check(id)?;
        }
        let values: Vec<&Tensor> = inputs.iter().map(|&id| &self.nodes[id.0].value).collect();
        let value = ops::forward_op(kind, &values)?;
        let op = match (kind, inputs) {
            (OpKind::MatMul, &[a, b]) => Op::MatMul(a, b),
            (OpKind::Conv2d(padding), &[input, kernel]) => Op::Conv2d { input, kernel, padding },
            (OpKind::AddBias, &[input, bias]) => Op::AddBias { input, bias },
            (OpKind::Relu, &[x]) => Op::Relu(x),
            (OpKind::Flatten, &[x]) => Op::Flatten(x),
            (OpKind::Softmax, &[x]) => Op::Softmax(x),
            (OpKind::CrossEntropyLoss, &[logits, targets]) => Op::CrossEntropy { logits, targets },
            (OpKind::Add, &[a, b]) => Op::Add(a, b),
            (OpKind::Mul, &[a, b]) => Op::Mul(a, b),
            (OpKind::Mean, &[x]) => Op::Mean(x),
            _ => unreachable!("arity validated by forward_op"),
        };
        Ok(self.push(value, op))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        self.apply(OpKind::MatMul, &[a, b])
    }

    pub fn conv2d(&mut self, x: NodeId, kernel: NodeId, padding: Padding) -> Result<NodeId, TensorError> {
        self.apply(OpKind::Conv2d(padding), &[x, kernel])
    }

    pub fn add_bias(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId, TensorError> {
        self.apply(OpKind::AddBias, &[x, bias])
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId, TensorError> {
        self.apply(OpKind::Relu, &[x])
    }

    pub fn flatten(&mut self, x: NodeId) -> Result<NodeId, TensorError> {
        self.apply(OpKind::Flatten, &[x])
    }

    pub fn softmax(&mut self, x: NodeId) -> Result<NodeId, TensorError> {
        self.apply(OpKind::Softmax, &[x])
    }

    pub fn cross_entropy(&mut self, logits: NodeId, targets: NodeId) -> Result<NodeId, TensorError> {
        self.apply(OpKind::CrossEntropyLoss, &[logits, targets])
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        self.apply(OpKind::Add, &[a, b])
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        self.apply(OpKind::Mul, &[a, b])
    }

    pub fn mean(&mut self, x: NodeId) -> Result<NodeId, TensorError> {
        self.apply(OpKind::Mean, &[x])
    }

    /// Reverse-mode sweep from a scalar loss. Populates per-node gradients,
    /// accumulating across fan-out.
    pub fn backward(&mut self, loss: NodeId) -> Result<(), TensorError> {
        self.check(loss)?;
        let loss_value = &self.nodes[loss.0].value;
        if !loss_value.is_scalar() {
            return Err(TensorError::NonScalarLoss { shape: loss_value.shape().to_vec() });
        }
        for g in &mut self.grads {
            *g = None;
        }
        self.grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(out_grad) = self.grads[i].take() else {
                continue;
            };
            self.propagate(i, &out_grad);
            self.grads[i] = Some(out_grad);
        }
        Ok(())
    }

    fn accumulate(&mut self, id: NodeId, delta: Vec<f64>) {
        match &mut self.grads[id.0] {
            Some(g) => {
                for (gv, dv) in g.iter_mut().zip(&delta) {
                    *gv += dv;
                }
            }
            slot @ None => *slot = Some(delta),
        }
    }

    fn propagate(&mut self, i: usize, out_grad: &[f64]) {
        match self.nodes[i].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (self.nodes[a.0].value.shape()[0], self.nodes[a.0].value.shape()[1]);
                let n = self.nodes[b.0].value.shape()[1];
                let av = self.nodes[a.0].value.data();
                let bv = self.nodes[b.0].value.data();
                // dA = dC * B^T
                let mut da = vec![0.0; m * k];
                for r in 0..m {
                    let g_row = &out_grad[r * n..(r + 1) * n];
                    for (p, dav) in da[r * k..(r + 1) * k].iter_mut().enumerate() {
                        let b_row = &bv[p * n..(p + 1) * n];
                        let mut acc = 0.0;
                        for (&gv, &bvv) in g_row.iter().zip(b_row) {
                            acc += gv * bvv;
                        }
                        *dav = acc;
                    }
                }
                // dB = A^T * dC
                let mut db = vec![0.0; k * n];
                for r in 0..m {
                    let a_row = &av[r * k..(r + 1) * k];
                    let g_row = &out_grad[r * n..(r + 1) * n];
                    for (p, &a_rp) in a_row.iter().enumerate() {
                        if a_rp == 0.0 {
                            continue;
                        }
                        for (dbv, &gv) in db[p * n..(p + 1) * n].iter_mut().zip(g_row) {
                            *dbv += a_rp * gv;
                        }
                    }
                }
                self.accumulate(a, da);
                self.accumulate(b, db);
            }
            Op::Conv2d { input, kernel, padding } => {
                let (dx, dk) = conv2d_backward(
                    &self.nodes[input.0].value,
                    &self.nodes[kernel.0].value,
                    padding,
                    out_grad,
                );
                self.accumulate(input, dx);
                self.accumulate(kernel, dk);
            }
            Op::AddBias { input, bias } => {
                let x = &self.nodes[input.0].value;
                let blen = self.nodes[bias.0].value.len();
                let mut db = vec![0.0; blen];
                match x.rank() {
                    2 => {
                        for (idx, &g) in out_grad.iter().enumerate() {
                            db[idx % blen] += g;
                        }
                    }
                    4 => {
                        let plane = x.shape()[2] * x.shape()[3];
                        for (idx, &g) in out_grad.iter().enumerate() {
                            db[(idx / plane) % blen] += g;
                        }
                    }
                    _ => unreachable!("validated in forward"),
                }
                self.accumulate(input, out_grad.to_vec());
                self.accumulate(bias, db);
            }
            Op::Relu(x) => {
                let xv = self.nodes[x.0].value.data();
                let dx = out_grad
                    .iter()
                    .zip(xv)
                    .map(|(&g, &v)| if v > 0.0 { g } else { 0.0 })
                    .collect();
                self.accumulate(x, dx);
            }
            Op::Flatten(x) => {
                self.accumulate(x, out_grad.to_vec());
            }
            Op::Softmax(x) => {
                let s = self.nodes[i].value.clone();
                let cols = *s.shape().last().expect("softmax output is rank 1 or 2");
                let rows = s.len() / cols;
                let mut dx = vec![0.0; s.len()];
                for r in 0..rows {
                    let srow = &s.data()[r * cols..(r + 1) * cols];
                    let grow = &out_grad[r * cols..(r + 1) * cols];
                    let dot: f64 = srow.iter().zip(grow).map(|(&sv, &gv)| sv * gv).sum();
                    for c in 0..cols {
                        dx[r * cols + c] = srow[c] * (grow[c] - dot);
                    }
                }
                self.accumulate(x, dx);
            }
            Op::CrossEntropy { logits, targets } => {
                let scale = out_grad[0];
                let mut dz = ops::cross_entropy_grad(
                    &self.nodes[logits.0].value,
                    &self.nodes[targets.0].value,
                );
                for g in &mut dz {
                    *g *= scale;
                }
                self.accumulate(logits, dz);
                // targets are labels, not differentiated through
            }
            Op::Add(a, b) => {
                self.accumulate(a, out_grad.to_vec());
                self.accumulate(b, out_grad.to_vec());
            }
            Op::Mul(a, b) => {
                let av: Vec<f64> = self.nodes[a.0].value.data().to_vec();
                let bv: Vec<f64> = self.nodes[b.0].value.data().to_vec();
                let da = out_grad.iter().zip(&bv).map(|(&g, &v)| g * v).collect();
                let db = out_grad.iter().zip(&av).map(|(&g, &v)| g * v).collect();
                self.accumulate(a, da);
                self.accumulate(b, db);
            }
            Op::Mean(x) => {
                let len = self.nodes[x.0].value.len();
                let g = out_grad[0] / len as f64;
                self.accumulate(x, vec![g; len]);
            }
        }
    }
}

fn conv2d_backward(
    x: &Tensor,
    kernel: &Tensor,
    padding: Padding,
    out_grad: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let (n, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (oc, k) = (kernel.shape()[0], kernel.shape()[2]);
    let oh = ops::conv_out_size(h, k, padding);
    let ow = ops::conv_out_size(w, k, padding);
    let pad = if padding == Padding::Same { (k - 1) / 2 } else { 0 };

    let xs = x.data();
    let ks = kernel.data();
    let mut dx = vec![0.0; x.len()];
    let mut dk = vec![0.0; kernel.len()];
    for b in 0..n {
        for o in 0..oc {
            let g_plane = &out_grad[((b * oc + o) * oh) * ow..((b * oc + o) * oh + oh) * ow];
            for ic in 0..c {
                let x_base = (b * c + ic) * h * w;
                let k_base = (o * c + ic) * k * k;
                for oy in 0..oh {
                    let g_row = &g_plane[oy * ow..(oy + 1) * ow];
                    for ky in 0..k {
                        let iy = oy + ky;
                        if iy < pad || iy >= h + pad {
                            continue;
                        }
                        let row = (iy - pad) * w;
                        for kx in 0..k {
                            // valid ox range keeping ix = ox + kx - pad inside [0, w)
                            let lo = pad.saturating_sub(kx);
                            let hi = ow.min(w + pad - kx);
                            if lo >= hi {
                                continue;
                            }
                            let kv = ks[k_base + ky * k + kx];
                            let ix0 = lo + kx - pad;
                            let g_win = &g_row[lo..hi];
                            let dx_win = &mut dx[x_base + row + ix0..x_base + row + ix0 + hi - lo];
                            let x_win = &xs[x_base + row + ix0..x_base + row + ix0 + hi - lo];
                            let mut dot = 0.0;
                            for ((dxv, &gv), &xv) in dx_win.iter_mut().zip(g_win).zip(x_win) {
                                *dxv += gv * kv;
                                dot += gv * xv;
                            }
                            dk[k_base + ky * k + kx] += dot;
                        }
                    }
                }
            }
        }
    }
    (dx, dk)
}
