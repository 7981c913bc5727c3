//! Forward implementations of the supported op kinds.
//!
//! These are plain functions over value tensors; [`super::Graph`] calls into
//! them and records backward rules on top.

use super::{Tensor, TensorError};

/// Zero-padding mode for conv2d. `Same` keeps the spatial size and requires
/// an odd kernel; `Valid` shrinks it by `k - 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    Same,
    Valid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpKind {
    MatMul,
    Conv2d(Padding),
    AddBias,
    Relu,
    Flatten,
    Softmax,
    CrossEntropyLoss,
    Add,
    Mul,
    Mean,
}

fn arity(kind: OpKind) -> usize {
    match kind {
        OpKind::MatMul
        | OpKind::Conv2d(_)
        | OpKind::AddBias
        | OpKind::CrossEntropyLoss
        | OpKind::Add
        | OpKind::Mul => 2,
        OpKind::Relu | OpKind::Flatten | OpKind::Softmax | OpKind::Mean => 1,
    }
}

/// Dispatches one forward op over value tensors.
pub fn forward_op(kind: OpKind, inputs: &[&Tensor]) -> Result<Tensor, TensorError> {
    if inputs.len() != arity(kind) {
        return Err(TensorError::ShapeMismatch {
            op: "forward_op",
            detail: format!("{kind:?} expects {} inputs, got {}", arity(kind), inputs.len()),
        });
    }
    match kind {
        OpKind::MatMul => matmul(inputs[0], inputs[1]),
        OpKind::Conv2d(padding) => conv2d(inputs[0], inputs[1], padding),
        OpKind::AddBias => add_bias(inputs[0], inputs[1]),
        OpKind::Relu => Ok(relu(inputs[0])),
        OpKind::Flatten => flatten(inputs[0]),
        OpKind::Softmax => softmax(inputs[0]),
        OpKind::CrossEntropyLoss => cross_entropy(inputs[0], inputs[1]),
        OpKind::Add => add(inputs[0], inputs[1]),
        OpKind::Mul => mul(inputs[0], inputs[1]),
        OpKind::Mean => Ok(mean(inputs[0])),
    }
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
    if a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0] {
        return Err(TensorError::ShapeMismatch {
            op: "matmul",
            detail: format!("{:?} x {:?}", a.shape(), b.shape()),
        });
    }
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let n = b.shape()[1];
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a.data()[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let brow = &b.data()[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Tensor::new(vec![m, n], out)
}

pub(crate) fn conv_out_size(h: usize, k: usize, padding: Padding) -> usize {
    match padding {
        Padding::Same => h,
        Padding::Valid => h - k + 1,
    }
}

fn conv_checks(x: &Tensor, kernel: &Tensor, padding: Padding) -> Result<(), TensorError> {
    let bad = |detail: String| TensorError::ShapeMismatch { op: "conv2d", detail };
    if x.rank() != 4 || kernel.rank() != 4 {
        return Err(bad(format!("input {:?}, kernel {:?}", x.shape(), kernel.shape())));
    }
    let (kh, kw) = (kernel.shape()[2], kernel.shape()[3]);
    if kh != kw {
        return Err(bad(format!("kernel must be square, got {kh}x{kw}")));
    }
    if kernel.shape()[1] != x.shape()[1] {
        return Err(bad(format!(
            "kernel expects {} input channels, input has {}",
            kernel.shape()[1],
            x.shape()[1]
        )));
    }
    match padding {
        Padding::Same if kh % 2 == 0 => Err(bad(format!("same-padding needs odd kernel, got {kh}"))),
        Padding::Valid if kh > x.shape()[2] || kh > x.shape()[3] => {
            Err(bad(format!("kernel {kh} larger than input {:?}", &x.shape()[2..])))
        }
        _ => Ok(()),
    }
}

/// Valid column window of a kernel row at output column `ox`:
/// `(kx_first, kx_last_exclusive)` such that `ix = ox + kx - pad` stays in
/// `[0, w)`.
#[inline]
fn kx_window(ox: usize, k: usize, pad: usize, w: usize) -> (usize, usize) {
    let lo = pad.saturating_sub(ox);
    let hi = k.min(w + pad - ox);
    (lo, hi)
}

/// 2-D convolution, stride 1, square kernel. Input `[N, C, H, W]`,
/// kernel `[OC, C, K, K]`, output `[N, OC, H', W']`.
pub fn conv2d(x: &Tensor, kernel: &Tensor, padding: Padding) -> Result<Tensor, TensorError> {
    conv_checks(x, kernel, padding)?;
    let (n, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (oc, k) = (kernel.shape()[0], kernel.shape()[2]);
    let (oh, ow) = (conv_out_size(h, k, padding), conv_out_size(w, k, padding));
    let pad = if padding == Padding::Same { (k - 1) / 2 } else { 0 };

    let xs = x.data();
    let ks = kernel.data();
    let mut out = vec![0.0; n * oc * oh * ow];
    for b in 0..n {
        for o in 0..oc {
            for ic in 0..c {
                let x_plane = &xs[(b * c + ic) * h * w..(b * c + ic + 1) * h * w];
                let k_plane = &ks[(o * c + ic) * k * k..(o * c + ic + 1) * k * k];
                let o_plane = &mut out[((b * oc + o) * oh) * ow..((b * oc + o) * oh + oh) * ow];
                for oy in 0..oh {
                    for ky in 0..k {
                        let iy = oy + ky;
                        if iy < pad || iy >= h + pad {
                            continue;
                        }
                        let x_row = &x_plane[(iy - pad) * w..(iy - pad + 1) * w];
                        let k_row = &k_plane[ky * k..(ky + 1) * k];
                        let o_row = &mut o_plane[oy * ow..(oy + 1) * ow];
                        for (ox, acc) in o_row.iter_mut().enumerate() {
                            let (lo, hi) = kx_window(ox, k, pad, w);
                            let xw = &x_row[ox + lo - pad..ox + hi - pad];
                            let kw = &k_row[lo..hi];
                            let mut sum = 0.0;
                            for (xv, kv) in xw.iter().zip(kw) {
                                sum += xv * kv;
                            }
                            *acc += sum;
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![n, oc, oh, ow], out)
}

/// Adds a bias vector: `[N, F] + [F]` or `[N, C, H, W] + [C]`.
pub fn add_bias(x: &Tensor, bias: &Tensor) -> Result<Tensor, TensorError> {
    let bad = || TensorError::ShapeMismatch {
        op: "add_bias",
        detail: format!("input {:?}, bias {:?}", x.shape(), bias.shape()),
    };
    if bias.rank() != 1 {
        return Err(bad());
    }
    let mut out = x.data().to_vec();
    match x.rank() {
        2 if x.shape()[1] == bias.len() => {
            let f = bias.len();
            for (i, v) in out.iter_mut().enumerate() {
                *v += bias.data()[i % f];
            }
        }
        4 if x.shape()[1] == bias.len() => {
            let plane = x.shape()[2] * x.shape()[3];
            let c = bias.len();
            for (i, v) in out.iter_mut().enumerate() {
                *v += bias.data()[(i / plane) % c];
            }
        }
        _ => return Err(bad()),
    }
    Tensor::new(x.shape().to_vec(), out)
}

pub fn relu(x: &Tensor) -> Tensor {
    let out = x.data().iter().map(|&v| v.max(0.0)).collect();
    Tensor::new(x.shape().to_vec(), out).expect("relu preserves finiteness")
}

/// Collapses all trailing dims: `[N, ...]` becomes `[N, rest]`.
pub fn flatten(x: &Tensor) -> Result<Tensor, TensorError> {
    if x.rank() < 2 {
        return Err(TensorError::ShapeMismatch {
            op: "flatten",
            detail: format!("need rank >= 2, got {:?}", x.shape()),
        });
    }
    let n = x.shape()[0];
    let rest = x.len() / n;
    x.clone().reshaped(vec![n, rest])
}

/// Row-wise stable softmax over the last axis of a 1-D or 2-D tensor.
pub fn softmax(x: &Tensor) -> Result<Tensor, TensorError> {
    let (rows, cols) = match x.rank() {
        1 => (1, x.shape()[0]),
        2 => (x.shape()[0], x.shape()[1]),
        _ => {
            return Err(TensorError::ShapeMismatch {
                op: "softmax",
                detail: format!("need rank 1 or 2, got {:?}", x.shape()),
            })
        }
    };
    let mut out = vec![0.0; x.len()];
    for r in 0..rows {
        let row = &x.data()[r * cols..(r + 1) * cols];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let orow = &mut out[r * cols..(r + 1) * cols];
        let mut sum = 0.0;
        for (o, &v) in orow.iter_mut().zip(row) {
            *o = (v - max).exp();
            sum += *o;
        }
        for o in orow.iter_mut() {
            *o /= sum;
        }
    }
    Tensor::new(x.shape().to_vec(), out)
}

fn rows_cols_for_loss(x: &Tensor) -> Result<(usize, usize), TensorError> {
    match x.rank() {
        1 => Ok((1, x.shape()[0])),
        2 => Ok((x.shape()[0], x.shape()[1])),
        _ => Err(TensorError::ShapeMismatch {
            op: "cross_entropy",
            detail: format!("need rank 1 or 2 logits, got {:?}", x.shape()),
        }),
    }
}

/// Softmax cross-entropy, fused via log-sum-exp for stability. `targets` is
/// a one-hot (or soft) distribution with the same shape as `logits`; the
/// result is the mean loss over rows.
pub fn cross_entropy(logits: &Tensor, targets: &Tensor) -> Result<Tensor, TensorError> {
    if logits.shape() != targets.shape() {
        return Err(TensorError::ShapeMismatch {
            op: "cross_entropy",
            detail: format!("logits {:?} vs targets {:?}", logits.shape(), targets.shape()),
        });
    }
    let (rows, cols) = rows_cols_for_loss(logits)?;
    let mut total = 0.0;
    for r in 0..rows {
        let z = &logits.data()[r * cols..(r + 1) * cols];
        let t = &targets.data()[r * cols..(r + 1) * cols];
        let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + z.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
        total += lse - z.iter().zip(t).map(|(&zv, &tv)| zv * tv).sum::<f64>();
    }
    let loss = total / rows as f64;
    if !loss.is_finite() {
        return Err(TensorError::NonFinite { op: "cross_entropy" });
    }
    Ok(Tensor::scalar(loss))
}

/// Gradient of [`cross_entropy`] w.r.t. the logits: `(softmax - targets) / rows`.
pub(crate) fn cross_entropy_grad(logits: &Tensor, targets: &Tensor) -> Vec<f64> {
    let (rows, cols) = rows_cols_for_loss(logits).expect("validated in forward");
    let probs = softmax(logits).expect("validated in forward");
    let mut grad = probs.data().to_vec();
    for r in 0..rows {
        for c in 0..cols {
            grad[r * cols + c] = (grad[r * cols + c] - targets.data()[r * cols + c]) / rows as f64;
        }
    }
    grad
}

fn zip_same_shape(
    op: &'static str,
    a: &Tensor,
    b: &Tensor,
    f: impl Fn(f64, f64) -> f64,
) -> Result<Tensor, TensorError> {
    if a.shape() != b.shape() {
        return Err(TensorError::ShapeMismatch {
            op,
            detail: format!("{:?} vs {:?}", a.shape(), b.shape()),
        });
    }
    let out = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), out)
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
    zip_same_shape("add", a, b, |x, y| x + y)
}

pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
    zip_same_shape("mul", a, b, |x, y| x * y)
}

/// Mean over all elements, producing a scalar.
pub fn mean(x: &Tensor) -> Tensor {
    Tensor::scalar(x.data().iter().sum::<f64>() / x.len() as f64)
}
