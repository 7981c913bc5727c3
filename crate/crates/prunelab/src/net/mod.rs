//! Masked-parameter networks: a layer stack where every weight tensor
//! carries a binary prune mask. The effective weight is `w * mask` at every
//! use, so a masked entry contributes exactly zero.

mod checkpoint;

pub use checkpoint::CheckpointError;

use serde::{Deserialize, Serialize};

use crate::rng::{stream, Purpose};
use crate::tensor::{ops, Graph, NodeId, Padding, Tensor, TensorError};
use rand::RngExt;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NetError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("network spec invalid: {0}")]
    BadSpec(String),
    #[error("accuracy over an empty dataset")]
    EmptyDataset,
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(#[from] CheckpointError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerSpec {
    Dense { fan_in: usize, fan_out: usize },
    Conv2d { in_channels: usize, out_channels: usize, kernel: usize, padding: PaddingSpec },
    Relu,
    Flatten,
}

/// Serializable mirror of [`Padding`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PaddingSpec {
    Same,
    Valid,
}

impl From<PaddingSpec> for Padding {
    fn from(p: PaddingSpec) -> Self {
        match p {
            PaddingSpec::Same => Padding::Same,
            PaddingSpec::Valid => Padding::Valid,
        }
    }
}

/// Architecture description: per-sample input shape, the layer stack, and
/// the class count the final layer must produce.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
    pub classes: usize,
}

impl NetworkSpec {
    /// Walks the stack and checks consecutive shapes compose; returns the
    /// per-layer input shapes seen by each layer.
    fn shape_walk(&self) -> Result<Vec<Vec<usize>>, NetError> {
        let bad = |msg: String| NetError::BadSpec(msg);
        if self.classes < 2 {
            return Err(bad(format!("need >= 2 classes, got {}", self.classes)));
        }
        let mut shape = self.input_shape.clone();
        let mut seen = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            seen.push(shape.clone());
            shape = match *layer {
                LayerSpec::Dense { fan_in, fan_out } => {
                    if shape != [fan_in] {
                        return Err(bad(format!(
                            "layer {i}: dense expects [{fan_in}], got {shape:?}"
                        )));
                    }
                    vec![fan_out]
                }
                LayerSpec::Conv2d { in_channels, out_channels, kernel, padding } => {
                    if shape.len() != 3 || shape[0] != in_channels {
                        return Err(bad(format!(
                            "layer {i}: conv2d expects [{in_channels}, h, w], got {shape:?}"
                        )));
                    }
                    let (h, w) = (shape[1], shape[2]);
                    if kernel == 0 || (padding == PaddingSpec::Valid && (kernel > h || kernel > w)) {
                        return Err(bad(format!("layer {i}: kernel {kernel} vs input {shape:?}")));
                    }
                    if padding == PaddingSpec::Same && kernel % 2 == 0 {
                        return Err(bad(format!("layer {i}: same-padding needs odd kernel")));
                    }
                    let oh = ops::conv_out_size(h, kernel, padding.into());
                    let ow = ops::conv_out_size(w, kernel, padding.into());
                    vec![out_channels, oh, ow]
                }
                LayerSpec::Relu => shape,
                LayerSpec::Flatten => vec![shape.iter().product()],
            };
        }
        if shape != [self.classes] {
            return Err(bad(format!(
                "final layer produces {shape:?}, expected [{}]",
                self.classes
            )));
        }
        Ok(seen)
    }

    pub fn validate(&self) -> Result<(), NetError> {
        self.shape_walk().map(|_| ())
    }
}

/// Pruning granularity of one parameter tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    PerWeight,
    PerOutputUnit,
}

/// A weight tensor plus its binary mask. Masks only ever move 1 -> 0.
#[derive(Debug, Clone)]
pub struct MaskedParameter {
    weights: Tensor,
    mask: Tensor,
    granularity: Granularity,
}

impl MaskedParameter {
    pub fn new_unmasked(weights: Tensor) -> Self {
        let mask = Tensor::filled(weights.shape().to_vec(), 1.0);
        Self { weights, mask, granularity: Granularity::PerWeight }
    }

    pub(crate) fn from_parts(
        weights: Tensor,
        mask: Tensor,
        granularity: Granularity,
    ) -> Result<Self, NetError> {
        if weights.shape() != mask.shape() {
            return Err(NetError::BadSpec("mask shape differs from weights".into()));
        }
        if !mask.data().iter().all(|&m| m == 0.0 || m == 1.0) {
            return Err(NetError::BadSpec("mask entries must be exactly 0 or 1".into()));
        }
        let param = Self { weights, mask, granularity };
        if granularity == Granularity::PerOutputUnit && !param.unit_rows_constant() {
            return Err(NetError::BadSpec("per-unit mask varies within a unit slice".into()));
        }
        Ok(param)
    }

    fn unit_rows_constant(&self) -> bool {
        let size = self.unit_size();
        (0..self.unit_count()).all(|u| {
            let row = &self.mask.data()[u * size..(u + 1) * size];
            row.iter().all(|&m| m == row[0])
        })
    }

    pub fn weights(&self) -> &Tensor {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut Tensor {
        &mut self.weights
    }

    pub fn mask(&self) -> &Tensor {
        &self.mask
    }

    pub fn granularity(&self) -> Granularity {
        self.granularity
    }

    /// `weights * mask`, the tensor actually used in a forward pass.
    pub fn effective(&self) -> Tensor {
        ops::mul(&self.weights, &self.mask).expect("mask matches weight shape")
    }

    /// Output units in this tensor: dense rows or conv filters.
    pub fn unit_count(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn unit_size(&self) -> usize {
        self.weights.len() / self.unit_count()
    }

    pub fn total(&self) -> usize {
        self.weights.len()
    }

    pub fn kept(&self) -> usize {
        self.mask.data().iter().filter(|&&m| m == 1.0).count()
    }

    pub fn is_entry_masked(&self, flat: usize) -> bool {
        self.mask.data()[flat] == 0.0
    }

    pub fn is_unit_masked(&self, unit: usize) -> bool {
        let size = self.unit_size();
        self.mask.data()[unit * size] == 0.0
    }

    /// Masks individual weights. The parameter must not have been unit-masked.
    pub fn clear_entries(&mut self, flat_indices: &[usize]) {
        debug_assert_eq!(self.granularity, Granularity::PerWeight);
        for &i in flat_indices {
            self.mask.data_mut()[i] = 0.0;
            self.weights.data_mut()[i] = 0.0;
        }
    }

    /// Masks whole output units and tags the parameter as unit-granular.
    pub fn clear_units(&mut self, units: &[usize]) {
        self.granularity = Granularity::PerOutputUnit;
        let size = self.unit_size();
        for &u in units {
            for v in &mut self.mask.data_mut()[u * size..(u + 1) * size] {
                *v = 0.0;
            }
            for v in &mut self.weights.data_mut()[u * size..(u + 1) * size] {
                *v = 0.0;
            }
        }
    }

    /// Split borrow for the optimizer: mutable weights plus their mask.
    pub fn weights_and_mask_mut(&mut self) -> (&mut Tensor, &Tensor) {
        (&mut self.weights, &self.mask)
    }

    /// Zeroes gradient entries wherever the mask is zero.
    pub fn zero_masked_grad(&mut self) {
        let Some(grad) = self.weights.grad() else { return };
        let masked: Vec<f64> = grad
            .iter()
            .zip(self.mask.data())
            .map(|(&g, &m)| if m == 0.0 { 0.0 } else { g })
            .collect();
        self.weights.set_grad(masked);
    }
}

/// One parameterized layer: masked weights plus an unprunable bias.
#[derive(Debug, Clone)]
pub struct LayerParam {
    pub weight: MaskedParameter,
    pub bias: Tensor,
}

/// Result of a traced (gradient-recording) forward pass.
pub struct TracedNet {
    pub logits: NodeId,
    weight_leaves: Vec<NodeId>,
    bias_leaves: Vec<NodeId>,
}

/// A layer stack with masked parameters. Owns the architecture spec, the
/// parameters, and the seed it was initialized from.
#[derive(Debug, Clone)]
pub struct MaskedNetwork {
    spec: NetworkSpec,
    params: Vec<LayerParam>,
    init_seed: u64,
}

impl MaskedNetwork {
    /// Kaiming-uniform initialization (fan-in scaling), zero biases, all-ones
    /// masks. Fully determined by `(spec, seed)`.
    pub fn init(spec: &NetworkSpec, seed: u64) -> Result<Self, NetError> {
        Self::init_with_purpose(spec, seed, Purpose::Init)
    }

    /// Same as [`MaskedNetwork::init`] but on a caller-chosen stream, so a
    /// separately trained reference net never shares init draws.
    pub fn init_with_purpose(spec: &NetworkSpec, seed: u64, purpose: Purpose) -> Result<Self, NetError> {
        spec.validate()?;
        let mut rng = stream(purpose, seed, 0);
        let mut params = Vec::new();
        for layer in &spec.layers {
            let (shape, fan_in, fan_out) = match *layer {
                LayerSpec::Dense { fan_in, fan_out } => (vec![fan_out, fan_in], fan_in, fan_out),
                LayerSpec::Conv2d { in_channels, out_channels, kernel, .. } => (
                    vec![out_channels, in_channels, kernel, kernel],
                    in_channels * kernel * kernel,
                    out_channels,
                ),
                LayerSpec::Relu | LayerSpec::Flatten => continue,
            };
            let bound = (6.0 / fan_in as f64).sqrt();
            let data = (0..shape.iter().product::<usize>())
                .map(|_| rng.random_range(-bound..bound))
                .collect();
            let weights = Tensor::new(shape, data)?;
            params.push(LayerParam {
                weight: MaskedParameter::new_unmasked(weights),
                bias: Tensor::zeros(vec![fan_out]),
            });
        }
        Ok(Self { spec: spec.clone(), params, init_seed: seed })
    }

    pub(crate) fn from_parts(
        spec: NetworkSpec,
        params: Vec<LayerParam>,
        init_seed: u64,
    ) -> Result<Self, NetError> {
        spec.validate()?;
        let expected = spec
            .layers
            .iter()
            .filter(|l| matches!(l, LayerSpec::Dense { .. } | LayerSpec::Conv2d { .. }))
            .count();
        if params.len() != expected {
            return Err(NetError::BadSpec(format!(
                "expected {expected} parameterized layers, got {}",
                params.len()
            )));
        }
        Ok(Self { spec, params, init_seed })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn classes(&self) -> usize {
        self.spec.classes
    }

    pub fn init_seed(&self) -> u64 {
        self.init_seed
    }

    pub fn params(&self) -> &[LayerParam] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [LayerParam] {
        &mut self.params
    }

    /// Indices into `params` for each layer of the spec, `None` for
    /// parameter-free layers.
    pub fn param_index_by_layer(&self) -> Vec<Option<usize>> {
        let mut next = 0;
        self.spec
            .layers
            .iter()
            .map(|l| match l {
                LayerSpec::Dense { .. } | LayerSpec::Conv2d { .. } => {
                    let i = next;
                    next += 1;
                    Some(i)
                }
                _ => None,
            })
            .collect()
    }

    fn batchify(&self, batch: &Tensor) -> Result<(), NetError> {
        let want = &self.spec.input_shape;
        let got = batch.shape();
        if got.len() != want.len() + 1 || &got[1..] != want.as_slice() {
            return Err(NetError::BadSpec(format!(
                "batch shape {got:?} does not match input shape [n, {want:?}]"
            )));
        }
        Ok(())
    }

    /// Plain inference: logits of shape `[batch, classes]`, no graph recorded.
    pub fn forward(&self, batch: &Tensor) -> Result<Tensor, NetError> {
        self.batchify(batch)?;
        let mut x = batch.clone();
        let mut p = 0;
        for layer in &self.spec.layers {
            x = match *layer {
                LayerSpec::Dense { .. } => {
                    let lp = &self.params[p];
                    p += 1;
                    let wt = transpose2(&lp.weight.effective());
                    ops::add_bias(&ops::matmul(&x, &wt)?, &lp.bias)?
                }
                LayerSpec::Conv2d { padding, .. } => {
                    let lp = &self.params[p];
                    p += 1;
                    ops::add_bias(&ops::conv2d(&x, &lp.weight.effective(), padding.into())?, &lp.bias)?
                }
                LayerSpec::Relu => ops::relu(&x),
                LayerSpec::Flatten => ops::flatten(&x)?,
            };
        }
        Ok(x)
    }

    /// Softmax class probabilities for a batch.
    pub fn probabilities(&self, batch: &Tensor) -> Result<Tensor, NetError> {
        Ok(ops::softmax(&self.forward(batch)?)?)
    }

    /// The activation tensor entering each parameterized layer, in parameter
    /// order. This is what data-informed sensitivities sample.
    pub fn param_inputs(&self, batch: &Tensor) -> Result<Vec<Tensor>, NetError> {
        self.batchify(batch)?;
        let mut x = batch.clone();
        let mut seen = Vec::with_capacity(self.params.len());
        let mut p = 0;
        for layer in &self.spec.layers {
            x = match *layer {
                LayerSpec::Dense { .. } => {
                    seen.push(x.clone());
                    let lp = &self.params[p];
                    p += 1;
                    let wt = transpose2(&lp.weight.effective());
                    ops::add_bias(&ops::matmul(&x, &wt)?, &lp.bias)?
                }
                LayerSpec::Conv2d { padding, .. } => {
                    seen.push(x.clone());
                    let lp = &self.params[p];
                    p += 1;
                    ops::add_bias(&ops::conv2d(&x, &lp.weight.effective(), padding.into())?, &lp.bias)?
                }
                LayerSpec::Relu => ops::relu(&x),
                LayerSpec::Flatten => ops::flatten(&x)?,
            };
        }
        Ok(seen)
    }

    /// Records the forward pass on `graph` for a later backward sweep.
    pub fn trace(&self, graph: &mut Graph, batch: &Tensor) -> Result<TracedNet, NetError> {
        self.batchify(batch)?;
        let mut x = graph.leaf(batch.clone());
        let mut weight_leaves = Vec::with_capacity(self.params.len());
        let mut bias_leaves = Vec::with_capacity(self.params.len());
        let mut p = 0;
        for layer in &self.spec.layers {
            x = match *layer {
                LayerSpec::Dense { .. } => {
                    let lp = &self.params[p];
                    p += 1;
                    let w = graph.leaf(transpose2(&lp.weight.effective()));
                    let b = graph.leaf(lp.bias.clone());
                    weight_leaves.push(w);
                    bias_leaves.push(b);
                    let y = graph.matmul(x, w)?;
                    graph.add_bias(y, b)?
                }
                LayerSpec::Conv2d { padding, .. } => {
                    let lp = &self.params[p];
                    p += 1;
                    let w = graph.leaf(lp.weight.effective());
                    let b = graph.leaf(lp.bias.clone());
                    weight_leaves.push(w);
                    bias_leaves.push(b);
                    let y = graph.conv2d(x, w, padding.into())?;
                    graph.add_bias(y, b)?
                }
                LayerSpec::Relu => graph.relu(x)?,
                LayerSpec::Flatten => graph.flatten(x)?,
            };
        }
        Ok(TracedNet { logits: x, weight_leaves, bias_leaves })
    }

    /// Copies leaf gradients from a backward-swept graph into the parameter
    /// tensors, zeroing gradient entries of masked-out weights.
    pub fn harvest_grads(&mut self, graph: &Graph, traced: &TracedNet) {
        let mut p = 0;
        for layer in self.spec.layers.clone() {
            match layer {
                LayerSpec::Dense { fan_in, fan_out } => {
                    let grad_t = graph.grad(traced.weight_leaves[p]).expect("leaf grad");
                    let mut grad = vec![0.0; grad_t.len()];
                    for i in 0..fan_in {
                        for o in 0..fan_out {
                            grad[o * fan_in + i] = grad_t[i * fan_out + o];
                        }
                    }
                    self.params[p].weight.weights_mut().set_grad(grad);
                    let bgrad = graph.grad(traced.bias_leaves[p]).expect("leaf grad");
                    self.params[p].bias.set_grad(bgrad.to_vec());
                }
                LayerSpec::Conv2d { .. } => {
                    let grad = graph.grad(traced.weight_leaves[p]).expect("leaf grad");
                    self.params[p].weight.weights_mut().set_grad(grad.to_vec());
                    let bgrad = graph.grad(traced.bias_leaves[p]).expect("leaf grad");
                    self.params[p].bias.set_grad(bgrad.to_vec());
                }
                _ => continue,
            }
            self.params[p].weight.zero_masked_grad();
            p += 1;
        }
    }

    /// Fraction of correct argmax predictions; ties resolve to the lowest
    /// class index.
    pub fn accuracy(&self, inputs: &Tensor, labels: &[usize]) -> Result<f64, NetError> {
        if labels.is_empty() {
            return Err(NetError::EmptyDataset);
        }
        let classes = self.classes();
        for &l in labels {
            if l >= classes {
                return Err(NetError::LabelOutOfRange { label: l, classes });
            }
        }
        let logits = self.forward(inputs)?;
        let mut correct = 0usize;
        for (i, &label) in labels.iter().enumerate() {
            if argmax(logits.row(i)) == label {
                correct += 1;
            }
        }
        Ok(correct as f64 / labels.len() as f64)
    }

    /// Prunable parameter count: every weight entry, biases excluded.
    pub fn prunable_total(&self) -> usize {
        self.params.iter().map(|p| p.weight.total()).sum()
    }

    pub fn prunable_kept(&self) -> usize {
        self.params.iter().map(|p| p.weight.kept()).sum()
    }

    /// `1 - kept / total` over prunable weights.
    pub fn prune_ratio(&self) -> f64 {
        1.0 - self.prunable_kept() as f64 / self.prunable_total() as f64
    }

    /// Multiply-accumulate count under the current masks. Unit-masked
    /// outputs also remove the fan-in they would have fed in the next layer.
    fn mac_count(&self, masked: bool) -> u64 {
        let mut shape = self.spec.input_shape.clone();
        // alive[f] = false when the feature comes from a structurally masked unit
        let mut alive: Vec<bool> = vec![true; shape.iter().product()];
        let mut macs = 0u64;
        let mut p = 0;
        for layer in &self.spec.layers {
            match *layer {
                LayerSpec::Dense { fan_in, fan_out } => {
                    let lp = &self.params[p];
                    p += 1;
                    let mask = lp.weight.mask().data();
                    for o in 0..fan_out {
                        for i in 0..fan_in {
                            if alive[i] && (!masked || mask[o * fan_in + i] == 1.0) {
                                macs += 1;
                            }
                        }
                    }
                    alive = if masked && lp.weight.granularity() == Granularity::PerOutputUnit {
                        (0..fan_out).map(|o| !lp.weight.is_unit_masked(o)).collect()
                    } else {
                        vec![true; fan_out]
                    };
                    shape = vec![fan_out];
                }
                LayerSpec::Conv2d { in_channels, out_channels, kernel, padding } => {
                    let lp = &self.params[p];
                    p += 1;
                    let (h, w) = (shape[1], shape[2]);
                    let oh = ops::conv_out_size(h, kernel, padding.into());
                    let ow = ops::conv_out_size(w, kernel, padding.into());
                    let positions = (oh * ow) as u64;
                    let mask = lp.weight.mask().data();
                    let ksq = kernel * kernel;
                    for o in 0..out_channels {
                        for ic in 0..in_channels {
                            if !alive[ic] {
                                continue;
                            }
                            for t in 0..ksq {
                                if !masked || mask[(o * in_channels + ic) * ksq + t] == 1.0 {
                                    macs += positions;
                                }
                            }
                        }
                    }
                    alive = if masked && lp.weight.granularity() == Granularity::PerOutputUnit {
                        (0..out_channels).map(|o| !lp.weight.is_unit_masked(o)).collect()
                    } else {
                        vec![true; out_channels]
                    };
                    shape = vec![out_channels, oh, ow];
                }
                LayerSpec::Relu => {}
                LayerSpec::Flatten => {
                    if shape.len() == 3 {
                        let plane = shape[1] * shape[2];
                        alive = alive
                            .iter()
                            .flat_map(|&a| std::iter::repeat_n(a, plane))
                            .collect();
                    }
                    shape = vec![shape.iter().product()];
                }
            }
        }
        macs
    }

    /// `1 - macs(masked) / macs(unmasked)`.
    pub fn flop_reduction(&self) -> f64 {
        let base = self.mac_count(false);
        let now = self.mac_count(true);
        1.0 - now as f64 / base as f64
    }

    /// Sets every masked weight entry to exactly zero.
    pub fn zero_masked_weights(&mut self) {
        for lp in &mut self.params {
            let mask: Vec<f64> = lp.weight.mask().data().to_vec();
            for (w, m) in lp.weight.weights_mut().data_mut().iter_mut().zip(&mask) {
                if *m == 0.0 {
                    *w = 0.0;
                }
            }
        }
    }
}

pub(crate) fn transpose2(t: &Tensor) -> Tensor {
    debug_assert_eq!(t.rank(), 2);
    let (r, c) = (t.shape()[0], t.shape()[1]);
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = t.data()[i * c + j];
        }
    }
    Tensor::new(vec![c, r], out).expect("transpose preserves values")
}

/// First index of the maximum value.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}
