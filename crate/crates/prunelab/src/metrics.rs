//! Functional-distance metrics: greedy backward selection of informative
//! input features, cross-model confidence on masked inputs, and Monte-Carlo
//! noise-similarity statistics between two networks.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{inject_uniform_noise, DataError};
use crate::net::{argmax, MaskedNetwork, NetError};
use crate::rng::{stream, Purpose};
use crate::tensor::Tensor;

/// Default noise grid, in normalized input units.
pub const DEFAULT_EPS_GRID: [f64; 5] = [0.0, 0.05, 0.1, 0.2, 0.4];

/// Quadratic forward-pass cost caps the feature count.
pub const MAX_BACKSELECT_FEATURES: usize = 256;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("backward selection supports up to {max} features, got {got}")]
    TooManyFeatures { got: usize, max: usize },
    #[error("input has {input} features but the mask has {mask}")]
    MaskMismatch { input: usize, mask: usize },
    #[error("sample length {got} does not match the network input ({want})")]
    SampleMismatch { got: usize, want: usize },
    #[error("metric over an empty sample")]
    EmptySample,
    #[error("need at least one repetition")]
    NoRepetitions,
    #[error("class {class} out of range for {classes} classes")]
    BadClass { class: usize, classes: usize },
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Data(#[from] DataError),
}

fn sample_tensor(net: &MaskedNetwork, sample: &[f64]) -> Result<Tensor, MetricsError> {
    let want: usize = net.spec().input_shape.iter().product();
    if sample.len() != want {
        return Err(MetricsError::SampleMismatch { got: sample.len(), want });
    }
    let mut shape = vec![1];
    shape.extend_from_slice(&net.spec().input_shape);
    Ok(Tensor::new(shape, sample.to_vec()).expect("sample is finite"))
}

/// The class the network predicts for one unmasked sample.
pub fn predicted_class(net: &MaskedNetwork, sample: &[f64]) -> Result<usize, MetricsError> {
    let logits = net.forward(&sample_tensor(net, sample)?)?;
    Ok(argmax(logits.row(0)))
}

/// Greedy backward selection: repeatedly masks (sets to zero) the feature
/// whose removal reduces the softmax confidence toward `class` the least.
/// Returns the masking order, first-masked = least informative; the result
/// is a permutation of all feature indices. Each step evaluates every
/// remaining candidate in one batched forward pass.
pub fn back_select(
    net: &MaskedNetwork,
    sample: &[f64],
    class: usize,
) -> Result<Vec<usize>, MetricsError> {
    let n = sample.len();
    if n > MAX_BACKSELECT_FEATURES {
        return Err(MetricsError::TooManyFeatures { got: n, max: MAX_BACKSELECT_FEATURES });
    }
    if class >= net.classes() {
        return Err(MetricsError::BadClass { class, classes: net.classes() });
    }
    sample_tensor(net, sample)?;

    let mut current = sample.to_vec();
    let mut remaining: Vec<usize> = (0..n).collect();
    let mut order = Vec::with_capacity(n);
    while !remaining.is_empty() {
        let rows = remaining.len();
        let mut batch = Vec::with_capacity(rows * n);
        for &candidate in &remaining {
            let from = batch.len();
            batch.extend_from_slice(&current);
            batch[from + candidate] = 0.0;
        }
        let mut shape = vec![rows];
        shape.extend_from_slice(&net.spec().input_shape);
        let probs = net
            .probabilities(&Tensor::new(shape, batch).expect("candidates are finite"))?;
        let mut best = 0;
        for i in 1..rows {
            if probs.row(i)[class] > probs.row(best)[class] {
                best = i;
            }
        }
        let feature = remaining.remove(best);
        current[feature] = 0.0;
        order.push(feature);
    }
    Ok(order)
}

/// Binary input mask kept from a backward-selection ordering at a sparsity
/// budget, plus where it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMask {
    pub mask: Vec<f64>,
    pub sparsity: f64,
    pub kept: usize,
    pub source_model: String,
    pub source_input: usize,
    pub predicted_class: usize,
}

/// Keeps the `ceil((1 - sparsity) * n)` most informative features, i.e. the
/// last-masked ones in the ordering.
pub fn make_feature_mask(
    ordering: &[usize],
    sparsity: f64,
    source_model: &str,
    source_input: usize,
    predicted_class: usize,
) -> FeatureMask {
    let n = ordering.len();
    let kept = ((1.0 - sparsity.clamp(0.0, 1.0)) * n as f64).ceil() as usize;
    let mut mask = vec![0.0; n];
    for &feature in &ordering[n - kept..] {
        mask[feature] = 1.0;
    }
    FeatureMask {
        mask,
        sparsity,
        kept,
        source_model: source_model.to_string(),
        source_input,
        predicted_class,
    }
}

/// Softmax probability of `true_class` when `net` sees `mask * x`.
pub fn cross_confidence(
    net: &MaskedNetwork,
    mask: &FeatureMask,
    sample: &[f64],
    true_class: usize,
) -> Result<f64, MetricsError> {
    if mask.mask.len() != sample.len() {
        return Err(MetricsError::MaskMismatch { input: sample.len(), mask: mask.mask.len() });
    }
    if true_class >= net.classes() {
        return Err(MetricsError::BadClass { class: true_class, classes: net.classes() });
    }
    let masked: Vec<f64> = sample.iter().zip(&mask.mask).map(|(&v, &m)| v * m).collect();
    let probs = net.probabilities(&sample_tensor(net, &masked)?)?;
    Ok(probs.row(0)[true_class])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityRow {
    pub eps: f64,
    pub match_fraction: f64,
    pub match_std: f64,
    pub l2_diff: f64,
    pub l2_std: f64,
    pub draws: usize,
}

/// Per-noise-level agreement of two networks: matching-argmax fraction plus
/// the mean L2 difference of softmax outputs, with standard deviations over
/// all `(sample, repetition)` draws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityReport {
    pub rows: Vec<SimilarityRow>,
    pub samples: usize,
    pub repetitions: usize,
}

/// Monte-Carlo noise similarity. Deterministic given `seed`; noise draws do
/// not depend on the networks, so the metric is symmetric in `(a, b)`.
/// At `eps == 0` the repetitions collapse to a single clean evaluation.
pub fn noise_similarity(
    net_a: &MaskedNetwork,
    net_b: &MaskedNetwork,
    inputs: &Tensor,
    eps_grid: &[f64],
    repetitions: usize,
    seed: u64,
) -> Result<SimilarityReport, MetricsError> {
    let samples = inputs.shape()[0];
    if samples == 0 {
        return Err(MetricsError::EmptySample);
    }
    if repetitions == 0 {
        return Err(MetricsError::NoRepetitions);
    }
    let mut rows = Vec::with_capacity(eps_grid.len());
    for (e, &eps) in eps_grid.iter().enumerate() {
        let reps = if eps == 0.0 { 1 } else { repetitions };
        let mut matches = Vec::with_capacity(samples * reps);
        let mut l2s = Vec::with_capacity(samples * reps);
        for rep in 0..reps {
            let mut rng = stream(Purpose::Noise, seed, (e as u64) << 32 | rep as u64);
            let noisy = inject_uniform_noise(inputs, eps, &mut rng)?;
            let pa = net_a.probabilities(&noisy)?;
            let pb = net_b.probabilities(&noisy)?;
            for i in 0..samples {
                let (ra, rb) = (pa.row(i), pb.row(i));
                matches.push(if argmax(ra) == argmax(rb) { 1.0 } else { 0.0 });
                let l2 = ra
                    .iter()
                    .zip(rb)
                    .map(|(&x, &y)| (x - y) * (x - y))
                    .sum::<f64>()
                    .sqrt();
                l2s.push(l2);
            }
        }
        rows.push(SimilarityRow {
            eps,
            match_fraction: crate::eval::mean(&matches),
            match_std: crate::eval::sample_std(&matches),
            l2_diff: crate::eval::mean(&l2s),
            l2_std: crate::eval::sample_std(&l2s),
            draws: matches.len(),
        });
    }
    Ok(SimilarityReport { rows, samples, repetitions })
}
