//! Synthetic labeled datasets, corruption transforms, and distribution
//! specifications (train distribution vs held-out test distribution).
//!
//! Inputs are normalized to zero mean and unit variance per feature over the
//! train split; corruptions act in that normalized space.

mod corrupt;
mod io;

pub use corrupt::{Corruption, CorruptionKind};
pub use io::DATASET_MAGIC;

use std::ops::Range;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::RngExt;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{normal, stream, Purpose};
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("need at least 2 classes, got {0}")]
    InvalidClassCount(usize),
    #[error("need at least {need} samples for {classes} classes, got {n}")]
    TooFewSamples { need: usize, classes: usize, n: usize },
    #[error("{kind:?} cannot apply to inputs of shape {shape:?}")]
    UnsupportedCorruption { kind: CorruptionKind, shape: Vec<usize> },
    #[error("severity must be in 1..=5, got {0}")]
    BadSeverity(u8),
    #[error("train and test distributions share corruption kind {0:?}")]
    OverlappingCorruptions(CorruptionKind),
    #[error("negative noise bound {0}")]
    NegativeNoise(f64),
    #[error("dataset file: {0}")]
    Io(#[from] std::io::Error),
    #[error("dataset file: bad magic")]
    BadMagic,
    #[error("dataset file: unsupported version {0}")]
    UnsupportedVersion(u32),
    #[error("dataset file truncated")]
    Truncated,
    #[error("dataset file corrupt: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Generator family for [`make_synthetic`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SyntheticKind {
    /// Well-separated Gaussian blobs in `dim` dimensions; `separation` is the
    /// center distance in units of the within-cluster standard deviation.
    GaussianClusters { dim: usize, separation: f64 },
    /// 2-D rings of increasing radius, one per class.
    ConcentricRings,
    /// 1x8x8 sinusoidal gratings where the class is the texture frequency,
    /// so pixel-space corruptions are meaningful.
    TexturedPatches8x8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    #[serde(flatten)]
    pub kind: SyntheticKind,
    pub n: usize,
    pub classes: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Splits {
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
}

/// Per-feature affine normalization fitted on the train split.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// A labeled, normalized, split dataset, reproducible from its spec alone.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    spec: DatasetSpec,
    feature_shape: Vec<usize>,
    inputs: Tensor,
    labels: Vec<usize>,
    splits: Splits,
    norm: Normalization,
}

impl Dataset {
    pub fn spec(&self) -> &DatasetSpec {
        &self.spec
    }

    /// Per-sample input shape, for example `[1, 8, 8]`.
    pub fn feature_shape(&self) -> &[usize] {
        &self.feature_shape
    }

    pub fn features(&self) -> usize {
        self.feature_shape.iter().product()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.spec.classes
    }

    pub fn splits(&self) -> &Splits {
        &self.splits
    }

    pub fn norm(&self) -> &Normalization {
        &self.norm
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let f = self.features();
        &self.inputs.data()[i * f..(i + 1) * f]
    }

    pub fn split_range(&self, split: Split) -> Range<usize> {
        match split {
            Split::Train => self.splits.train.clone(),
            Split::Val => self.splits.val.clone(),
            Split::Test => self.splits.test.clone(),
        }
    }

    fn batch_shape(&self, n: usize) -> Vec<usize> {
        let mut shape = vec![n];
        shape.extend_from_slice(&self.feature_shape);
        shape
    }

    /// Copies the given rows into a batch tensor plus their labels.
    pub fn batch(&self, rows: &[usize]) -> (Tensor, Vec<usize>) {
        let f = self.features();
        let mut data = Vec::with_capacity(rows.len() * f);
        let mut labels = Vec::with_capacity(rows.len());
        for &r in rows {
            data.extend_from_slice(self.row(r));
            labels.push(self.labels[r]);
        }
        let t = Tensor::new(self.batch_shape(rows.len()), data).expect("rows are finite");
        (t, labels)
    }

    /// A whole split as one batch.
    pub fn split_batch(&self, split: Split) -> (Tensor, Vec<usize>) {
        let rows: Vec<usize> = self.split_range(split).collect();
        self.batch(&rows)
    }

    /// The first `count` rows of a split (the split order is already a
    /// seeded shuffle of the generator output).
    pub fn head(&self, split: Split, count: usize) -> (Tensor, Vec<usize>) {
        let rows: Vec<usize> = self.split_range(split).take(count).collect();
        self.batch(&rows)
    }

    /// One-hot targets for a label slice.
    pub fn one_hot(labels: &[usize], classes: usize) -> Tensor {
        let mut data = vec![0.0; labels.len() * classes];
        for (i, &l) in labels.iter().enumerate() {
            data[i * classes + l] = 1.0;
        }
        Tensor::new(vec![labels.len(), classes], data).expect("one-hot is finite")
    }
}

/// Builds a reproducible dataset: generate, shuffle, split 60/15/25, then
/// normalize with train-split statistics.
pub fn make_synthetic(spec: &DatasetSpec) -> Result<Dataset, DataError> {
    if spec.classes < 2 {
        return Err(DataError::InvalidClassCount(spec.classes));
    }
    let need = 10 * spec.classes;
    if spec.n < need {
        return Err(DataError::TooFewSamples { need, classes: spec.classes, n: spec.n });
    }
    let mut rng = stream(Purpose::DataGen, spec.seed, 0);
    let feature_shape = match spec.kind {
        SyntheticKind::GaussianClusters { dim, .. } => vec![dim],
        SyntheticKind::ConcentricRings => vec![2],
        SyntheticKind::TexturedPatches8x8 => vec![1, 8, 8],
    };
    let features: usize = feature_shape.iter().product();

    let mut raw = vec![0.0; spec.n * features];
    let mut labels: Vec<usize> = (0..spec.n).map(|i| i % spec.classes).collect();
    labels.shuffle(&mut rng);
    for (i, &label) in labels.iter().enumerate() {
        let row = &mut raw[i * features..(i + 1) * features];
        generate_sample(spec.kind, label, spec.classes, row, &mut rng);
    }

    let n_train = (spec.n * 60) / 100;
    let n_val = ((spec.n * 15) / 100).max(1);
    let n_test = spec.n - n_train - n_val;
    let splits = Splits {
        train: 0..n_train,
        val: n_train..n_train + n_val,
        test: n_train + n_val..spec.n,
    };
    debug_assert!(n_test >= 1);

    // train-split statistics, applied to every split
    let mut mean = vec![0.0; features];
    for i in splits.train.clone() {
        for f in 0..features {
            mean[f] += raw[i * features + f];
        }
    }
    for m in &mut mean {
        *m /= n_train as f64;
    }
    let mut std = vec![0.0; features];
    for i in splits.train.clone() {
        for f in 0..features {
            let d = raw[i * features + f] - mean[f];
            std[f] += d * d;
        }
    }
    for s in &mut std {
        *s = (*s / n_train as f64).sqrt();
        if *s < 1e-8 {
            *s = 1.0;
        }
    }
    for i in 0..spec.n {
        for f in 0..features {
            raw[i * features + f] = (raw[i * features + f] - mean[f]) / std[f];
        }
    }

    let mut shape = vec![spec.n];
    shape.extend_from_slice(&feature_shape);
    Ok(Dataset {
        spec: spec.clone(),
        feature_shape,
        inputs: Tensor::new(shape, raw)?,
        labels,
        splits,
        norm: Normalization { mean, std },
    })
}

/// Per-pixel noise of the textured patches, tuned so the grating task is
/// learnable but capacity-bound: a fresh desk-scale net lands at a few
/// percent test error rather than zero.
const TEXTURE_PIXEL_NOISE: f64 = 0.45;

fn generate_sample(
    kind: SyntheticKind,
    label: usize,
    classes: usize,
    row: &mut [f64],
    rng: &mut ChaCha8Rng,
) {
    match kind {
        SyntheticKind::GaussianClusters { dim, separation } => {
            // centers on coordinate axes, cycling with growing magnitude
            let axis = label % dim;
            let scale = separation * (1.0 + (label / dim) as f64);
            for (f, v) in row.iter_mut().enumerate() {
                let center = if f == axis { scale } else { 0.0 };
                *v = center + normal(rng);
            }
        }
        SyntheticKind::ConcentricRings => {
            let radius = 1.0 + 2.0 * label as f64 + 0.2 * normal(rng);
            let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            row[0] = radius * angle.cos();
            row[1] = radius * angle.sin();
        }
        SyntheticKind::TexturedPatches8x8 => {
            let _ = classes;
            let freq = (label + 1) as f64;
            let theta: f64 = rng.random_range(0.0..std::f64::consts::PI);
            let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let (ct, st) = (theta.cos(), theta.sin());
            for y in 0..8 {
                for x in 0..8 {
                    let u = (x as f64 * ct + y as f64 * st) / 8.0;
                    row[y * 8 + x] = (std::f64::consts::TAU * freq * u + phase).sin()
                        + TEXTURE_PIXEL_NOISE * normal(rng);
                }
            }
        }
    }
}

/// `x + u` with `u` i.i.d. uniform in `[-eps, eps]` per element.
pub fn inject_uniform_noise(x: &Tensor, eps: f64, rng: &mut ChaCha8Rng) -> Result<Tensor, DataError> {
    if eps < 0.0 || !eps.is_finite() {
        return Err(DataError::NegativeNoise(eps));
    }
    if eps == 0.0 {
        return Ok(x.clone());
    }
    let data = x.data().iter().map(|&v| v + rng.random_range(-eps..=eps)).collect();
    Ok(Tensor::new(x.shape().to_vec(), data)?)
}

/// Distribution role: what the network trains on vs what stays held out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistRole {
    TrainDist,
    TestDist,
}

/// A labeled data source plus corruption transforms. The train distribution
/// includes the uncorrupted data as one of its elements, mirroring the
/// uniform augmentation mix; the test distribution is its corruptions alone
/// (or nominal data when empty).
#[derive(Debug, Clone)]
pub struct DistributionSpec {
    base: Arc<Dataset>,
    role: DistRole,
    corruptions: Vec<Corruption>,
}

impl DistributionSpec {
    pub fn new(base: Arc<Dataset>, role: DistRole, corruptions: Vec<Corruption>) -> Self {
        Self { base, role, corruptions }
    }

    /// Builds the train/test pair, rejecting any shared corruption kind when
    /// both sets are nonempty.
    pub fn train_test_pair(
        base: Arc<Dataset>,
        train: Vec<Corruption>,
        test: Vec<Corruption>,
    ) -> Result<(Self, Self), DataError> {
        if !train.is_empty() && !test.is_empty() {
            for t in &train {
                if test.iter().any(|h| h.kind == t.kind) {
                    return Err(DataError::OverlappingCorruptions(t.kind));
                }
            }
        }
        Ok((
            Self::new(Arc::clone(&base), DistRole::TrainDist, train),
            Self::new(base, DistRole::TestDist, test),
        ))
    }

    pub fn base(&self) -> &Dataset {
        &self.base
    }

    pub fn base_arc(&self) -> Arc<Dataset> {
        Arc::clone(&self.base)
    }

    pub fn role(&self) -> DistRole {
        self.role
    }

    pub fn corruptions(&self) -> &[Corruption] {
        &self.corruptions
    }

    /// The elements an expectation over this distribution averages across.
    /// `None` stands for the uncorrupted data.
    pub fn elements(&self) -> Vec<Option<&Corruption>> {
        match self.role {
            DistRole::TrainDist => {
                let mut out: Vec<Option<&Corruption>> = vec![None];
                out.extend(self.corruptions.iter().map(Some));
                out
            }
            DistRole::TestDist => {
                if self.corruptions.is_empty() {
                    vec![None]
                } else {
                    self.corruptions.iter().map(Some).collect()
                }
            }
        }
    }
}

/// Per-sample uniform choice among `k` corruptions plus identity, each with
/// probability `1 / (k + 1)`. Draws come only from `rng`, so a fixed stream
/// reproduces the exact augmented batch.
pub fn mix_augment(
    batch: &Tensor,
    corruptions: &[Corruption],
    rng: &mut ChaCha8Rng,
) -> Result<Tensor, DataError> {
    if corruptions.is_empty() {
        return Ok(batch.clone());
    }
    let n = batch.shape()[0];
    let feature_shape = &batch.shape()[1..];
    let f: usize = feature_shape.iter().product();
    let mut out = batch.data().to_vec();
    for i in 0..n {
        let choice = rng.random_range(0..=corruptions.len());
        if choice == 0 {
            continue;
        }
        let mut sample_rng = stream(Purpose::CorruptionChoice, rng.random::<u64>(), 0);
        let row = &mut out[i * f..(i + 1) * f];
        corruptions[choice - 1].apply_sample(row, feature_shape, &mut sample_rng)?;
    }
    Ok(Tensor::new(batch.shape().to_vec(), out)?)
}
