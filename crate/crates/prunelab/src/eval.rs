//! Evaluation methodology: prune-accuracy curves, prune potential under a
//! margin, excess error under distribution shift, and the through-origin
//! regression with bootstrap confidence intervals.

use rand::RngExt;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Corruption, DataError, Dataset, DistributionSpec, Split};
use crate::net::{MaskedNetwork, NetError};
use crate::rng::{stream, Purpose};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("curve needs a prune-ratio-0 reference entry")]
    MissingReference,
    #[error("curves disagree on tested ratios across seeds")]
    MisalignedRatios,
    #[error("regression needs at least 2 distinct nonzero ratios")]
    TooFewPoints,
    #[error("regression saw only zero ratios")]
    AllRatiosZero,
    #[error("bootstrap needs at least 100 resamples, got {0}")]
    TooFewResamples(usize),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Indicator-loss error of `net` on one distribution element: the chosen
/// split, optionally corrupted. Corruption draws are keyed by the dataset
/// seed, so every network sees the same corrupted data.
pub fn element_error(
    net: &MaskedNetwork,
    base: &Dataset,
    corruption: Option<&Corruption>,
    split: Split,
) -> Result<f64, EvalError> {
    let (mut inputs, labels) = base.split_batch(split);
    if let Some(c) = corruption {
        inputs = c.apply(&inputs, base.spec().seed, 0)?;
    }
    Ok(1.0 - net.accuracy(&inputs, &labels)?)
}

/// Mean element error over a distribution's elements.
pub fn distribution_error(
    net: &MaskedNetwork,
    dist: &DistributionSpec,
    split: Split,
) -> Result<f64, EvalError> {
    let elements = dist.elements();
    let mut total = 0.0;
    for corruption in &elements {
        total += element_error(net, dist.base(), *corruption, split)?;
    }
    Ok(total / elements.len() as f64)
}

/// Checkpoints of one seeded pipeline run, as `(prune ratio, net)` pairs in
/// cycle order.
pub struct CurveInput<'a> {
    pub seed: u64,
    pub nets: Vec<(f64, &'a MaskedNetwork)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub ratio: f64,
    /// Per-seed test error, aligned with the curve's seed list.
    pub errors: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

/// Test error across prune ratios on one distribution element, aggregated
/// over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneAccuracyCurve {
    pub method: String,
    pub distribution: String,
    pub seeds: Vec<u64>,
    pub points: Vec<CurvePoint>,
}

/// Sample standard deviation; zero for fewer than two values.
pub fn sample_std(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Evaluates every checkpoint on one distribution element and aggregates
/// over seeds. Ratios must be strictly increasing, start at 0, and agree
/// across seeds.
pub fn prune_accuracy_curve(
    method: &str,
    element: Option<&Corruption>,
    inputs: &[CurveInput<'_>],
    base: &Dataset,
    split: Split,
) -> Result<PruneAccuracyCurve, EvalError> {
    let first = inputs.first().ok_or(EvalError::MissingReference)?;
    let ratios: Vec<f64> = first.nets.iter().map(|&(r, _)| r).collect();
    if ratios.first().copied() != Some(0.0) {
        return Err(EvalError::MissingReference);
    }
    if !ratios.windows(2).all(|w| w[0] < w[1]) {
        return Err(EvalError::MisalignedRatios);
    }
    for input in inputs {
        if input.nets.len() != ratios.len()
            || input.nets.iter().zip(&ratios).any(|(&(r, _), &r0)| (r - r0).abs() > 1e-12)
        {
            return Err(EvalError::MisalignedRatios);
        }
    }

    let mut points: Vec<CurvePoint> = ratios
        .iter()
        .map(|&ratio| CurvePoint { ratio, errors: Vec::new(), mean: 0.0, std: 0.0 })
        .collect();
    for input in inputs {
        for (k, &(_, net)) in input.nets.iter().enumerate() {
            points[k].errors.push(element_error(net, base, element, split)?);
        }
    }
    for p in &mut points {
        p.mean = mean(&p.errors);
        p.std = sample_std(&p.errors);
    }
    Ok(PruneAccuracyCurve {
        method: method.to_string(),
        distribution: element.map_or_else(|| "nominal".to_string(), |c| c.label()),
        seeds: inputs.iter().map(|i| i.seed).collect(),
        points,
    })
}

/// Prune potential extracted from one curve at margin `delta`: per seed, the
/// maximal tested ratio whose error stays within `delta` of that seed's own
/// unpruned reference. Always one of the tested ratios.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrunePotentialReport {
    pub method: String,
    pub distribution: String,
    pub delta: f64,
    pub per_seed: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

pub fn prune_potential(curve: &PruneAccuracyCurve, delta: f64) -> PrunePotentialReport {
    let n_seeds = curve.seeds.len();
    let mut per_seed = Vec::with_capacity(n_seeds);
    for s in 0..n_seeds {
        let reference = curve.points[0].errors[s];
        let p = curve
            .points
            .iter()
            .filter(|point| point.errors[s] - reference <= delta + 1e-12)
            .map(|point| point.ratio)
            .fold(0.0, f64::max);
        per_seed.push(p);
    }
    PrunePotentialReport {
        method: curve.method.clone(),
        distribution: curve.distribution.clone(),
        delta,
        mean: mean(&per_seed),
        std: sample_std(&per_seed),
        per_seed,
    }
}

/// Potential across a margin grid; non-decreasing in `delta`.
pub fn delta_sweep(curve: &PruneAccuracyCurve, deltas: &[f64]) -> Vec<PrunePotentialReport> {
    deltas.iter().map(|&d| prune_potential(curve, d)).collect()
}

/// Excess error of one network: its error on the test distribution minus
/// its error on the train distribution.
pub fn excess_error(
    net: &MaskedNetwork,
    train_dist: &DistributionSpec,
    test_dist: &DistributionSpec,
    split: Split,
) -> Result<f64, EvalError> {
    Ok(distribution_error(net, test_dist, split)? - distribution_error(net, train_dist, split)?)
}

/// One `(ratio, excess-error difference)` observation from one seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExcessPoint {
    pub seed: u64,
    pub ratio: f64,
    pub diff: f64,
}

/// Difference in excess error between each pruned checkpoint and its own
/// seed's unpruned parent; exactly zero at ratio 0 by construction.
pub fn excess_curve(
    inputs: &[CurveInput<'_>],
    train_dist: &DistributionSpec,
    test_dist: &DistributionSpec,
    split: Split,
) -> Result<Vec<ExcessPoint>, EvalError> {
    let mut out = Vec::new();
    for input in inputs {
        let Some(&(first_ratio, parent)) = input.nets.first() else {
            return Err(EvalError::MissingReference);
        };
        if first_ratio != 0.0 {
            return Err(EvalError::MissingReference);
        }
        let parent_excess = excess_error(parent, train_dist, test_dist, split)?;
        for &(ratio, net) in &input.nets {
            let diff = if ratio == 0.0 {
                0.0
            } else {
                excess_error(net, train_dist, test_dist, split)? - parent_excess
            };
            out.push(ExcessPoint { seed: input.seed, ratio, diff });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionReport {
    pub slope: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub resamples: usize,
}

fn slope_through_origin(points: &[(f64, f64)]) -> f64 {
    let xy: f64 = points.iter().map(|&(x, y)| x * y).sum();
    let x2: f64 = points.iter().map(|&(x, _)| x * x).sum();
    xy / x2
}

/// Least squares through the origin with a seeded percentile bootstrap for
/// the 95% confidence interval. Ratio-0 points carry no information for a
/// through-origin fit and are dropped up front.
pub fn excess_regression(
    points: &[(f64, f64)],
    resamples: usize,
    seed: u64,
) -> Result<RegressionReport, EvalError> {
    if resamples < 100 {
        return Err(EvalError::TooFewResamples(resamples));
    }
    let nonzero: Vec<(f64, f64)> = points.iter().copied().filter(|&(x, _)| x != 0.0).collect();
    if nonzero.is_empty() {
        return Err(EvalError::AllRatiosZero);
    }
    let mut distinct: Vec<f64> = nonzero.iter().map(|&(x, _)| x).collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup_by(|a, b| (*a - *b).abs() < 1e-15);
    if distinct.len() < 2 {
        return Err(EvalError::TooFewPoints);
    }

    let slope = slope_through_origin(&nonzero);
    let mut rng = stream(Purpose::Bootstrap, seed, 0);
    let mut slopes = Vec::with_capacity(resamples);
    let mut resample = Vec::with_capacity(nonzero.len());
    for _ in 0..resamples {
        resample.clear();
        for _ in 0..nonzero.len() {
            resample.push(nonzero[rng.random_range(0..nonzero.len())]);
        }
        slopes.push(slope_through_origin(&resample));
    }
    slopes.sort_by(f64::total_cmp);
    let lo_idx = ((resamples as f64) * 0.025).floor() as usize;
    let hi_idx = ((resamples as f64) * 0.975).ceil() as usize - 1;
    Ok(RegressionReport { slope, ci_lo: slopes[lo_idx], ci_hi: slopes[hi_idx], resamples })
}
