//! Sensitivity-based pruning: the four criteria, per-layer budget
//! allocation, mask construction, and the iterative prune-retrain pipeline.

mod pipeline;
mod train;

pub use pipeline::{prune_retrain, prune_retrain_from, EvalRecord, PruneRun, PruneSchedule};
pub use train::{train, TrainContext, TrainHyper, TrainStats};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::DataError;
use crate::net::{Granularity, MaskedNetwork, NetError};
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Error)]
pub enum PruneError {
    #[error("criterion {0:?} needs a sample set")]
    NeedsSamples(Criterion),
    #[error("sample set is empty")]
    EmptySampleSet,
    #[error("prune ratio must lie in (0, 1), got {0}")]
    InvalidRatio(f64),
    #[error("sensitivity map does not line up with the network: {0}")]
    MapMismatch(String),
    #[error("training diverged (non-finite loss) at cycle {cycle}, epoch {epoch}")]
    Diverged { cycle: usize, epoch: usize },
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Eval(#[from] crate::eval::EvalError),
}

/// The four pruning criteria. Weight criteria rank individual weights
/// globally; filter criteria rank whole output units within each layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Criterion {
    /// Weight magnitude `|w|`.
    Wt,
    /// Weight saliency `mean |w * a(x)|` over a sample batch.
    Sipp,
    /// Unit L1 norm `||W_unit||_1`.
    Ft,
    /// Max downstream saliency `max ||W_next a(x)||_inf` over a sample batch.
    Pfp,
}

impl Criterion {
    pub const ALL: [Criterion; 4] = [Criterion::Wt, Criterion::Sipp, Criterion::Ft, Criterion::Pfp];

    pub fn name(self) -> &'static str {
        match self {
            Criterion::Wt => "wt",
            Criterion::Sipp => "sipp",
            Criterion::Ft => "ft",
            Criterion::Pfp => "pfp",
        }
    }

    pub fn data_informed(self) -> bool {
        matches!(self, Criterion::Sipp | Criterion::Pfp)
    }

    pub fn structured(self) -> bool {
        matches!(self, Criterion::Ft | Criterion::Pfp)
    }

    pub fn granularity(self) -> Granularity {
        if self.structured() {
            Granularity::PerOutputUnit
        } else {
            Granularity::PerWeight
        }
    }

    pub fn scope(self) -> Scope {
        if self.structured() {
            Scope::Local
        } else {
            Scope::Global
        }
    }

    fn policy(self) -> AllocationPolicy {
        match self {
            Criterion::Wt | Criterion::Sipp => AllocationPolicy::GlobalThreshold,
            Criterion::Ft => AllocationPolicy::UniformPerLayer,
            Criterion::Pfp => AllocationPolicy::NormalizedGlobal,
        }
    }
}

/// Ranking scope from the criterion table: one global pool or per-layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scope {
    Global,
    Local,
}

/// How a target ratio turns into per-layer removals.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AllocationPolicy {
    /// One global pool of scores (weight criteria).
    GlobalThreshold,
    /// The same ratio applied to every layer's remaining units (FT).
    UniformPerLayer,
    /// Global pool of unit scores normalized by their layer maximum (PFP),
    /// inducing data-informed per-layer budgets.
    NormalizedGlobal,
}

/// Criterion descriptor: which sensitivity, plus the sample-set size used by
/// the data-informed criteria.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PruneMethod {
    pub criterion: Criterion,
    #[serde(default = "default_sample_size")]
    pub sample_size: usize,
}

fn default_sample_size() -> usize {
    64
}

impl PruneMethod {
    pub fn new(criterion: Criterion) -> Self {
        Self { criterion, sample_size: default_sample_size() }
    }
}

/// Nonnegative importance scores aligned with the network parameter layout.
#[derive(Debug, Clone)]
pub struct SensitivityMap {
    pub granularity: Granularity,
    pub layers: Vec<LayerScores>,
}

#[derive(Debug, Clone)]
pub struct LayerScores {
    pub param_index: usize,
    /// One score per weight entry or per output unit.
    pub scores: Vec<f64>,
    /// Layers the pipeline may prune. The final classifying layer is left
    /// out of structured pruning so no class logit ever disappears.
    pub prunable: bool,
}

/// `score = |w|` for every weight.
pub fn sensitivity_wt(net: &MaskedNetwork) -> SensitivityMap {
    let layers = net
        .params()
        .iter()
        .enumerate()
        .map(|(p, lp)| LayerScores {
            param_index: p,
            scores: lp.weight.weights().data().iter().map(|w| w.abs()).collect(),
            prunable: true,
        })
        .collect();
    SensitivityMap { granularity: Granularity::PerWeight, layers }
}

/// Mean absolute input activation per feature (dense) or input channel
/// (conv), averaged over samples and, for conv, spatial positions.
fn mean_abs_inputs(input: &Tensor) -> Vec<f64> {
    match input.rank() {
        2 => {
            let (n, f) = (input.shape()[0], input.shape()[1]);
            let mut acc = vec![0.0; f];
            for i in 0..n {
                for (a, v) in acc.iter_mut().zip(&input.data()[i * f..(i + 1) * f]) {
                    *a += v.abs();
                }
            }
            acc.iter().map(|a| a / n as f64).collect()
        }
        4 => {
            let (n, c) = (input.shape()[0], input.shape()[1]);
            let plane = input.shape()[2] * input.shape()[3];
            let mut acc = vec![0.0; c];
            for i in 0..n {
                for (ch, a) in acc.iter_mut().enumerate() {
                    let base = (i * c + ch) * plane;
                    *a += input.data()[base..base + plane].iter().map(|v| v.abs()).sum::<f64>();
                }
            }
            acc.iter().map(|a| a / (n * plane) as f64).collect()
        }
        _ => unreachable!("param inputs are rank 2 or 4"),
    }
}

/// `score(w_ij) = mean_x |w_ij * a_j(x)|`, with `a_j` the layer-input
/// activation feeding that weight.
pub fn sensitivity_sipp(net: &MaskedNetwork, samples: &Tensor) -> Result<SensitivityMap, PruneError> {
    if samples.shape()[0] == 0 {
        return Err(PruneError::EmptySampleSet);
    }
    let inputs = net.param_inputs(samples)?;
    let mut layers = Vec::with_capacity(net.params().len());
    for (p, lp) in net.params().iter().enumerate() {
        let act = mean_abs_inputs(&inputs[p]);
        let w = lp.weight.weights();
        let scores: Vec<f64> = match w.rank() {
            2 => {
                let fan_in = w.shape()[1];
                w.data()
                    .iter()
                    .enumerate()
                    .map(|(idx, v)| v.abs() * act[idx % fan_in])
                    .collect()
            }
            4 => {
                let ic = w.shape()[1];
                let ksq = w.shape()[2] * w.shape()[3];
                w.data()
                    .iter()
                    .enumerate()
                    .map(|(idx, v)| v.abs() * act[idx / ksq % ic])
                    .collect()
            }
            _ => unreachable!("parameters are rank 2 or 4"),
        };
        layers.push(LayerScores { param_index: p, scores, prunable: true });
    }
    Ok(SensitivityMap { granularity: Granularity::PerWeight, layers })
}

/// `score(unit) = ||W_unit||_1` over the unit's weight slice.
pub fn sensitivity_ft(net: &MaskedNetwork) -> SensitivityMap {
    let last = net.params().len() - 1;
    let layers = net
        .params()
        .iter()
        .enumerate()
        .map(|(p, lp)| {
            let w = lp.weight.effective();
            let size = lp.weight.unit_size();
            let scores = (0..lp.weight.unit_count())
                .map(|u| w.data()[u * size..(u + 1) * size].iter().map(|v| v.abs()).sum())
                .collect();
            LayerScores { param_index: p, scores, prunable: p != last }
        })
        .collect();
    SensitivityMap { granularity: Granularity::PerOutputUnit, layers }
}

/// `score(unit j) = max_x || W_next[:, j] a_j(x) ||_inf`: the largest
/// downstream weighted activation the unit produces. The final layer falls
/// back to the sup norm over its own weighted inputs.
pub fn sensitivity_pfp(net: &MaskedNetwork, samples: &Tensor) -> Result<SensitivityMap, PruneError> {
    if samples.shape()[0] == 0 {
        return Err(PruneError::EmptySampleSet);
    }
    let inputs = net.param_inputs(samples)?;
    let n_params = net.params().len();
    let mut layers = Vec::with_capacity(n_params);
    for p in 0..n_params {
        let units = net.params()[p].weight.unit_count();
        let scores = if p + 1 < n_params {
            let consumed = &inputs[p + 1];
            let w_next = net.params()[p + 1].weight.effective();
            downstream_unit_scores(units, consumed, &w_next)
        } else {
            own_unit_scores(&net.params()[p].weight.effective(), &inputs[p])
        };
        layers.push(LayerScores { param_index: p, scores, prunable: p != n_params - 1 });
    }
    Ok(SensitivityMap { granularity: Granularity::PerOutputUnit, layers })
}

fn downstream_unit_scores(units: usize, consumed: &Tensor, w_next: &Tensor) -> Vec<f64> {
    match consumed.rank() {
        2 => {
            // unit j owns the contiguous feature block [j*plane, (j+1)*plane)
            let (n, f) = (consumed.shape()[0], consumed.shape()[1]);
            let plane = f / units;
            let rows = w_next.shape()[0];
            (0..units)
                .map(|j| {
                    let mut best = 0.0f64;
                    for x in 0..n {
                        for feat in j * plane..(j + 1) * plane {
                            let a = consumed.data()[x * f + feat].abs();
                            if a == 0.0 {
                                continue;
                            }
                            for r in 0..rows {
                                best = best.max((w_next.data()[r * f + feat] * a).abs());
                            }
                        }
                    }
                    best
                })
                .collect()
        }
        4 => {
            // next layer is conv: pair the channel's sup activation with the
            // sup kernel weight consuming that channel
            let (n, c) = (consumed.shape()[0], consumed.shape()[1]);
            let plane = consumed.shape()[2] * consumed.shape()[3];
            let (oc, ic) = (w_next.shape()[0], w_next.shape()[1]);
            let ksq = w_next.shape()[2] * w_next.shape()[3];
            (0..units)
                .map(|j| {
                    if j >= c {
                        return 0.0;
                    }
                    let mut w_sup = 0.0f64;
                    for o in 0..oc {
                        for t in 0..ksq {
                            w_sup = w_sup.max(w_next.data()[(o * ic + j) * ksq + t].abs());
                        }
                    }
                    let mut a_sup = 0.0f64;
                    for x in 0..n {
                        let base = (x * c + j) * plane;
                        for v in &consumed.data()[base..base + plane] {
                            a_sup = a_sup.max(v.abs());
                        }
                    }
                    w_sup * a_sup
                })
                .collect()
        }
        _ => unreachable!("param inputs are rank 2 or 4"),
    }
}

fn own_unit_scores(w: &Tensor, input: &Tensor) -> Vec<f64> {
    let units = w.shape()[0];
    let size = w.len() / units;
    match input.rank() {
        2 => {
            let (n, f) = (input.shape()[0], input.shape()[1]);
            (0..units)
                .map(|j| {
                    let mut best = 0.0f64;
                    for x in 0..n {
                        for i in 0..f {
                            best =
                                best.max((w.data()[j * size + i] * input.data()[x * f + i]).abs());
                        }
                    }
                    best
                })
                .collect()
        }
        4 => {
            let mut a_sup = 0.0f64;
            for v in input.data() {
                a_sup = a_sup.max(v.abs());
            }
            (0..units)
                .map(|j| {
                    let w_sup = w.data()[j * size..(j + 1) * size]
                        .iter()
                        .fold(0.0f64, |m, v| m.max(v.abs()));
                    w_sup * a_sup
                })
                .collect()
        }
        _ => unreachable!("param inputs are rank 2 or 4"),
    }
}

/// Computes the method's sensitivity map. `samples` is required for the
/// data-informed criteria and ignored otherwise.
pub fn sensitivities(
    net: &MaskedNetwork,
    method: &PruneMethod,
    samples: Option<&Tensor>,
) -> Result<SensitivityMap, PruneError> {
    match method.criterion {
        Criterion::Wt => Ok(sensitivity_wt(net)),
        Criterion::Ft => Ok(sensitivity_ft(net)),
        Criterion::Sipp => {
            sensitivity_sipp(net, samples.ok_or(PruneError::NeedsSamples(Criterion::Sipp))?)
        }
        Criterion::Pfp => {
            sensitivity_pfp(net, samples.ok_or(PruneError::NeedsSamples(Criterion::Pfp))?)
        }
    }
}

/// A layer whose requested removals hit the keep-at-least-one floor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BudgetWarning {
    pub param_index: usize,
    pub requested: usize,
    pub granted: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerBudget {
    pub param_index: usize,
    pub eligible: usize,
    pub newly_pruned: usize,
    pub kept_after: usize,
}

/// The resolved selection for one prune step.
#[derive(Debug, Clone)]
pub struct Allocation {
    /// `(param_index, flat weight index or unit index)` pairs to mask.
    pub selected: Vec<(usize, usize)>,
    pub budgets: Vec<LayerBudget>,
    pub requested: usize,
    pub warnings: Vec<BudgetWarning>,
}

struct Candidate {
    score: f64,
    layer: usize,
    index: usize,
}

fn eligible_entries(net: &MaskedNetwork, map: &SensitivityMap, layer: usize) -> Vec<usize> {
    let lp = &net.params()[map.layers[layer].param_index];
    match map.granularity {
        Granularity::PerWeight => {
            (0..lp.weight.total()).filter(|&i| !lp.weight.is_entry_masked(i)).collect()
        }
        Granularity::PerOutputUnit => {
            (0..lp.weight.unit_count()).filter(|&u| !lp.weight.is_unit_masked(u)).collect()
        }
    }
}

fn check_map(net: &MaskedNetwork, map: &SensitivityMap) -> Result<(), PruneError> {
    for ls in &map.layers {
        if ls.param_index >= net.params().len() {
            return Err(PruneError::MapMismatch(format!("layer index {}", ls.param_index)));
        }
        let lp = &net.params()[ls.param_index];
        let expect = match map.granularity {
            Granularity::PerWeight => lp.weight.total(),
            Granularity::PerOutputUnit => lp.weight.unit_count(),
        };
        if ls.scores.len() != expect {
            return Err(PruneError::MapMismatch(format!(
                "layer {}: {} scores for {} entries",
                ls.param_index,
                ls.scores.len(),
                expect
            )));
        }
    }
    Ok(())
}

/// Turns a target removal ratio into a concrete selection. Ranking ties
/// break by `(layer, index)` ascending; every layer keeps at least one
/// weight or unit, with a warning recorded when that floor binds.
pub fn allocate_budgets(
    net: &MaskedNetwork,
    map: &SensitivityMap,
    r: f64,
    policy: AllocationPolicy,
) -> Result<Allocation, PruneError> {
    if !(r > 0.0 && r < 1.0) {
        return Err(PruneError::InvalidRatio(r));
    }
    check_map(net, map)?;

    let prunable: Vec<usize> =
        (0..map.layers.len()).filter(|&l| map.layers[l].prunable).collect();
    let eligible: Vec<Vec<usize>> =
        (0..map.layers.len()).map(|l| eligible_entries(net, map, l)).collect();
    let remaining: usize = prunable.iter().map(|&l| eligible[l].len()).sum();
    let requested = (r * remaining as f64).floor() as usize;

    let mut selected = Vec::with_capacity(requested);
    let mut warnings = Vec::new();
    let mut pruned_per_layer = vec![0usize; map.layers.len()];

    match policy {
        AllocationPolicy::UniformPerLayer => {
            for &l in &prunable {
                let have = eligible[l].len();
                let want = (r * have as f64).floor() as usize;
                let granted = want.min(have.saturating_sub(1));
                if granted < want {
                    warnings.push(BudgetWarning {
                        param_index: map.layers[l].param_index,
                        requested: want,
                        granted,
                    });
                }
                let mut units: Vec<Candidate> = eligible[l]
                    .iter()
                    .map(|&u| Candidate { score: map.layers[l].scores[u], layer: l, index: u })
                    .collect();
                units.sort_by(|a, b| a.score.total_cmp(&b.score).then(a.index.cmp(&b.index)));
                for c in units.into_iter().take(granted) {
                    selected.push((map.layers[l].param_index, c.index));
                    pruned_per_layer[l] += 1;
                }
            }
        }
        AllocationPolicy::GlobalThreshold | AllocationPolicy::NormalizedGlobal => {
            let mut pool: Vec<Candidate> = Vec::with_capacity(remaining);
            for &l in &prunable {
                let norm = if policy == AllocationPolicy::NormalizedGlobal {
                    eligible[l]
                        .iter()
                        .map(|&u| map.layers[l].scores[u])
                        .fold(0.0f64, f64::max)
                        .max(f64::MIN_POSITIVE)
                } else {
                    1.0
                };
                for &i in &eligible[l] {
                    pool.push(Candidate { score: map.layers[l].scores[i] / norm, layer: l, index: i });
                }
            }
            pool.sort_by(|a, b| {
                a.score.total_cmp(&b.score).then(a.layer.cmp(&b.layer)).then(a.index.cmp(&b.index))
            });
            let mut kept: Vec<usize> = eligible.iter().map(Vec::len).collect();
            let mut clamped: Vec<usize> = Vec::new();
            for c in pool {
                if selected.len() == requested {
                    break;
                }
                if kept[c.layer] <= 1 {
                    if !clamped.contains(&c.layer) {
                        clamped.push(c.layer);
                    }
                    continue;
                }
                kept[c.layer] -= 1;
                pruned_per_layer[c.layer] += 1;
                selected.push((map.layers[c.layer].param_index, c.index));
            }
            for l in clamped {
                warnings.push(BudgetWarning {
                    param_index: map.layers[l].param_index,
                    requested,
                    granted: selected.len(),
                });
            }
        }
    }

    let budgets = (0..map.layers.len())
        .map(|l| LayerBudget {
            param_index: map.layers[l].param_index,
            eligible: eligible[l].len(),
            newly_pruned: pruned_per_layer[l],
            kept_after: eligible[l].len() - pruned_per_layer[l],
        })
        .collect();
    Ok(Allocation { selected, budgets, requested, warnings })
}

/// Outcome of one prune step.
#[derive(Debug, Clone)]
pub struct PruneOutcome {
    pub requested: usize,
    pub newly_masked: usize,
    pub warnings: Vec<BudgetWarning>,
}

/// Scores the network, selects the lowest-sensitivity candidates for the
/// requested ratio of remaining parameters, and updates the masks. Already
/// masked entries stay masked.
pub fn prune(
    net: &mut MaskedNetwork,
    method: &PruneMethod,
    r: f64,
    samples: Option<&Tensor>,
) -> Result<PruneOutcome, PruneError> {
    let map = sensitivities(net, method, samples)?;
    let alloc = allocate_budgets(net, &map, r, method.criterion.policy())?;
    let mut by_layer: Vec<Vec<usize>> = vec![Vec::new(); net.params().len()];
    for &(p, i) in &alloc.selected {
        by_layer[p].push(i);
    }
    for (p, indices) in by_layer.iter().enumerate() {
        if indices.is_empty() {
            continue;
        }
        match map.granularity {
            Granularity::PerWeight => net.params_mut()[p].weight.clear_entries(indices),
            Granularity::PerOutputUnit => net.params_mut()[p].weight.clear_units(indices),
        }
    }
    Ok(PruneOutcome {
        requested: alloc.requested,
        newly_masked: alloc.selected.len(),
        warnings: alloc.warnings,
    })
}

#[cfg(test)]
mod tests;
