//! The iterative prune-retrain pipeline: train once, then repeat
//! prune-then-retrain cycles with the identical hyperparameters, recording
//! accuracy and prune ratio after every cycle.

use serde::{Deserialize, Serialize};

use super::train::{train, TrainContext, TrainHyper};
use super::{prune, PruneError, PruneMethod};
use crate::data::{DistributionSpec, Split};
use crate::eval::distribution_error;
use crate::net::{MaskedNetwork, NetworkSpec};
use crate::tensor::Tensor;

/// Cycle count, per-cycle removal ratio of the remaining parameters, epochs
/// per (re)train, and the training hyperparameters reused every cycle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneSchedule {
    pub n_cycles: usize,
    pub r_prune: f64,
    pub n_train: usize,
    pub train: TrainHyper,
}

/// One row of the pipeline's run log, emitted after the initial train
/// (cycle 0) and after every prune-retrain cycle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub cycle: usize,
    pub prune_ratio: f64,
    pub flop_reduction: f64,
    pub train_loss: f64,
    /// Mean test-split error over the train distribution's elements.
    pub traindist_error: f64,
    pub newly_masked: usize,
    pub requested: usize,
    pub clamp_warnings: usize,
}

/// Pipeline output: the per-cycle log plus a checkpoint after every record.
#[derive(Debug, Clone)]
pub struct PruneRun {
    pub records: Vec<EvalRecord>,
    pub checkpoints: Vec<MaskedNetwork>,
}

impl PruneRun {
    /// `(prune ratio, network)` pairs in cycle order.
    pub fn ratio_nets(&self) -> Vec<(f64, &MaskedNetwork)> {
        self.records
            .iter()
            .zip(&self.checkpoints)
            .map(|(r, n)| (r.prune_ratio, n))
            .collect()
    }

    pub fn final_net(&self) -> &MaskedNetwork {
        self.checkpoints.last().expect("pipeline always records cycle 0")
    }
}

fn sample_batch(dist: &DistributionSpec, method: &PruneMethod) -> Option<Tensor> {
    if !method.criterion.data_informed() {
        return None;
    }
    let (batch, _) = dist.base().head(Split::Val, method.sample_size.max(1));
    Some(batch)
}

/// Runs the full pipeline from a random initialization.
pub fn prune_retrain(
    spec: &NetworkSpec,
    method: &PruneMethod,
    schedule: &PruneSchedule,
    dist: &DistributionSpec,
    seed: u64,
) -> Result<PruneRun, PruneError> {
    let mut net = MaskedNetwork::init(spec, seed)?;
    let ctx = TrainContext { data: dist.base(), augment: dist.corruptions(), seed, cycle: 0 };
    let stats = train(&mut net, schedule.n_train, &schedule.train, &ctx)?;
    prune_retrain_from(net, stats.final_loss, method, schedule, dist, seed)
}

/// Continues the pipeline from an already trained parent network. The parent
/// becomes the cycle-0 record.
pub fn prune_retrain_from(
    mut net: MaskedNetwork,
    parent_loss: f64,
    method: &PruneMethod,
    schedule: &PruneSchedule,
    dist: &DistributionSpec,
    seed: u64,
) -> Result<PruneRun, PruneError> {
    let mut run = PruneRun { records: Vec::new(), checkpoints: Vec::new() };
    let record = EvalRecord {
        cycle: 0,
        prune_ratio: net.prune_ratio(),
        flop_reduction: net.flop_reduction(),
        train_loss: parent_loss,
        traindist_error: distribution_error(&net, dist, Split::Test)?,
        newly_masked: 0,
        requested: 0,
        clamp_warnings: 0,
    };
    run.records.push(record);
    run.checkpoints.push(net.clone());

    let samples = sample_batch(dist, method);
    for cycle in 1..=schedule.n_cycles {
        let outcome = prune(&mut net, method, schedule.r_prune, samples.as_ref())?;
        let ctx = TrainContext { data: dist.base(), augment: dist.corruptions(), seed, cycle };
        let stats = train(&mut net, schedule.n_train, &schedule.train, &ctx)?;
        run.records.push(EvalRecord {
            cycle,
            prune_ratio: net.prune_ratio(),
            flop_reduction: net.flop_reduction(),
            train_loss: stats.final_loss,
            traindist_error: distribution_error(&net, dist, Split::Test)?,
            newly_masked: outcome.newly_masked,
            requested: outcome.requested,
            clamp_warnings: outcome.warnings.len(),
        });
        run.checkpoints.push(net.clone());
    }
    Ok(run)
}
