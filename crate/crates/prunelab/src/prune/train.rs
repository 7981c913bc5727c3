//! SGD training loop with warmup, milestone decay, and the corruption-mix
//! augmentation used for robust (re-)training.

use serde::{Deserialize, Serialize};

use super::PruneError;
use crate::data::{mix_augment, Corruption, Dataset, Split};
use crate::net::MaskedNetwork;
use crate::rng::{stream, Purpose};
use crate::tensor::{Graph, ParamSlot, Sgd, TensorError};
use rand::seq::SliceRandom;

/// Training hyperparameters reused verbatim for every retrain cycle,
/// including the warmup ramp.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHyper {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    #[serde(default)]
    pub nesterov: bool,
    pub batch_size: usize,
    #[serde(default)]
    pub warmup_epochs: usize,
    #[serde(default)]
    pub milestones: Vec<usize>,
    #[serde(default = "default_decay")]
    pub lr_decay: f64,
}

fn default_decay() -> f64 {
    0.1
}

impl TrainHyper {
    /// Linear warmup to the nominal rate, then step decay at each milestone.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        if epoch < self.warmup_epochs {
            return self.lr * (epoch + 1) as f64 / self.warmup_epochs as f64;
        }
        let decays = self.milestones.iter().filter(|&&m| epoch >= m).count();
        self.lr * self.lr_decay.powi(decays as i32)
    }
}

/// What a training run needs besides the network: the data, the train
/// distribution's corruption mix (empty for nominal training), and stream
/// keys.
pub struct TrainContext<'a> {
    pub data: &'a Dataset,
    pub augment: &'a [Corruption],
    pub seed: u64,
    /// Salts the data-order and augmentation streams so each retrain cycle
    /// sees fresh but reproducible draws.
    pub cycle: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainStats {
    pub epochs: usize,
    pub final_loss: f64,
}

/// Trains in place for `epochs` epochs. Masked weights stay exactly zero
/// throughout: their gradients are zeroed at harvest and the optimizer pins
/// the entries. A non-finite loss aborts with the failing epoch.
pub fn train(
    net: &mut MaskedNetwork,
    epochs: usize,
    hyper: &TrainHyper,
    ctx: &TrainContext<'_>,
) -> Result<TrainStats, PruneError> {
    let mut sgd = Sgd::new(hyper.lr, hyper.momentum, hyper.weight_decay, hyper.nesterov)?;
    let classes = net.classes();
    let mut indices: Vec<usize> = ctx.data.split_range(Split::Train).collect();
    let mut last_loss = f64::NAN;
    for epoch in 0..epochs {
        let salt = (ctx.cycle as u64) << 32 | epoch as u64;
        let mut order_rng = stream(Purpose::DataOrder, ctx.seed, salt);
        indices.shuffle(&mut order_rng);
        let mut mix_rng = stream(Purpose::CorruptionChoice, ctx.seed, salt);
        sgd.set_lr(hyper.lr_at(epoch));

        for chunk in indices.chunks(hyper.batch_size) {
            let (mut batch, labels) = ctx.data.batch(chunk);
            if !ctx.augment.is_empty() {
                batch = mix_augment(&batch, ctx.augment, &mut mix_rng)?;
            }
            let targets = Dataset::one_hot(&labels, classes);

            let diverged = |e: PruneError| match e {
                PruneError::Tensor(TensorError::NonFinite { .. })
                | PruneError::Net(crate::net::NetError::Tensor(TensorError::NonFinite { .. })) => {
                    PruneError::Diverged { cycle: ctx.cycle, epoch }
                }
                other => other,
            };
            let mut graph = Graph::new();
            let traced = net.trace(&mut graph, &batch).map_err(|e| diverged(e.into()))?;
            let target_id = graph.leaf(targets);
            let loss = graph
                .cross_entropy(traced.logits, target_id)
                .map_err(|e| diverged(e.into()))?;
            last_loss = graph.value(loss).item();
            if !last_loss.is_finite() {
                return Err(PruneError::Diverged { cycle: ctx.cycle, epoch });
            }
            graph.backward(loss)?;
            net.harvest_grads(&graph, &traced);

            let mut slots = Vec::new();
            for lp in net.params_mut() {
                let (weights, mask) = lp.weight.weights_and_mask_mut();
                slots.push(ParamSlot { tensor: weights, mask: Some(mask) });
                slots.push(ParamSlot { tensor: &mut lp.bias, mask: None });
            }
            sgd.step(&mut slots)?;
        }
    }
    Ok(TrainStats { epochs, final_loss: last_loss })
}
