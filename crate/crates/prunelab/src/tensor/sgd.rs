//! Momentum SGD with weight decay, optionally Nesterov.

use super::{Tensor, TensorError};

/// One parameter slot for an optimizer step. When `mask` is present the
/// entry's velocity and value are pinned to exactly zero wherever the mask
/// is zero.
pub struct ParamSlot<'a> {
    pub tensor: &'a mut Tensor,
    pub mask: Option<&'a Tensor>,
}

/// Optimizer state: hyperparameters plus one velocity buffer per parameter,
/// allocated lazily to match parameter shapes.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub nesterov: bool,
    velocity: Vec<Vec<f64>>,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64, weight_decay: f64, nesterov: bool) -> Result<Self, TensorError> {
        if !(0.0..1.0).contains(&momentum) {
            return Err(TensorError::InvalidOptimizer(format!(
                "momentum must be in [0, 1), got {momentum}"
            )));
        }
        if weight_decay < 0.0 || !weight_decay.is_finite() {
            return Err(TensorError::InvalidOptimizer(format!(
                "weight decay must be >= 0, got {weight_decay}"
            )));
        }
        Ok(Self { lr, momentum, weight_decay, nesterov, velocity: Vec::new() })
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.lr = lr;
    }

    /// Applies one update to every parameter and clears their gradients.
    /// Errors if any gradient is missing; no parameter is touched in that case.
    pub fn step(&mut self, params: &mut [ParamSlot<'_>]) -> Result<(), TensorError> {
        for (index, p) in params.iter().enumerate() {
            if p.tensor.grad().is_none() {
                return Err(TensorError::MissingGrad { index });
            }
        }
        if self.velocity.len() != params.len() {
            self.velocity = params.iter().map(|p| vec![0.0; p.tensor.len()]).collect();
        }
        for (p, vel) in params.iter_mut().zip(&mut self.velocity) {
            debug_assert_eq!(vel.len(), p.tensor.len());
            let grad = p.tensor.grad().expect("checked above").to_vec();
            let data = p.tensor.data_mut();
            for i in 0..data.len() {
                let masked = p.mask.is_some_and(|m| m.data()[i] == 0.0);
                if masked {
                    vel[i] = 0.0;
                    data[i] = 0.0;
                    continue;
                }
                let g = grad[i] + self.weight_decay * data[i];
                vel[i] = self.momentum * vel[i] + g;
                let update = if self.nesterov { g + self.momentum * vel[i] } else { vel[i] };
                data[i] -= self.lr * update;
            }
            p.tensor.clear_grad();
        }
        Ok(())
    }
}
