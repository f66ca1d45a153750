//! SGD with momentum and the cosine annealing schedule.

use crate::error::{BinetError, Result};

/// SGD with classic momentum:
/// v ← momentum·v + (grad + weight_decay·param); param ← param − lr·v.
#[derive(Clone, Debug)]
pub struct SgdMomentum {
    pub momentum: f32,
    pub weight_decay: f32,
    velocities: Vec<Vec<f32>>,
}

impl SgdMomentum {
    pub fn new(momentum: f32, weight_decay: f32, param_sizes: &[usize]) -> Self {
        SgdMomentum {
            momentum,
            weight_decay,
            velocities: param_sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn num_params(&self) -> usize {
        self.velocities.len()
    }

    pub fn velocity(&self, index: usize) -> &[f32] {
        &self.velocities[index]
    }

    pub fn velocity_mut(&mut self, index: usize) -> &mut Vec<f32> {
        &mut self.velocities[index]
    }

    /// Update one parameter in place. `weight_decay_scale` lets a caller
    /// exempt a parameter group (batch-norm affine) by passing 0.
    pub fn step(
        &mut self,
        index: usize,
        lr: f32,
        param: &mut [f32],
        grad: &[f32],
        weight_decay_scale: f32,
    ) -> Result<()> {
        if lr < 0.0 {
            return Err(BinetError::InvalidArgument(format!("negative learning rate {lr}")));
        }
        let v = &mut self.velocities[index];
        if v.len() != param.len() || grad.len() != param.len() {
            return Err(BinetError::ShapeMismatch(format!(
                "sgd_step buffers disagree: param {}, grad {}, velocity {}",
                param.len(),
                grad.len(),
                v.len()
            )));
        }
        let wd = self.weight_decay * weight_decay_scale;
        for i in 0..param.len() {
            v[i] = self.momentum * v[i] + (grad[i] + wd * param[i]);
            param[i] -= lr * v[i];
        }
        Ok(())
    }
}

/// lr(i) = lr0 · (1 + cos(π·i/N)) / 2
pub fn cosine_lr(epoch: usize, total_epochs: usize, lr0: f32) -> f32 {
    if total_epochs == 0 {
        return lr0;
    }
    let frac = epoch as f64 / total_epochs as f64;
    (lr0 as f64 * (1.0 + (std::f64::consts::PI * frac).cos()) / 2.0) as f32
}
