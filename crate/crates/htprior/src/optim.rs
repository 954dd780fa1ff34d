//! Adam optimizer with decoupled weight decay.

use crate::error::{Error, Result};
use crate::tensor::Parameter;

/// Adam with bias correction; weight decay is decoupled from the moment
/// estimates (applied directly to the weights, scaled by the learning rate).
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub weight_decay: f32,
    step: u64,
}

impl Adam {
    pub fn new(lr: f32, weight_decay: f32) -> Adam {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Restores the step counter when resuming from a checkpoint.
    pub fn set_step_count(&mut self, step: u64) {
        self.step = step;
    }

    /// Applies one update to every parameter and clears the gradients.
    /// Errors if any parameter has no gradient (no backward ran).
    pub fn step(&mut self, params: &mut [Parameter]) -> Result<()> {
        for p in params.iter() {
            if p.value.grad.is_none() {
                return Err(Error::Usage(format!(
                    "adam step before backward: parameter '{}' has no gradient",
                    p.name
                )));
            }
        }
        self.step += 1;
        let t = self.step as f64;
        let bc1 = (1.0 - (self.beta1 as f64).powi(t as i32)) as f32;
        let bc2 = (1.0 - (self.beta2 as f64).powi(t as i32)) as f32;
        for p in params.iter_mut() {
            let grad = p.value.grad.take().expect("checked above");
            let weights = p.value.data_mut();
            for i in 0..weights.len() {
                let g = grad[i];
                p.adam_m[i] = self.beta1 * p.adam_m[i] + (1.0 - self.beta1) * g;
                p.adam_v[i] = self.beta2 * p.adam_v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = p.adam_m[i] / bc1;
                let v_hat = p.adam_v[i] / bc2;
                weights[i] -=
                    self.lr * (m_hat / (v_hat.sqrt() + self.eps) + self.weight_decay * weights[i]);
            }
        }
        Ok(())
    }
}
