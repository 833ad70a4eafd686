//! Training objective: smoothed classification loss, order-embedding
//! violation loss, their gradients, AdamW with warmup/cosine schedule, the
//! training loop and a finite-difference gradient check.

mod gradcheck;
mod loss;
mod optim;
mod train;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use gradcheck::{gradcheck, GradcheckConfig, GradcheckReport, TensorError};
pub use loss::{
    backward, order_loss, output_grads, smoothed_target, tep_loss, tep_loss_grad, total_loss,
    violates, LossBreakdown,
};
pub use optim::{adamw_step, adamw_update, clip_grad_norm, schedule, OptimizerState};
pub use train::{encode_records, StepRecord, Trainer};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObjectiveConfig {
    /// Label smoothing epsilon.
    pub smoothing: f64,
    /// Weight of the order loss (lambda).
    pub order_weight: f64,
    pub peak_lr: f64,
    pub warmup_steps: u64,
    pub total_steps: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    /// Global gradient norm limit; 0 disables clipping.
    pub grad_clip: f64,
    /// Steps between periodic checkpoints; 0 writes only the final one.
    pub checkpoint_every: u64,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        ObjectiveConfig {
            smoothing: 0.1,
            order_weight: 0.1,
            peak_lr: 2e-4,
            warmup_steps: 100,
            total_steps: 2000,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            weight_decay: 0.01,
            batch_size: 16,
            grad_clip: 0.0,
            checkpoint_every: 500,
        }
    }
}

impl ObjectiveConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if !(0.0..1.0).contains(&self.smoothing) {
            return fail(format!("smoothing {} must lie in [0, 1)", self.smoothing));
        }
        for (name, v) in [
            ("order_weight", self.order_weight),
            ("peak_lr", self.peak_lr),
            ("adam_eps", self.adam_eps),
            ("weight_decay", self.weight_decay),
            ("grad_clip", self.grad_clip),
        ] {
            if !v.is_finite() || v < 0.0 {
                return fail(format!("{name} = {v} must be finite and non-negative"));
            }
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return fail(format!("{name} = {b} must lie in [0, 1)"));
            }
        }
        if self.total_steps == 0 {
            return fail("total_steps must be positive".into());
        }
        if self.warmup_steps > self.total_steps {
            return fail(format!(
                "warmup_steps {} exceeds total_steps {}",
                self.warmup_steps, self.total_steps
            ));
        }
        if self.batch_size == 0 {
            return fail("batch_size must be positive".into());
        }
        Ok(())
    }
}
