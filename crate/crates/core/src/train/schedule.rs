use serde::{Deserialize, Serialize};

/// Gradient-reversal scale `2 / (1 + exp(-10 p)) - 1`.
pub fn grad_scale(p: f64) -> f64 {
    2.0 / (1.0 + (-10.0 * p).exp()) - 1.0
}

/// Annealed learning rate `lr_i / (1 + decay p)^0.75`.
pub fn annealed_lr(lr_initial: f64, decay: f64, p: f64) -> f64 {
    lr_initial / (1.0 + decay * p).powf(0.75)
}

/// Progress-dependent scale and learning rate at one step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleState {
    /// Fraction of all batches already processed.
    pub p: f64,
    pub s: f64,
    pub lr: f64,
    pub lr_initial: f64,
    pub decay: f64,
}

impl ScheduleState {
    pub fn at(lr_initial: f64, decay: f64, p: f64) -> Self {
        let p = p.clamp(0.0, 1.0);
        Self {
            p,
            s: grad_scale(p),
            lr: annealed_lr(lr_initial, decay, p),
            lr_initial,
            decay,
        }
    }

    /// State before step `step` of `total`.
    pub fn for_step(lr_initial: f64, decay: f64, step: usize, total: usize) -> Self {
        Self::at(lr_initial, decay, step as f64 / total.max(1) as f64)
    }
}
