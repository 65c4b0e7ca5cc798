//! Learning-rate schedules `η_t` for the base optimizers.

use std::f64::consts::PI;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum ScheduleKind {
    Constant,
    /// Linear warmup to `base_lr`, then linear decay towards zero.
    LinearWarmupDecay,
    /// Linear warmup to `base_lr`, then half-cosine decay towards zero.
    CosineWarmup,
    /// Multiply by `factor` at each milestone step.
    StepDecay {
        milestones: Vec<usize>,
        factor: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    pub kind: ScheduleKind,
    pub base_lr: f64,
    pub total_steps: usize,
    pub warmup_steps: usize,
}

impl Schedule {
    pub fn constant(base_lr: f64, total_steps: usize) -> Self {
        Self {
            kind: ScheduleKind::Constant,
            base_lr,
            total_steps,
            warmup_steps: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return Err(Error::Config(format!(
                "base_lr must be positive, got {}",
                self.base_lr
            )));
        }
        if self.warmup_steps > self.total_steps {
            return Err(Error::Config(format!(
                "warmup_steps {} exceeds total_steps {}",
                self.warmup_steps, self.total_steps
            )));
        }
        if let ScheduleKind::StepDecay { factor, .. } = &self.kind {
            if !(*factor > 0.0 && factor.is_finite()) {
                return Err(Error::Config(format!(
                    "step-decay factor must be positive, got {factor}"
                )));
            }
        }
        Ok(())
    }

    /// `η_t` for zero-based step `t < total_steps`.
    pub fn eval(&self, t: usize) -> Result<f64> {
        if t >= self.total_steps {
            return Err(Error::Precondition(format!(
                "schedule step {t} out of range 0..{}",
                self.total_steps
            )));
        }
        let warm = self.warmup_steps;
        let lr = self.base_lr;
        let eta = match &self.kind {
            ScheduleKind::Constant => lr,
            ScheduleKind::LinearWarmupDecay if t < warm => lr * (t + 1) as f64 / warm as f64,
            ScheduleKind::LinearWarmupDecay => {
                lr * (self.total_steps - t) as f64 / (self.total_steps - warm) as f64
            }
            ScheduleKind::CosineWarmup if t < warm => lr * (t + 1) as f64 / warm as f64,
            ScheduleKind::CosineWarmup => {
                let progress = (t - warm) as f64 / (self.total_steps - warm) as f64;
                lr * 0.5 * (1.0 + (PI * progress).cos())
            }
            ScheduleKind::StepDecay { milestones, factor } => {
                let passed = milestones.iter().filter(|&&ms| t >= ms).count();
                lr * factor.powi(passed as i32)
            }
        };
        Ok(eta)
    }
}
