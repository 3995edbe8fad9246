use serde::{Deserialize, Serialize};

/// Linear warmup from 0 to `base_rate`, then linear decay back to 0 at `total_steps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub base_rate: f64,
    pub warmup_steps: u64,
    pub total_steps: u64,
}

impl LrSchedule {
    pub fn new(base_rate: f64, warmup_steps: u64, total_steps: u64) -> Self {
        let total_steps = total_steps.max(warmup_steps).max(1);
        LrSchedule {
            base_rate,
            warmup_steps,
            total_steps,
        }
    }

    pub fn constant(base_rate: f64) -> Self {
        LrSchedule {
            base_rate,
            warmup_steps: 0,
            total_steps: u64::MAX,
        }
    }

    pub fn lr_at(&self, step: u64) -> f64 {
        if self.total_steps == u64::MAX {
            return self.base_rate;
        }
        if step > self.total_steps {
            log::warn!(
                "learning-rate step {step} beyond schedule end {}; clamped to 0",
                self.total_steps
            );
            return 0.0;
        }
        if step < self.warmup_steps {
            return self.base_rate * step as f64 / self.warmup_steps as f64;
        }
        let decay_span = self.total_steps - self.warmup_steps;
        if decay_span == 0 {
            return self.base_rate;
        }
        self.base_rate * (self.total_steps - step) as f64 / decay_span as f64
    }
}
