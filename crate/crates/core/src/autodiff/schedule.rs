use serde::{Deserialize, Serialize};

/// Step decay: `initial · factor^⌊epoch / period⌋`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub initial: f64,
    pub factor: f64,
    pub period: usize,
}

impl LrSchedule {
    pub fn constant(rate: f64) -> Self {
        LrSchedule { initial: rate, factor: 1.0, period: 1 }
    }

    pub fn step_decay(initial: f64, factor: f64, period: usize) -> Self {
        LrSchedule { initial, factor, period: period.max(1) }
    }

    pub fn rate(&self, epoch: usize) -> f64 {
        if self.factor == 1.0 {
            return self.initial;
        }
        self.initial * self.factor.powi((epoch / self.period.max(1)) as i32)
    }
}
