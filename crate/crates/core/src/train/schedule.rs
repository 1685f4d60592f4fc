use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `end + ½(start − end)(1 + cos(π·step/total))`, with `step` clamped to
/// `[0, total]`. A zero-length schedule stays at `start`.
pub fn cosine_value(step: u64, total: u64, start: f64, end: f64) -> f64 {
    if total == 0 {
        return start;
    }
    let s = step.min(total) as f64;
    // weights, not a difference, so both endpoints come out exact
    let w = 0.5 * (1.0 + (PI * s / total as f64).cos());
    w * start + (1.0 - w) * end
}

/// Linear ramp from `start` to `end` over `ramp_epochs`, constant afterwards.
pub fn teacher_temperature(epoch: u64, start: f64, end: f64, ramp_epochs: u64) -> f64 {
    if epoch >= ramp_epochs {
        end
    } else {
        start + (end - start) * epoch as f64 / ramp_epochs as f64
    }
}

/// Pretraining schedules: learning rate, weight decay and EMA momentum are
/// cosine over steps; the teacher temperature ramps over epochs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleSet {
    pub lr_start: f64,
    pub lr_end: f64,
    pub wd_start: f64,
    pub wd_end: f64,
    pub tau_s: f64,
    pub tau_t_start: f64,
    pub tau_t_end: f64,
    pub tau_t_ramp_epochs: u64,
    pub momentum_start: f64,
    pub momentum_end: f64,
}

impl Default for ScheduleSet {
    fn default() -> Self {
        Self {
            lr_start: 1e-5,
            lr_end: 1e-6,
            wd_start: 0.04,
            wd_end: 0.4,
            tau_s: 0.1,
            tau_t_start: 0.04,
            tau_t_end: 0.07,
            tau_t_ramp_epochs: 30,
            momentum_start: 0.996,
            momentum_end: 1.0,
        }
    }
}

/// Schedule values at one step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScheduleValues {
    pub lr: f64,
    pub wd: f64,
    pub tau_s: f64,
    pub tau_t: f64,
    pub momentum: f64,
}

impl ScheduleSet {
    pub fn validate(&self) -> Result<()> {
        let err = |m: &str| Err(Error::Config(format!("schedule.{m}")));
        if self.lr_start < 0.0 || self.lr_end < 0.0 || self.wd_start < 0.0 || self.wd_end < 0.0 {
            return err("learning rates and weight decays must be >= 0");
        }
        if !(self.tau_s > 0.0 && self.tau_t_start > 0.0 && self.tau_t_end > 0.0) {
            return err("temperatures must be positive");
        }
        let m = [self.momentum_start, self.momentum_end];
        if m.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return err("momentum must lie in [0, 1]");
        }
        Ok(())
    }

    /// Values at `step` of a run whose last step index is `last_step`.
    pub fn at(&self, step: u64, last_step: u64, epoch: u64) -> ScheduleValues {
        ScheduleValues {
            lr: cosine_value(step, last_step, self.lr_start, self.lr_end),
            wd: cosine_value(step, last_step, self.wd_start, self.wd_end),
            tau_s: self.tau_s,
            tau_t: teacher_temperature(epoch, self.tau_t_start, self.tau_t_end, self.tau_t_ramp_epochs),
            momentum: cosine_value(step, last_step, self.momentum_start, self.momentum_end),
        }
    }
}

/// Fine-tuning learning rate: linear warm-up from 0 reaching `peak` at step
/// `warmup_steps`, then cosine to `end` at `last_step`.
pub fn warmup_cosine(step: u64, warmup_steps: u64, last_step: u64, peak: f64, end: f64) -> f64 {
    if step < warmup_steps {
        return peak * step as f64 / warmup_steps as f64;
    }
    cosine_value(step - warmup_steps, last_step.saturating_sub(warmup_steps), peak, end)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_endpoints_and_midpoint() {
        assert_eq!(cosine_value(0, 10, 1e-5, 1e-6), 1e-5);
        assert_eq!(cosine_value(10, 10, 1e-5, 1e-6), 1e-6);
        assert!((cosine_value(5, 10, 1e-5, 1e-6) - 5.5e-6).abs() < 1e-18);
        assert_eq!(cosine_value(0, 7, 0.04, 0.4), 0.04);
        assert_eq!(cosine_value(7, 7, 0.04, 0.4), 0.4);
    }

    #[test]
    fn cosine_is_monotone() {
        let v: Vec<f64> = (0..=100).map(|s| cosine_value(s, 100, 1e-5, 1e-6)).collect();
        assert!(v.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn teacher_temperature_ramp() {
        assert_eq!(teacher_temperature(0, 0.04, 0.07, 30), 0.04);
        assert!((teacher_temperature(15, 0.04, 0.07, 30) - 0.055).abs() < 1e-15);
        assert_eq!(teacher_temperature(30, 0.04, 0.07, 30), 0.07);
        assert_eq!(teacher_temperature(500, 0.04, 0.07, 30), 0.07);
    }

    #[test]
    fn warmup_then_cosine() {
        // 50 epochs of 4 steps, 10 warm-up epochs
        let (w, last) = (40, 199);
        assert_eq!(warmup_cosine(0, w, last, 5e-4, 1e-6), 0.0);
        assert!((warmup_cosine(20, w, last, 5e-4, 1e-6) - 2.5e-4).abs() < 1e-18);
        assert_eq!(warmup_cosine(40, w, last, 5e-4, 1e-6), 5e-4);
        assert_eq!(warmup_cosine(199, w, last, 5e-4, 1e-6), 1e-6);
    }
}
