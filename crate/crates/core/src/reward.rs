//! Reward and punishment functions for the constrained search.
//!
//! Errors are percentages on a 0-100 scale; both reward shapes are scale-sensitive.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_PUNISH_SLOPE: f64 = 100.0;
pub const DEFAULT_PUNISH_OFFSET: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RewardMode {
    /// `-exp(w - w_b)`, for modest speedup targets where error differences are small.
    Conservative,
    /// `-exp(sqrt(w / w_b))`, for high speedup targets with a wide error range.
    Aggressive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardConfig {
    pub mode: RewardMode,
    pub baseline_error: f64,
    pub target_speedup: f64,
    #[serde(default = "default_slope")]
    pub punish_slope: f64,
    #[serde(default = "default_offset")]
    pub punish_offset: f64,
}

fn default_slope() -> f64 {
    DEFAULT_PUNISH_SLOPE
}

fn default_offset() -> f64 {
    DEFAULT_PUNISH_OFFSET
}

impl RewardConfig {
    pub fn new(mode: RewardMode, baseline_error: f64, target_speedup: f64) -> Result<Self> {
        let cfg = Self {
            mode,
            baseline_error,
            target_speedup,
            punish_slope: DEFAULT_PUNISH_SLOPE,
            punish_offset: DEFAULT_PUNISH_OFFSET,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.baseline_error > 0.0 && self.baseline_error.is_finite()) {
            return Err(Error::InvalidBaseline(self.baseline_error));
        }
        if !(self.target_speedup > 1.0 && self.target_speedup.is_finite()) {
            return Err(Error::ContractViolation(format!("target speedup must exceed 1, got {}", self.target_speedup)));
        }
        Ok(())
    }

    /// Reward for an evaluated scheme with error `w`.
    pub fn reward(&self, w: f64) -> Result<f64> {
        match self.mode {
            RewardMode::Conservative => Ok(reward_conservative(w, self.baseline_error)),
            RewardMode::Aggressive => reward_aggressive(w, self.baseline_error),
        }
    }

    /// Punishment for a scheme whose speedup `a` falls short of the target.
    pub fn punish(&self, a: f64) -> Result<f64> {
        punish_with(self.target_speedup - a, self.punish_slope, self.punish_offset)
    }
}

pub fn reward_conservative(w: f64, w_b: f64) -> f64 {
    -(w - w_b).exp()
}

pub fn reward_aggressive(w: f64, w_b: f64) -> Result<f64> {
    if !(w_b > 0.0) {
        return Err(Error::InvalidBaseline(w_b));
    }
    if !(w >= 0.0) {
        return Err(Error::ContractViolation(format!("error must be non-negative, got {w}")));
    }
    Ok(-(w / w_b).sqrt().exp())
}

pub fn punish(delta_a: f64) -> Result<f64> {
    punish_with(delta_a, DEFAULT_PUNISH_SLOPE, DEFAULT_PUNISH_OFFSET)
}

pub fn punish_with(delta_a: f64, slope: f64, offset: f64) -> Result<f64> {
    if !(delta_a >= 0.0) {
        return Err(Error::ContractViolation(format!("speedup deficit must be non-negative, got {delta_a}")));
    }
    Ok(-slope * delta_a - offset)
}
