//! α-fair utilities and the per-epoch reward.
//!
//! Throughput enters the utility in Mbps and delay in milliseconds. Changing
//! units only shifts each session's utility by a constant.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sim::EpochObservation;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ObjectiveError {
    #[error("utility undefined for nonpositive argument {0}")]
    NonPositive(f64),
    #[error("invalid utility config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UtilityConfig {
    pub alpha1: f64,
    pub alpha2: f64,
    pub sigma: f64,
}

impl Default for UtilityConfig {
    fn default() -> Self {
        Self { alpha1: 1.0, alpha2: 1.0, sigma: 1.0 }
    }
}

impl UtilityConfig {
    pub fn validate(&self) -> Result<(), ObjectiveError> {
        if !(self.alpha1 > 0.0) || !(self.alpha2 > 0.0) || !(self.sigma >= 0.0) {
            return Err(ObjectiveError::Config(format!("{self:?}")));
        }
        Ok(())
    }
}

/// `x^(1-α)/(1-α)`, or `ln x` exactly when `α == 1`.
pub fn alpha_utility(x: f64, alpha: f64) -> Result<f64, ObjectiveError> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(ObjectiveError::NonPositive(x));
    }
    if alpha == 1.0 {
        Ok(x.ln())
    } else {
        Ok(x.powf(1.0 - alpha) / (1.0 - alpha))
    }
}

/// Utility of one session from throughput (bits/s) and delay (seconds).
pub fn session_utility(x_bps: f64, z_s: f64, cfg: &UtilityConfig) -> Result<f64, ObjectiveError> {
    let throughput = alpha_utility(x_bps / 1e6, cfg.alpha1)?;
    let delay = alpha_utility(z_s * 1e3, cfg.alpha2)?;
    Ok(throughput - cfg.sigma * delay)
}

/// Total utility over all sessions of an epoch.
pub fn reward(obs: &EpochObservation, cfg: &UtilityConfig) -> Result<f64, ObjectiveError> {
    obs.throughput
        .iter()
        .zip(&obs.delay)
        .map(|(&x, &z)| session_utility(x, z, cfg))
        .sum()
}
