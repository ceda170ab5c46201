//! Per-session split ratios over candidate paths.

use thiserror::Error;

use crate::topology::SessionSpec;

/// Tolerance on each session's ratio sum.
pub const SIMPLEX_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ActionError {
    #[error("action has {got} sessions, expected {expected}")]
    SessionCount { expected: usize, got: usize },
    #[error("session {session} has {got} ratios, expected {expected}")]
    PathCount { session: usize, expected: usize, got: usize },
    #[error("session {session} ratio {index} is invalid ({value})")]
    BadRatio { session: usize, index: usize, value: f64 },
    #[error("session {session} ratios sum to {sum}")]
    NotNormalized { session: usize, sum: f64 },
    #[error("flat action has {got} entries, expected {expected}")]
    FlatLength { expected: usize, got: usize },
}

/// Split ratios `w[k][j]`: the probability that a packet of session `k` is
/// sent along its `j`-th candidate path.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitAction {
    ratios: Vec<Vec<f64>>,
}

impl SplitAction {
    pub fn new(ratios: Vec<Vec<f64>>) -> Result<Self, ActionError> {
        for (k, block) in ratios.iter().enumerate() {
            check_block(k, block)?;
        }
        Ok(Self { ratios })
    }

    /// Splits a flat vector into per-session blocks of the given sizes.
    pub fn from_flat(flat: &[f64], sizes: &[usize]) -> Result<Self, ActionError> {
        let expected: usize = sizes.iter().sum();
        if flat.len() != expected {
            return Err(ActionError::FlatLength { expected, got: flat.len() });
        }
        let mut ratios = Vec::with_capacity(sizes.len());
        let mut at = 0;
        for &n in sizes {
            ratios.push(flat[at..at + n].to_vec());
            at += n;
        }
        Self::new(ratios)
    }

    /// Clips negatives to zero and renormalizes each block; a block with no
    /// positive mass becomes uniform.
    pub fn project(flat: &[f64], sizes: &[usize]) -> Result<Self, ActionError> {
        let expected: usize = sizes.iter().sum();
        if flat.len() != expected {
            return Err(ActionError::FlatLength { expected, got: flat.len() });
        }
        let mut ratios = Vec::with_capacity(sizes.len());
        let mut at = 0;
        for &n in sizes {
            let mut block: Vec<f64> =
                flat[at..at + n].iter().map(|&v| if v.is_finite() && v > 0.0 { v } else { 0.0 }).collect();
            let sum: f64 = block.iter().sum();
            if sum > 0.0 && sum.is_finite() {
                block.iter_mut().for_each(|v| *v /= sum);
            } else {
                block.iter_mut().for_each(|v| *v = 1.0 / n as f64);
            }
            ratios.push(block);
            at += n;
        }
        Self::new(ratios)
    }

    pub fn uniform(sizes: &[usize]) -> Self {
        Self { ratios: sizes.iter().map(|&n| vec![1.0 / n as f64; n]).collect() }
    }

    pub fn ratios(&self) -> &[Vec<f64>] {
        &self.ratios
    }

    pub fn session(&self, k: usize) -> &[f64] {
        &self.ratios[k]
    }

    pub fn session_count(&self) -> usize {
        self.ratios.len()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.ratios.iter().map(Vec::len).collect()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.ratios.iter().flatten().copied().collect()
    }

    /// Checks that the action matches the sessions' path counts.
    pub fn check_sessions(&self, sessions: &[SessionSpec]) -> Result<(), ActionError> {
        if self.ratios.len() != sessions.len() {
            return Err(ActionError::SessionCount { expected: sessions.len(), got: self.ratios.len() });
        }
        for (k, (block, s)) in self.ratios.iter().zip(sessions).enumerate() {
            if block.len() != s.paths.len() {
                return Err(ActionError::PathCount { session: k, expected: s.paths.len(), got: block.len() });
            }
        }
        Ok(())
    }
}

fn check_block(k: usize, block: &[f64]) -> Result<(), ActionError> {
    if block.is_empty() {
        return Err(ActionError::PathCount { session: k, expected: 1, got: 0 });
    }
    for (j, &v) in block.iter().enumerate() {
        if !v.is_finite() || v < 0.0 {
            return Err(ActionError::BadRatio { session: k, index: j, value: v });
        }
    }
    let sum: f64 = block.iter().sum();
    if (sum - 1.0).abs() > SIMPLEX_TOL {
        return Err(ActionError::NotNormalized { session: k, sum });
    }
    Ok(())
}

/// Path-count of every session, the block layout of flat actions.
pub fn path_sizes(sessions: &[SessionSpec]) -> Vec<usize> {
    sessions.iter().map(|s| s.paths.len()).collect()
}
