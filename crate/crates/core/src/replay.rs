//! Prioritized experience replay backed by a sum-tree.
//!
//! A transition's priority mixes its TD error (critic) with the mean absolute
//! action-gradient of the critic (actor). Sampling probability is
//! `p_i^β0 / Σ_j p_j^β0`; importance weights `(|B| P(i))^(-β1)` are
//! normalized by their maximum within the sampled batch.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReplayError {
    #[error("buffer holds {have} samples, batch of {want} requested")]
    Insufficient { have: usize, want: usize },
    #[error("index {0} is not a stored sample")]
    BadIndex(usize),
    #[error("priority must be positive and finite, got {0}")]
    BadPriority(f64),
    #[error("non-finite input to priority computation")]
    NonFinite,
    #[error("invalid replay config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReplayConfig {
    pub capacity: usize,
    /// Prioritization exponent; 0 gives uniform sampling.
    pub beta0: f64,
    /// Initial importance-sampling exponent, annealed linearly to 1.
    pub beta1_start: f64,
    /// Priority offset keeping zero-error samples reachable.
    pub xi: f64,
    /// Weight of the TD-error term against the action-gradient term.
    pub phi: f64,
    pub anneal_epochs: usize,
}

impl Default for ReplayConfig {
    fn default() -> Self {
        Self { capacity: 1 << 17, beta0: 0.6, beta1_start: 0.4, xi: 0.01, phi: 0.6, anneal_epochs: 10_000 }
    }
}

impl ReplayConfig {
    pub fn validate(&self) -> Result<(), ReplayError> {
        let ok = self.capacity >= 1
            && self.beta0 >= 0.0
            && self.beta1_start > 0.0
            && self.beta1_start <= 1.0
            && self.xi > 0.0
            && (0.0..=1.0).contains(&self.phi);
        if ok {
            Ok(())
        } else {
            Err(ReplayError::Config(format!("{self:?}")))
        }
    }
}

/// `φ·(|δ| + ξ) + (1 − φ)·mean(|∇_a Q|)`.
pub fn compute_priority(td_error: f64, action_grad: &[f64], cfg: &ReplayConfig) -> Result<f64, ReplayError> {
    if !td_error.is_finite() || action_grad.iter().any(|g| !g.is_finite()) {
        return Err(ReplayError::NonFinite);
    }
    let grad_term = if action_grad.is_empty() {
        0.0
    } else {
        action_grad.iter().map(|g| g.abs()).sum::<f64>() / action_grad.len() as f64
    };
    Ok(cfg.phi * (td_error.abs() + cfg.xi) + (1.0 - cfg.phi) * grad_term)
}

/// Importance-sampling exponent at `epoch`: linear from `beta1_start` to 1
/// over `anneal_epochs`, then held at 1.
pub fn anneal_beta1(cfg: &ReplayConfig, epoch: usize) -> f64 {
    if cfg.anneal_epochs == 0 || epoch >= cfg.anneal_epochs {
        return 1.0;
    }
    cfg.beta1_start + (1.0 - cfg.beta1_start) * epoch as f64 / cfg.anneal_epochs as f64
}

/// Complete binary tree over a power-of-two number of leaves; every internal
/// node holds the sum of its children, so the root is the total.
#[derive(Debug, Clone)]
pub struct SumTree {
    leaves: usize,
    sums: Vec<f64>,
    maxes: Vec<f64>,
    ops: u64,
}

impl SumTree {
    /// Rounds `capacity` up to a power of two.
    pub fn new(capacity: usize) -> Self {
        let leaves = capacity.max(1).next_power_of_two();
        Self { leaves, sums: vec![0.0; 2 * leaves], maxes: vec![0.0; 2 * leaves], ops: 0 }
    }

    pub fn leaf_count(&self) -> usize {
        self.leaves
    }

    pub fn total(&self) -> f64 {
        self.sums[1]
    }

    pub fn max(&self) -> f64 {
        self.maxes[1]
    }

    pub fn get(&self, leaf: usize) -> f64 {
        self.sums[self.leaves + leaf]
    }

    /// Node visits performed by `set` and `find` so far.
    pub fn op_count(&self) -> u64 {
        self.ops
    }

    /// Sets a leaf and recomputes its ancestors.
    pub fn set(&mut self, leaf: usize, value: f64) {
        let mut i = self.leaves + leaf;
        self.sums[i] = value;
        self.maxes[i] = value;
        while i > 1 {
            i /= 2;
            self.sums[i] = self.sums[2 * i] + self.sums[2 * i + 1];
            self.maxes[i] = self.maxes[2 * i].max(self.maxes[2 * i + 1]);
            self.ops += 1;
        }
    }

    /// Leaf whose prefix-sum interval contains `u` (for `0 <= u < total`).
    pub fn find(&mut self, mut u: f64) -> usize {
        let mut i = 1;
        while i < self.leaves {
            let left = self.sums[2 * i];
            let right = self.sums[2 * i + 1];
            if u < left || right <= 0.0 {
                i *= 2;
            } else {
                u -= left;
                i = 2 * i + 1;
            }
            self.ops += 1;
        }
        i - self.leaves
    }

    /// Checks that every internal node equals the sum of its children.
    pub fn audit(&self) -> bool {
        (1..self.leaves).all(|i| self.sums[i] == self.sums[2 * i] + self.sums[2 * i + 1])
    }
}

/// One `(s, a, r, s')` record.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionSample {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_state: Vec<f64>,
}

impl TransitionSample {
    pub fn is_finite(&self) -> bool {
        self.reward.is_finite()
            && self.state.iter().chain(&self.action).chain(&self.next_state).all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sampled {
    pub index: usize,
    pub transition: TransitionSample,
    /// Normalized importance-sampling weight in (0, 1].
    pub weight: f64,
    pub probability: f64,
}

/// Ring buffer of transitions with sum-tree prioritized sampling.
#[derive(Debug, Clone)]
pub struct PrioritizedBuffer {
    cfg: ReplayConfig,
    tree: SumTree,
    // Raw priorities; its max-tree yields the insertion priority.
    raw: SumTree,
    priorities: Vec<f64>,
    data: Vec<TransitionSample>,
    cursor: usize,
}

impl PrioritizedBuffer {
    pub fn new(cfg: ReplayConfig) -> Result<Self, ReplayError> {
        cfg.validate()?;
        Ok(Self {
            tree: SumTree::new(cfg.capacity),
            raw: SumTree::new(cfg.capacity),
            priorities: Vec::new(),
            data: Vec::new(),
            cursor: 0,
            cfg,
        })
    }

    pub fn config(&self) -> &ReplayConfig {
        &self.cfg
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.cfg.capacity
    }

    pub fn tree(&self) -> &SumTree {
        &self.tree
    }

    pub fn get(&self, index: usize) -> Option<&TransitionSample> {
        self.data.get(index)
    }

    pub fn priority(&self, index: usize) -> Option<f64> {
        self.priorities.get(index).copied()
    }

    pub fn max_priority(&self) -> f64 {
        self.raw.max()
    }

    /// Stores `t` with the largest priority currently held (1 when empty),
    /// overwriting the oldest sample once full. Returns the slot index.
    pub fn insert(&mut self, t: TransitionSample) -> usize {
        let priority = if self.data.is_empty() { 1.0 } else { self.raw.max() };
        let slot = self.cursor;
        if self.data.len() < self.cfg.capacity {
            self.data.push(t);
            self.priorities.push(priority);
        } else {
            self.data[slot] = t;
            self.priorities[slot] = priority;
        }
        self.tree.set(slot, self.leaf_value(priority));
        self.raw.set(slot, priority);
        self.cursor = (self.cursor + 1) % self.cfg.capacity;
        slot
    }

    pub fn update_priority(&mut self, index: usize, priority: f64) -> Result<(), ReplayError> {
        if index >= self.data.len() {
            return Err(ReplayError::BadIndex(index));
        }
        if !(priority > 0.0) || !priority.is_finite() {
            return Err(ReplayError::BadPriority(priority));
        }
        self.priorities[index] = priority;
        self.tree.set(index, self.leaf_value(priority));
        self.raw.set(index, priority);
        Ok(())
    }

    /// Stratified proportional sampling: `[0, total)` is cut into `n` equal
    /// ranges and one point is drawn uniformly inside each.
    pub fn sample_batch(&mut self, n: usize, beta1: f64, rng: &mut impl Rng) -> Result<Vec<Sampled>, ReplayError> {
        if n == 0 || self.data.len() < n {
            return Err(ReplayError::Insufficient { have: self.data.len(), want: n });
        }
        let total = self.tree.total();
        let segment = total / n as f64;
        let size = self.data.len() as f64;
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let u = (segment * (i as f64 + rng.random::<f64>())).min(total * (1.0 - f64::EPSILON));
            let index = self.tree.find(u).min(self.data.len() - 1);
            let probability = self.tree.get(index) / total;
            let weight = (size * probability).powf(-beta1);
            out.push(Sampled { index, transition: self.data[index].clone(), weight, probability });
        }
        let max = out.iter().map(|s| s.weight).fold(0.0, f64::max);
        for s in &mut out {
            s.weight /= max;
        }
        Ok(out)
    }

    fn leaf_value(&self, priority: f64) -> f64 {
        priority.powf(self.cfg.beta0)
    }
}
