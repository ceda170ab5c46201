//! Shared fixtures for the criterion benches.

use drlte::topology::{make_sessions, BundledTopology, DemandWindow, NetworkGraph, SessionSpec};
use drlte::TransitionSample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// NSFNET with `k` sessions drawn from the [10, 30] Mbps window.
pub fn nsfnet_sessions(k: usize, seed: u64) -> (NetworkGraph, Vec<SessionSpec>) {
    let g = BundledTopology::Nsfnet.load();
    let sessions = make_sessions(&g, k, DemandWindow::from_mbps(10.0, 30.0), seed).expect("NSFNET has enough pairs");
    (g, sessions)
}

pub fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

pub fn random_transition(rng: &mut ChaCha8Rng, state_dim: usize, action: &[f64]) -> TransitionSample {
    TransitionSample {
        state: random_vec(rng, state_dim),
        action: action.to_vec(),
        reward: rng.random_range(0.0..50.0),
        next_state: random_vec(rng, state_dim),
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
