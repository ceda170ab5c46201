//! Actor-critic TE agent with TE-aware exploration and actor-critic
//! prioritized replay.
//!
//! Exploration: with probability `ε_t` the agent perturbs a base TE action,
//! otherwise the actor's output; both are perturbed by `ε_t · N` with `N`
//! uniform noise and projected back onto the per-session simplices.
//!
//! Training (one call per decision epoch): store the transition with maximal
//! priority, draw a prioritized mini-batch, accumulate importance-weighted
//! critic and actor changes over the batch, refresh the sampled priorities,
//! apply both changes once, then soft-update the target networks.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action::{ActionError, SplitAction};
use crate::nn::{self, AdamState, Gradients, LayerStack, Mlp, MlpShape, NnError, OutputMode};
use crate::replay::{anneal_beta1, compute_priority, PrioritizedBuffer, ReplayConfig, ReplayError, TransitionSample};

const AGENT_MAGIC: &[u8; 8] = b"DRLTEAGT";
const AGENT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("state has length {got}, expected {expected}")]
    StateDim { expected: usize, got: usize },
    #[error("action has length {got}, expected {expected}")]
    ActionDim { expected: usize, got: usize },
    #[error("non-finite value in {what} at epoch {epoch}")]
    Diverged { what: &'static str, epoch: u64 },
    #[error("invalid agent config: {0}")]
    Config(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Replay(#[from] ReplayError),
    #[error(transparent)]
    Action(#[from] ActionError),
}

/// Which non-learning policy seeds TE-aware exploration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum BasePolicy {
    Sp,
    Lb,
    Num,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    /// Plain gradient step `θ := θ + η·Δ`.
    Sgd,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentConfig {
    pub gamma: f64,
    pub tau: f64,
    pub lr_actor: f64,
    pub lr_critic: f64,
    pub batch_size: usize,
    pub epsilon0: f64,
    pub epsilon_decay: f64,
    pub epsilon_min: f64,
    /// Half-width of the uniform exploration noise, in ratio units.
    pub noise_amplitude: f64,
    /// Mix the base action into exploration; `false` gives plain DDPG
    /// exploration (actor output plus noise).
    pub base_mixing: bool,
    pub base_policy: BasePolicy,
    pub optimizer: OptimizerKind,
    pub replay: ReplayConfig,
    pub seed: u64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            tau: 0.01,
            lr_actor: 0.001,
            lr_critic: 0.01,
            batch_size: 64,
            epsilon0: 1.0,
            epsilon_decay: 0.9995,
            epsilon_min: 0.05,
            noise_amplitude: 0.5,
            base_mixing: true,
            base_policy: BasePolicy::Num,
            optimizer: OptimizerKind::Adam,
            replay: ReplayConfig::default(),
            seed: 0,
        }
    }
}

impl AgentConfig {
    /// Plain DDPG: uniform replay and no base mixing.
    pub fn ddpg() -> Self {
        Self { base_mixing: false, replay: ReplayConfig { beta0: 0.0, ..ReplayConfig::default() }, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), AgentError> {
        let ok = (0.0..=1.0).contains(&self.gamma)
            && self.tau > 0.0
            && self.tau <= 1.0
            && self.batch_size >= 1
            && (0.0..=1.0).contains(&self.epsilon0)
            && (0.0..=1.0).contains(&self.epsilon_decay)
            && (0.0..=1.0).contains(&self.epsilon_min)
            && self.noise_amplitude >= 0.0
            && self.lr_actor > 0.0
            && self.lr_critic > 0.0;
        if !ok {
            return Err(AgentError::Config(format!("{self:?}")));
        }
        self.replay.validate()?;
        Ok(())
    }
}

/// `max(ε_min, ε_0 · decay^t)`.
pub fn epsilon_at(cfg: &AgentConfig, t: u64) -> f64 {
    let decayed = cfg.epsilon0 * cfg.epsilon_decay.powf(t as f64);
    decayed.max(cfg.epsilon_min)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Exploration {
    pub epsilon: f64,
    pub used_base: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TrainDiagnostics {
    /// Whether a mini-batch update happened (buffer held a full batch).
    pub trained: bool,
    pub mean_abs_td: f64,
    pub mean_priority: f64,
    /// Mean squared TD error over the batch.
    pub critic_loss: f64,
    /// Mean `Q(s, π(s))` over the batch.
    pub actor_value: f64,
    pub beta1: f64,
}

enum Optimizer {
    Adam(AdamState),
    Sgd(f64),
}

impl Optimizer {
    fn new(kind: OptimizerKind, net: &Mlp, lr: f64) -> Self {
        match kind {
            OptimizerKind::Adam => Self::Adam(AdamState::new(net, lr)),
            OptimizerKind::Sgd => Self::Sgd(lr),
        }
    }

    fn step(&mut self, net: &mut Mlp, grad: &Gradients) -> Result<(), NnError> {
        match self {
            Self::Adam(st) => nn::adam_step(net, grad, st),
            Self::Sgd(lr) => {
                if !grad.is_finite() {
                    return Err(NnError::NonFinite("gradient"));
                }
                net.params.add_scaled(grad, -*lr);
                Ok(())
            }
        }
    }
}

pub struct AgentState {
    cfg: AgentConfig,
    pub actor: Mlp,
    pub critic: Mlp,
    pub target_actor: Mlp,
    pub target_critic: Mlp,
    actor_opt: Optimizer,
    critic_opt: Optimizer,
    buffer: PrioritizedBuffer,
    path_sizes: Vec<usize>,
    state_dim: usize,
    action_dim: usize,
    epoch: u64,
    base_action: Option<Vec<f64>>,
    explore_rng: ChaCha8Rng,
    replay_rng: ChaCha8Rng,
}

impl AgentState {
    /// Standard actor and critic (two hidden layers of 64 and 32 units).
    pub fn new(cfg: AgentConfig, state_dim: usize, path_sizes: &[usize]) -> Result<Self, AgentError> {
        let action_dim: usize = path_sizes.iter().sum();
        let actor = Mlp::init(
            &MlpShape::standard(state_dim, action_dim),
            OutputMode::GroupedSoftmax(path_sizes.to_vec()),
            cfg.seed.wrapping_mul(4).wrapping_add(1),
        )?;
        let critic = Mlp::init(
            &MlpShape::standard(state_dim + action_dim, 1),
            OutputMode::Identity,
            cfg.seed.wrapping_mul(4).wrapping_add(2),
        )?;
        Self::from_networks(cfg, actor, critic, path_sizes)
    }

    /// Wraps caller-supplied online networks; targets start as exact copies.
    pub fn from_networks(cfg: AgentConfig, actor: Mlp, critic: Mlp, path_sizes: &[usize]) -> Result<Self, AgentError> {
        cfg.validate()?;
        let action_dim: usize = path_sizes.iter().sum();
        let state_dim = actor.input_dim();
        if actor.output_dim() != action_dim {
            return Err(AgentError::ActionDim { expected: action_dim, got: actor.output_dim() });
        }
        if critic.input_dim() != state_dim + action_dim || critic.output_dim() != 1 {
            return Err(AgentError::Config("critic must map state+action to a scalar".into()));
        }
        let mut explore_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        explore_rng.set_stream(1);
        let mut replay_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        replay_rng.set_stream(2);
        Ok(Self {
            actor_opt: Optimizer::new(cfg.optimizer, &actor, cfg.lr_actor),
            critic_opt: Optimizer::new(cfg.optimizer, &critic, cfg.lr_critic),
            target_actor: actor.clone(),
            target_critic: critic.clone(),
            actor,
            critic,
            buffer: PrioritizedBuffer::new(cfg.replay)?,
            path_sizes: path_sizes.to_vec(),
            state_dim,
            action_dim,
            epoch: 0,
            base_action: None,
            explore_rng,
            replay_rng,
            cfg,
        })
    }

    pub fn config(&self) -> &AgentConfig {
        &self.cfg
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn buffer(&self) -> &PrioritizedBuffer {
        &self.buffer
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn path_sizes(&self) -> &[usize] {
        &self.path_sizes
    }

    /// Caches the base TE action used by exploration.
    pub fn set_base_action(&mut self, base: &SplitAction) -> Result<(), AgentError> {
        let flat = base.to_flat();
        if base.sizes() != self.path_sizes {
            return Err(AgentError::ActionDim { expected: self.action_dim, got: flat.len() });
        }
        self.base_action = Some(flat);
        Ok(())
    }

    pub fn epsilon(&self) -> f64 {
        epsilon_at(&self.cfg, self.epoch)
    }

    fn check_state(&self, state: &[f64]) -> Result<(), AgentError> {
        if state.len() != self.state_dim {
            return Err(AgentError::StateDim { expected: self.state_dim, got: state.len() });
        }
        Ok(())
    }

    /// Deterministic actor output.
    pub fn act_greedy(&self, state: &[f64]) -> Result<SplitAction, AgentError> {
        self.check_state(state)?;
        let out = self.actor.predict(state)?;
        Ok(SplitAction::from_flat(&out, &self.path_sizes)?)
    }

    /// TE-aware exploration at the current epoch's `ε_t`.
    pub fn act_explore(&mut self, state: &[f64]) -> Result<(SplitAction, Exploration), AgentError> {
        let eps = self.epsilon();
        self.act_explore_with(state, eps)
    }

    /// TE-aware exploration at an explicit `ε`.
    pub fn act_explore_with(&mut self, state: &[f64], eps: f64) -> Result<(SplitAction, Exploration), AgentError> {
        self.check_state(state)?;
        let draw: f64 = self.explore_rng.random();
        let used_base = self.cfg.base_mixing && self.base_action.is_some() && draw < eps;
        let mut flat = match (&self.base_action, used_base) {
            (Some(base), true) => base.clone(),
            _ => self.actor.predict(state)?,
        };
        let amp = eps * self.cfg.noise_amplitude;
        let action = if amp > 0.0 {
            for v in &mut flat {
                *v += amp * self.explore_rng.random_range(-1.0..=1.0);
            }
            SplitAction::project(&flat, &self.path_sizes)?
        } else {
            SplitAction::from_flat(&flat, &self.path_sizes)?
        };
        Ok((action, Exploration { epsilon: eps, used_base }))
    }

    /// One decision epoch of learning.
    pub fn train_step(&mut self, transition: TransitionSample) -> Result<TrainDiagnostics, AgentError> {
        self.check_state(&transition.state)?;
        self.check_state(&transition.next_state)?;
        if transition.action.len() != self.action_dim {
            return Err(AgentError::ActionDim { expected: self.action_dim, got: transition.action.len() });
        }
        if !transition.is_finite() {
            return Err(AgentError::Diverged { what: "transition", epoch: self.epoch });
        }
        self.buffer.insert(transition);
        self.epoch += 1;
        let n = self.cfg.batch_size;
        if self.buffer.len() < n {
            return Ok(TrainDiagnostics::default());
        }

        let beta1 = anneal_beta1(&self.cfg.replay, self.epoch as usize);
        let batch = self.buffer.sample_batch(n, beta1, &mut self.replay_rng)?;
        let mut critic_grad = LayerStack::zeros_like(&self.critic.params);
        let mut actor_grad = LayerStack::zeros_like(&self.actor.params);
        let mut diag = TrainDiagnostics { trained: true, beta1, ..Default::default() };
        let mut input = Vec::with_capacity(self.state_dim + self.action_dim);

        for s in &batch {
            let tr = &s.transition;
            // y = r + γ Q'(s', π'(s'))
            let next_action = self.target_actor.predict(&tr.next_state)?;
            join(&mut input, &tr.next_state, &next_action);
            let next_q = self.target_critic.predict(&input)?[0];
            let y = tr.reward + self.cfg.gamma * next_q;

            join(&mut input, &tr.state, &tr.action);
            let cache = self.critic.forward(&input)?;
            let td = y - cache.output()[0];
            // Descent on ½ω δ² accumulates ω δ ∇θQ as an ascent change.
            let g = self.critic.backward_params(&cache, &[-s.weight * td])?;
            critic_grad.add_scaled(&g, 1.0);

            // ∇θπ J = ∇a Q(s, a)|a=π(s) · ∇θπ π(s)
            let actor_cache = self.actor.forward(&tr.state)?;
            join(&mut input, &tr.state, actor_cache.output());
            let q_cache = self.critic.forward(&input)?;
            let action_grad = self.critic.backward_input(&q_cache, &[1.0])?.split_off(self.state_dim);
            let neg: Vec<f64> = action_grad.iter().map(|g| -s.weight * g).collect();
            let g = self.actor.backward_params(&actor_cache, &neg)?;
            actor_grad.add_scaled(&g, 1.0);

            let priority = compute_priority(td, &action_grad, &self.cfg.replay)
                .map_err(|_| AgentError::Diverged { what: "priority", epoch: self.epoch })?;
            self.buffer.update_priority(s.index, priority)?;

            diag.mean_abs_td += td.abs();
            diag.mean_priority += priority;
            diag.critic_loss += td * td;
            diag.actor_value += q_cache.output()[0];
        }
        let nf = n as f64;
        diag.mean_abs_td /= nf;
        diag.mean_priority /= nf;
        diag.critic_loss /= nf;
        diag.actor_value /= nf;

        let epoch = self.epoch;
        let diverged = |what| move |_| AgentError::Diverged { what, epoch };
        self.critic_opt.step(&mut self.critic, &critic_grad).map_err(diverged("critic gradient"))?;
        self.actor_opt.step(&mut self.actor, &actor_grad).map_err(diverged("actor gradient"))?;
        self.target_critic.soft_update(&self.critic, self.cfg.tau)?;
        self.target_actor.soft_update(&self.actor, self.cfg.tau)?;
        if !self.critic.params.is_finite() || !self.actor.params.is_finite() {
            return Err(AgentError::Diverged { what: "network parameters", epoch });
        }
        Ok(diag)
    }

    /// Writes the four networks, optimizer state and epoch counter.
    pub fn save(&self, w: &mut impl Write) -> Result<(), AgentError> {
        w.write_all(AGENT_MAGIC).map_err(NnError::from)?;
        nn::put_u32(w, AGENT_VERSION).map_err(NnError::from)?;
        nn::put_u64(w, self.epoch).map_err(NnError::from)?;
        for net in [&self.actor, &self.critic, &self.target_actor, &self.target_critic] {
            net.write_to(w)?;
        }
        for opt in [&self.actor_opt, &self.critic_opt] {
            match opt {
                Optimizer::Adam(st) => {
                    w.write_all(&[0]).map_err(NnError::from)?;
                    st.write_to(w)?;
                }
                Optimizer::Sgd(lr) => {
                    w.write_all(&[1]).map_err(NnError::from)?;
                    nn::put_f64(w, *lr).map_err(NnError::from)?;
                }
            }
        }
        Ok(())
    }

    /// Restores networks, optimizers and epoch counter saved by [`save`](Self::save).
    /// The replay buffer is not persisted and starts empty.
    pub fn load(cfg: AgentConfig, path_sizes: &[usize], r: &mut impl Read) -> Result<Self, AgentError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(NnError::from)?;
        if &magic != AGENT_MAGIC {
            return Err(NnError::Checkpoint("bad agent magic".into()).into());
        }
        let version = nn::get_u32(r).map_err(NnError::from)?;
        if version != AGENT_VERSION {
            return Err(NnError::Checkpoint(format!("unsupported agent version {version}")).into());
        }
        let epoch = nn::get_u64(r).map_err(NnError::from)?;
        let actor = Mlp::read_from(r)?;
        let critic = Mlp::read_from(r)?;
        let target_actor = Mlp::read_from(r)?;
        let target_critic = Mlp::read_from(r)?;
        let mut agent = Self::from_networks(cfg, actor, critic, path_sizes)?;
        agent.target_actor = target_actor;
        agent.target_critic = target_critic;
        agent.epoch = epoch;
        let mut read_opt = |net: &Mlp| -> Result<Optimizer, AgentError> {
            let mut tag = [0u8; 1];
            r.read_exact(&mut tag).map_err(NnError::from)?;
            match tag[0] {
                0 => Ok(Optimizer::Adam(AdamState::read_from(r, net)?)),
                1 => Ok(Optimizer::Sgd(nn::get_f64(r).map_err(NnError::from)?)),
                t => Err(NnError::Checkpoint(format!("unknown optimizer tag {t}")).into()),
            }
        };
        agent.actor_opt = read_opt(&agent.actor)?;
        agent.critic_opt = read_opt(&agent.critic)?;
        Ok(agent)
    }
}

fn join(buf: &mut Vec<f64>, a: &[f64], b: &[f64]) {
    buf.clear();
    buf.extend_from_slice(a);
    buf.extend_from_slice(b);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Dense, HiddenActivation};

    fn small_agent(cfg: AgentConfig) -> AgentState {
        AgentState::new(cfg, 4, &[3, 2]).unwrap()
    }

    fn transition(seed: f64) -> TransitionSample {
        TransitionSample {
            state: vec![seed, 0.2, 0.3, 0.4],
            action: vec![0.2, 0.3, 0.5, 0.6, 0.4],
            reward: seed,
            next_state: vec![0.5, seed, 0.1, 0.9],
        }
    }

    #[test]
    fn epsilon_schedule() {
        let cfg = AgentConfig { epsilon0: 1.0, epsilon_decay: 0.5, epsilon_min: 0.05, ..Default::default() };
        assert_eq!(epsilon_at(&cfg, 0), 1.0);
        assert_eq!(epsilon_at(&cfg, 2), 0.25);
        assert_eq!(epsilon_at(&cfg, 10_000), 0.05);
        let mut prev = 1.0;
        for t in 0..100 {
            let e = epsilon_at(&cfg, t);
            assert!(e <= prev);
            prev = e;
        }
    }

    #[test]
    fn targets_start_identical() {
        let a = small_agent(AgentConfig::default());
        assert_eq!(a.actor, a.target_actor);
        assert_eq!(a.critic, a.target_critic);
    }

    #[test]
    fn zero_epsilon_is_actor_output() {
        let mut a = small_agent(AgentConfig::default());
        a.set_base_action(&SplitAction::uniform(&[3, 2])).unwrap();
        let s = [0.1, 0.2, 0.3, 0.4];
        let greedy = a.act_greedy(&s).unwrap();
        let (explored, info) = a.act_explore_with(&s, 0.0).unwrap();
        assert_eq!(explored, greedy);
        assert!(!info.used_base);
    }

    #[test]
    fn full_epsilon_without_noise_is_base() {
        let cfg = AgentConfig { noise_amplitude: 0.0, ..Default::default() };
        let mut a = small_agent(cfg);
        let base = SplitAction::new(vec![vec![1.0, 0.0, 0.0], vec![0.25, 0.75]]).unwrap();
        a.set_base_action(&base).unwrap();
        let (act, info) = a.act_explore_with(&[0.0; 4], 1.0).unwrap();
        assert_eq!(act, base);
        assert!(info.used_base);
        assert!(matches!(a.act_explore_with(&[0.0; 3], 1.0), Err(AgentError::StateDim { .. })));
    }

    #[test]
    fn zero_weight_actor_is_uniform() {
        let mut a = small_agent(AgentConfig::default());
        a.actor.params.iter_mut().for_each(|v| *v = 0.0);
        let act = a.act_greedy(&[0.7, 0.1, 0.0, 1.0]).unwrap();
        assert!(act.session(0).iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-15));
        assert_eq!(act.session(1), &[0.5, 0.5]);
    }

    #[test]
    fn warmup_changes_nothing() {
        let mut a = small_agent(AgentConfig { batch_size: 4, ..Default::default() });
        let (actor, critic) = (a.actor.clone(), a.critic.clone());
        for i in 0..3 {
            let d = a.train_step(transition(i as f64)).unwrap();
            assert!(!d.trained);
        }
        assert_eq!(a.buffer().len(), 3);
        assert_eq!((&a.actor, &a.critic), (&actor, &critic));
        assert_eq!((&a.target_actor, &a.target_critic), (&actor, &critic));
        let d = a.train_step(transition(3.0)).unwrap();
        assert!(d.trained);
        assert_ne!(a.critic, critic);
    }

    #[test]
    fn tau_one_copies_online() {
        let mut a = small_agent(AgentConfig { batch_size: 2, tau: 1.0, ..Default::default() });
        a.train_step(transition(0.0)).unwrap();
        a.train_step(transition(1.0)).unwrap();
        assert_eq!(a.target_actor.params, a.actor.params);
        assert_eq!(a.target_critic.params, a.critic.params);
    }

    #[test]
    fn rejects_bad_transitions() {
        let mut a = small_agent(AgentConfig::default());
        let mut t = transition(0.0);
        t.action.pop();
        assert!(matches!(a.train_step(t), Err(AgentError::ActionDim { .. })));
        let mut t = transition(0.0);
        t.reward = f64::NAN;
        assert!(matches!(a.train_step(t), Err(AgentError::Diverged { .. })));
    }

    #[test]
    fn checkpoint_roundtrip() {
        let mut a = small_agent(AgentConfig { batch_size: 2, ..Default::default() });
        for i in 0..5 {
            a.train_step(transition(i as f64)).unwrap();
        }
        let mut buf = Vec::new();
        a.save(&mut buf).unwrap();
        let b = AgentState::load(*a.config(), &[3, 2], &mut buf.as_slice()).unwrap();
        assert_eq!(b.epoch(), 5);
        assert_eq!((&b.actor, &b.critic), (&a.actor, &a.critic));
        assert_eq!((&b.target_actor, &b.target_critic), (&a.target_actor, &a.target_critic));
        match (&a.critic_opt, &b.critic_opt) {
            (Optimizer::Adam(x), Optimizer::Adam(y)) => assert_eq!(x, y),
            _ => panic!("optimizer kind changed"),
        }
    }

    #[test]
    fn rejects_mismatched_networks() {
        let actor = Mlp {
            params: LayerStack { layers: vec![Dense { inputs: 1, outputs: 2, weights: vec![0.0; 2], bias: vec![0.0; 2] }] },
            hidden: HiddenActivation::Identity,
            output: OutputMode::GroupedSoftmax(vec![2]),
        };
        let critic = Mlp {
            params: LayerStack { layers: vec![Dense { inputs: 2, outputs: 1, weights: vec![0.0; 2], bias: vec![0.0] }] },
            hidden: HiddenActivation::Identity,
            output: OutputMode::Identity,
        };
        assert!(AgentState::from_networks(AgentConfig::default(), actor, critic, &[2]).is_err());
    }
}
