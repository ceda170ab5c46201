use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::config::{Arm, ExperimentConfig};
use super::metrics::{normalize_rewards, smooth_rewards, SMOOTH_PADLEN};
use super::HarnessError;
use crate::action::SplitAction;
use crate::agent::{AgentState, BasePolicy};
use crate::baselines::{lb_action, num_action, num_solve, sp_action, NumTolerances};
use crate::objective::reward;
use crate::replay::TransitionSample;
use crate::sim::{observation_to_state, EpochObservation, SimConfig, SimState};
use crate::topology::{make_sessions_with_paths, DemandWindow, NetworkGraph, SessionSpec};

/// Overrides `output_dir`.
pub const ENV_OUTPUT_DIR: &str = "DRLTE_OUTPUT_DIR";
/// Worker-thread count for parallel runs.
pub const ENV_JOBS: &str = "DRLTE_JOBS";

/// One (window, seed, arm) cell of the sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunSpec {
    pub arm: Arm,
    pub seed: u64,
    pub window_index: usize,
    pub window: DemandWindow,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRow {
    /// 1-based decision epoch.
    pub epoch: usize,
    pub reward: f64,
    pub reward_norm: f64,
    pub reward_smooth: f64,
    pub throughput_mbps: Vec<f64>,
    pub delay_ms: Vec<f64>,
    pub drops: u64,
    pub epsilon: f64,
    pub mean_abs_td: f64,
}

/// Means over the trailing evaluation span.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunSummary {
    pub eval_epochs: usize,
    pub mean_utility: f64,
    /// Per-session throughput averaged over sessions and epochs.
    pub mean_throughput_mbps: f64,
    /// Per-session delay averaged over sessions and epochs.
    pub mean_delay_ms: f64,
    pub total_drops: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub spec: RunSpec,
    pub rows: Vec<EpochRow>,
    pub summary: RunSummary,
}

impl RunRecord {
    pub fn rewards(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.reward).collect()
    }

    pub fn session_count(&self) -> usize {
        self.rows.first().map_or(0, |r| r.throughput_mbps.len())
    }
}

/// Independent sub-seed for one consumer of a run seed.
fn sub_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Reads `DRLTE_OUTPUT_DIR` into the config and returns the `DRLTE_JOBS`
/// worker count, if set.
pub fn apply_env_overrides(cfg: &mut ExperimentConfig) -> Result<Option<usize>, HarnessError> {
    if let Ok(dir) = std::env::var(ENV_OUTPUT_DIR) {
        if !dir.is_empty() {
            cfg.output_dir = PathBuf::from(dir);
        }
    }
    match std::env::var(ENV_JOBS) {
        Ok(v) if !v.is_empty() => match v.parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(HarnessError::Config(format!("{ENV_JOBS} must be a positive integer, got {v:?}"))),
        },
        _ => Ok(None),
    }
}

/// Runs every (window, seed, arm) cell on the default thread pool.
pub fn run_experiment(cfg: &ExperimentConfig, base_dir: Option<&Path>) -> Result<Vec<RunRecord>, HarnessError> {
    run_experiment_with(cfg, base_dir, None)
}

/// Runs every (window, seed, arm) cell, in parallel on `jobs` threads. Records
/// come back ordered by window, then seed, then arm.
pub fn run_experiment_with(
    cfg: &ExperimentConfig,
    base_dir: Option<&Path>,
    jobs: Option<usize>,
) -> Result<Vec<RunRecord>, HarnessError> {
    cfg.validate()?;
    let graph = cfg.topology.build(base_dir)?;
    let mut specs = Vec::new();
    for (window_index, window) in cfg.sessions.windows().into_iter().enumerate() {
        for &seed in &cfg.seeds {
            for &arm in &cfg.arms {
                specs.push(RunSpec { arm, seed, window_index, window });
            }
        }
    }
    let work = || specs.par_iter().map(|spec| run_single(cfg, &graph, spec)).collect();
    match jobs {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| HarnessError::Config(e.to_string()))?
            .install(work),
        None => work(),
    }
}

/// Sessions for one window and seed; every arm sees the same instance.
pub fn build_sessions(
    cfg: &ExperimentConfig,
    g: &NetworkGraph,
    window: DemandWindow,
    seed: u64,
) -> Result<Vec<SessionSpec>, HarnessError> {
    let p = &cfg.sessions;
    Ok(make_sessions_with_paths(g, p.count, window, p.paths_per_session, sub_seed(seed, 1))?)
}

fn base_action(policy: BasePolicy, g: &NetworkGraph, sessions: &[SessionSpec]) -> Result<SplitAction, HarnessError> {
    Ok(match policy {
        BasePolicy::Sp => sp_action(sessions),
        BasePolicy::Lb => lb_action(sessions),
        BasePolicy::Num => num_action(&num_solve(g, sessions, 1.0, &NumTolerances::default())?),
    })
}

struct Step {
    obs: EpochObservation,
    reward: f64,
    epsilon: f64,
    mean_abs_td: f64,
}

/// One run: a static policy, or the online learning loop, for `epochs`
/// decision epochs after one warm-up epoch that provides the initial state.
pub fn run_single(cfg: &ExperimentConfig, g: &NetworkGraph, spec: &RunSpec) -> Result<RunRecord, HarnessError> {
    let sessions = build_sessions(cfg, g, spec.window, spec.seed)?;
    let sim_cfg = SimConfig { seed: sub_seed(spec.seed, 2), ..cfg.sim };
    let mut sim = SimState::new(g, &sessions, sim_cfg)?;
    let mut steps = Vec::with_capacity(cfg.epochs);

    if spec.arm.is_learning() {
        let agent_cfg = cfg.agent_config(spec.arm, sub_seed(spec.seed, 3));
        let sizes = crate::action::path_sizes(&sessions);
        let mut agent = AgentState::new(agent_cfg, 2 * sessions.len(), &sizes)?;
        if agent_cfg.base_mixing {
            agent.set_base_action(&base_action(agent_cfg.base_policy, g, &sessions)?)?;
        }
        let warm = sim.run_epoch(&lb_action(&sessions))?;
        let mut state = observation_to_state(&warm, &cfg.state_norm);
        for t in 1..=cfg.epochs {
            let diverged = |source| HarnessError::Diverged { arm: spec.arm, seed: spec.seed, epoch: t, source };
            let (action, info) = agent.act_explore(&state).map_err(diverged)?;
            let obs = sim.run_epoch(&action)?;
            let r = reward(&obs, &cfg.utility)?;
            let next_state = observation_to_state(&obs, &cfg.state_norm);
            let transition = TransitionSample {
                state,
                action: action.to_flat(),
                reward: r * cfg.reward_scale,
                next_state: next_state.clone(),
            };
            let diag = agent.train_step(transition).map_err(diverged)?;
            steps.push(Step { obs, reward: r, epsilon: info.epsilon, mean_abs_td: diag.mean_abs_td });
            state = next_state;
        }
    } else {
        let action = match spec.arm {
            Arm::Sp => sp_action(&sessions),
            Arm::Lb => lb_action(&sessions),
            _ => base_action(BasePolicy::Num, g, &sessions)?,
        };
        sim.run_epoch(&action)?;
        for _ in 0..cfg.epochs {
            let obs = sim.run_epoch(&action)?;
            let r = reward(&obs, &cfg.utility)?;
            steps.push(Step { obs, reward: r, epsilon: 0.0, mean_abs_td: 0.0 });
        }
    }
    Ok(finish(cfg, *spec, steps))
}

fn finish(cfg: &ExperimentConfig, spec: RunSpec, steps: Vec<Step>) -> RunRecord {
    let raw: Vec<f64> = steps.iter().map(|s| s.reward).collect();
    let norm = normalize_rewards(&raw);
    // Too short to smooth: report the normalized series unchanged.
    let smooth = if raw.len() > SMOOTH_PADLEN {
        normalize_rewards(&smooth_rewards(&raw, cfg.smoothing_cutoff).expect("validated cutoff and length"))
    } else {
        norm.clone()
    };
    let rows: Vec<EpochRow> = steps
        .into_iter()
        .enumerate()
        .map(|(i, s)| EpochRow {
            epoch: i + 1,
            reward: s.reward,
            reward_norm: norm[i],
            reward_smooth: smooth[i],
            throughput_mbps: s.obs.throughput.iter().map(|x| x / 1e6).collect(),
            delay_ms: s.obs.delay.iter().map(|z| z * 1e3).collect(),
            drops: s.obs.total_drops(),
            epsilon: s.epsilon,
            mean_abs_td: s.mean_abs_td,
        })
        .collect();
    let summary = summarize(&rows, cfg.eval_span);
    RunRecord { spec, rows, summary }
}

fn summarize(rows: &[EpochRow], eval_span: usize) -> RunSummary {
    let span = &rows[rows.len().saturating_sub(eval_span.max(1))..];
    let n = span.len() as f64;
    let mean_of = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
    RunSummary {
        eval_epochs: span.len(),
        mean_utility: span.iter().map(|r| r.reward).sum::<f64>() / n,
        mean_throughput_mbps: span.iter().map(|r| mean_of(&r.throughput_mbps)).sum::<f64>() / n,
        mean_delay_ms: span.iter().map(|r| mean_of(&r.delay_ms)).sum::<f64>() / n,
        total_drops: span.iter().map(|r| r.drops).sum(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::TopologySource;

    fn tiny(arms: Vec<Arm>, epochs: usize) -> ExperimentConfig {
        let mut cfg = ExperimentConfig {
            topology: TopologySource::Random { nodes: 6, links: 14, seed: 3 },
            arms,
            epochs,
            eval_span: 5,
            seeds: vec![1],
            ..Default::default()
        };
        cfg.sessions.count = 3;
        cfg.sessions.window_lo_mbps = 10.0;
        cfg.sessions.window_hi_mbps = 30.0;
        cfg.sim.epoch_length = 0.01;
        cfg.agent.batch_size = 4;
        cfg
    }

    #[test]
    fn sub_seeds_differ() {
        assert_ne!(sub_seed(0, 1), sub_seed(0, 2));
        assert_ne!(sub_seed(0, 1), sub_seed(1, 1));
    }

    #[test]
    fn static_arm_rows_and_summary() {
        let cfg = tiny(vec![Arm::Lb], 12);
        let recs = run_experiment(&cfg, None).unwrap();
        assert_eq!(recs.len(), 1);
        let rec = &recs[0];
        assert_eq!(rec.rows.len(), 12);
        assert_eq!(rec.session_count(), 3);
        assert_eq!(rec.summary.eval_epochs, 5);
        assert!(rec.rows.iter().all(|r| r.epsilon == 0.0 && r.mean_abs_td == 0.0));
        let tail: f64 = rec.rows[7..].iter().map(|r| r.reward).sum::<f64>() / 5.0;
        assert!((rec.summary.mean_utility - tail).abs() < 1e-12);
    }

    #[test]
    fn single_epoch_learning_run_stores_one_transition() {
        let cfg = tiny(vec![Arm::DrlTe], 1);
        let rec = &run_experiment(&cfg, None).unwrap()[0];
        assert_eq!(rec.rows.len(), 1);
        assert_eq!(rec.rows[0].mean_abs_td, 0.0);
        assert_eq!(rec.rows[0].epsilon, 1.0);
        assert_eq!(rec.rows[0].reward_norm, 0.0);
    }

    #[test]
    fn learning_runs_are_deterministic() {
        let cfg = tiny(vec![Arm::DrlTe, Arm::Ddpg], 15);
        let a = run_experiment_with(&cfg, None, Some(2)).unwrap();
        let b = run_experiment_with(&cfg, None, Some(1)).unwrap();
        assert_eq!(a, b);
        assert!(a[0].rows.last().unwrap().mean_abs_td > 0.0);
    }
}
