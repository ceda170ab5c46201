use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::agent::AgentConfig;
use crate::objective::UtilityConfig;
use crate::replay::ReplayConfig;
use crate::sim::{SimConfig, StateNorm};
use crate::topology::{generate_random_topology, load_topology_file, BundledTopology, DemandWindow, NetworkGraph};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Arm {
    #[serde(rename = "DRL-TE")]
    DrlTe,
    #[serde(rename = "DDPG")]
    Ddpg,
    #[serde(rename = "SP")]
    Sp,
    #[serde(rename = "LB")]
    Lb,
    #[serde(rename = "NUM")]
    Num,
}

impl Arm {
    pub const ALL: [Arm; 5] = [Arm::DrlTe, Arm::Ddpg, Arm::Sp, Arm::Lb, Arm::Num];

    pub fn is_learning(self) -> bool {
        matches!(self, Arm::DrlTe | Arm::Ddpg)
    }

    pub fn label(self) -> &'static str {
        match self {
            Arm::DrlTe => "DRL-TE",
            Arm::Ddpg => "DDPG",
            Arm::Sp => "SP",
            Arm::Lb => "LB",
            Arm::Num => "NUM",
        }
    }
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl std::str::FromStr for Arm {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Arm::ALL
            .into_iter()
            .find(|a| a.label().eq_ignore_ascii_case(s))
            .ok_or_else(|| HarnessError::Config(format!("unknown arm {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TopologySource {
    Bundled(BundledTopology),
    File(PathBuf),
    Random { nodes: usize, links: usize, seed: u64 },
}

impl TopologySource {
    /// Relative file paths resolve against `base`.
    pub fn build(&self, base: Option<&Path>) -> Result<NetworkGraph, HarnessError> {
        Ok(match self {
            Self::Bundled(t) => t.load(),
            Self::File(p) => match base {
                Some(b) if p.is_relative() => load_topology_file(b.join(p))?,
                _ => load_topology_file(p)?,
            },
            Self::Random { nodes, links, seed } => generate_random_topology(*nodes, *links, *seed)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionPlan {
    pub count: usize,
    pub window_lo_mbps: f64,
    pub window_hi_mbps: f64,
    pub slide_step_mbps: f64,
    /// Number of window positions in the sweep.
    pub windows: usize,
    pub paths_per_session: usize,
}

impl Default for SessionPlan {
    fn default() -> Self {
        Self {
            count: 20,
            window_lo_mbps: 0.0,
            window_hi_mbps: 20.0,
            slide_step_mbps: 5.0,
            windows: 1,
            paths_per_session: 3,
        }
    }
}

impl SessionPlan {
    /// Window positions `[lo + i·step, hi + i·step]`.
    pub fn windows(&self) -> Vec<DemandWindow> {
        (0..self.windows)
            .map(|i| {
                let shift = i as f64 * self.slide_step_mbps;
                DemandWindow::from_mbps(self.window_lo_mbps + shift, self.window_hi_mbps + shift)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub topology: TopologySource,
    pub sessions: SessionPlan,
    pub arms: Vec<Arm>,
    /// Decision epochs per run.
    pub epochs: usize,
    /// Trailing epochs summarized per run.
    pub eval_span: usize,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    /// Multiplier applied to rewards before they reach the learner.
    pub reward_scale: f64,
    pub smoothing_cutoff: f64,
    pub agent: AgentConfig,
    pub sim: SimConfig,
    pub utility: UtilityConfig,
    pub state_norm: StateNorm,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            topology: TopologySource::Bundled(BundledTopology::Nsfnet),
            sessions: SessionPlan::default(),
            arms: Arm::ALL.to_vec(),
            epochs: 10_000,
            eval_span: 1000,
            seeds: (0..5).collect(),
            output_dir: PathBuf::from("results"),
            reward_scale: 1.0,
            smoothing_cutoff: super::metrics::DEFAULT_CUTOFF,
            agent: AgentConfig::default(),
            sim: SimConfig::default(),
            utility: UtilityConfig::default(),
            state_norm: StateNorm::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let cfg: Self = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path.as_ref())?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: &str| Err(HarnessError::Config(m.to_string()));
        if self.version != CONFIG_VERSION {
            return Err(HarnessError::Config(format!(
                "unsupported config version {} (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        let s = &self.sessions;
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required");
        }
        if self.arms.is_empty() {
            return bad("at least one arm is required");
        }
        if !(s.window_hi_mbps > s.window_lo_mbps) || !(s.window_lo_mbps >= 0.0) {
            return bad("demand window needs 0 <= lo < hi");
        }
        if !(s.slide_step_mbps > 0.0) || s.windows == 0 {
            return bad("slide step must be positive and at least one window is required");
        }
        if s.count == 0 || s.paths_per_session == 0 {
            return bad("need at least one session and one path per session");
        }
        if !(self.reward_scale > 0.0) || !self.reward_scale.is_finite() {
            return bad("reward_scale must be positive");
        }
        if !(self.state_norm.throughput_ref > 0.0) || !(self.state_norm.delay_ref > 0.0) {
            return bad("state normalization references must be positive");
        }
        super::metrics::Biquad::butterworth_lowpass(self.smoothing_cutoff)?;
        self.agent.validate()?;
        self.sim.validate()?;
        self.utility.validate()?;
        Ok(())
    }

    /// Agent settings for a learning arm. The importance-sampling exponent
    /// anneals to 1 over the run; DDPG uses uniform replay and no base mixing.
    pub fn agent_config(&self, arm: Arm, seed: u64) -> AgentConfig {
        let mut cfg = self.agent;
        cfg.seed = seed;
        cfg.replay.anneal_epochs = self.epochs;
        if arm == Arm::Ddpg {
            cfg.base_mixing = false;
            cfg.replay = ReplayConfig { beta0: 0.0, ..cfg.replay };
        }
        cfg
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_protocol() {
        let plan = SessionPlan { windows: 4, ..SessionPlan::default() };
        let centers: Vec<f64> = plan.windows().iter().map(|w| w.center_mbps()).collect();
        assert_eq!(centers, vec![10.0, 15.0, 20.0, 25.0]);
        let w = plan.windows()[0];
        assert_eq!((w.lo, w.hi), (0.0, 20e6));
    }

    #[test]
    fn toml_roundtrip_and_defaults() {
        let cfg = ExperimentConfig::default();
        let back = ExperimentConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);

        let partial = r#"
            version = 1
            epochs = 50
            arms = ["DRL-TE", "NUM"]
            seeds = [3]
            [topology]
            random = { nodes = 6, links = 12, seed = 1 }
            [sessions]
            count = 4
            window_lo_mbps = 10.0
            window_hi_mbps = 30.0
            [agent]
            batch_size = 8
        "#;
        let cfg = ExperimentConfig::from_toml(partial).unwrap();
        assert_eq!(cfg.arms, vec![Arm::DrlTe, Arm::Num]);
        assert_eq!(cfg.agent.batch_size, 8);
        assert_eq!(cfg.agent.gamma, 0.99);
        assert_eq!(cfg.sessions.slide_step_mbps, 5.0);
        assert_eq!(cfg.topology.build(None).unwrap().link_count(), 12);
    }

    #[test]
    fn rejects_invalid() {
        for text in [
            "version = 2",
            "epochs = 0",
            "seeds = []",
            "[sessions]\nwindow_lo_mbps = 5.0\nwindow_hi_mbps = 5.0",
            "[sessions]\nslide_step_mbps = 0.0",
            "bogus = 1",
        ] {
            assert!(ExperimentConfig::from_toml(text).is_err(), "{text}");
        }
    }

    #[test]
    fn ddpg_arm_settings() {
        let cfg = ExperimentConfig { epochs: 123, ..Default::default() };
        let d = cfg.agent_config(Arm::Ddpg, 9);
        assert!(!d.base_mixing);
        assert_eq!(d.replay.beta0, 0.0);
        assert_eq!((d.seed, d.replay.anneal_epochs), (9, 123));
        let t = cfg.agent_config(Arm::DrlTe, 9);
        assert!(t.base_mixing);
        assert_eq!(t.replay.beta0, 0.6);
        assert_eq!("ddpg".parse::<Arm>().unwrap(), Arm::Ddpg);
    }
}
