//! Traffic-engineering laboratory: a packet-level network simulator, an
//! actor-critic agent with TE-aware exploration and prioritized replay,
//! shortest-path / load-balance / NUM baselines, and an experiment harness.

pub mod action;
pub mod agent;
pub mod baselines;
pub mod harness;
pub mod nn;
pub mod objective;
pub mod replay;
pub mod sim;
pub mod topology;

pub use action::{path_sizes, ActionError, SplitAction, SIMPLEX_TOL};
pub use agent::{epsilon_at, AgentConfig, AgentError, AgentState, BasePolicy, Exploration, OptimizerKind, TrainDiagnostics};
pub use baselines::{lb_action, num_action, num_solve, sp_action, NumError, NumSolution, NumTolerances};
pub use harness::{Arm, ExperimentConfig, HarnessError, RunRecord};
pub use nn::{Mlp, MlpShape, NnError, OutputMode};
pub use objective::{reward, UtilityConfig};
pub use replay::{PrioritizedBuffer, ReplayConfig, SumTree, TransitionSample};
pub use sim::{init_sim, observation_to_state, EpochObservation, SimConfig, SimState, StateNorm};
pub use topology::{
    generate_random_topology, k_shortest_paths, load_topology, make_sessions, BundledTopology, DemandWindow,
    NetworkGraph, Path, SessionSpec, TopologyError,
};
