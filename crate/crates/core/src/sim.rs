//! Discrete-event packet simulator.
//!
//! Each session injects fixed-size packets as a Poisson process at its
//! source. On arrival a packet picks one candidate path with probability
//! equal to the session's split ratio and is then forwarded hop by hop. Every
//! directed link is a drop-tail FIFO queue served at link capacity, followed
//! by a propagation delay. Time advances in decision epochs of fixed length;
//! each epoch reports per-session throughput and mean delay of the packets
//! delivered during that epoch.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action::{ActionError, SplitAction};
use crate::topology::{NetworkGraph, SessionSpec};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("session {session} path {path} is not a valid path in the graph: {reason}")]
    InvalidPath { session: usize, path: usize, reason: String },
    #[error("session {session} has invalid demand {demand}")]
    InvalidDemand { session: usize, demand: f64 },
    #[error("invalid simulator config: {0}")]
    Config(String),
    #[error(transparent)]
    Action(#[from] ActionError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    /// Decision epoch length in seconds.
    pub epoch_length: f64,
    /// Packet size in bits.
    pub packet_size: f64,
    pub seed: u64,
    /// Reported delay (seconds) for sessions without deliveries.
    pub delay_floor: f64,
    /// Reported throughput (bits/s) for sessions without deliveries.
    pub throughput_floor: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self { epoch_length: 0.5, packet_size: 8000.0, seed: 0, delay_floor: 1e-6, throughput_floor: 1e3 }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let positive = [self.epoch_length, self.packet_size, self.delay_floor, self.throughput_floor];
        if positive.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(SimError::Config(format!("all lengths, sizes and floors must be positive: {self:?}")));
        }
        Ok(())
    }
}

/// Per-session measurements over one decision epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochObservation {
    pub epoch: usize,
    /// Delivered payload divided by epoch length, bits/s.
    pub throughput: Vec<f64>,
    /// Mean end-to-end sojourn of packets delivered this epoch, seconds.
    pub delay: Vec<f64>,
    pub drops: Vec<u64>,
    pub delivered: Vec<u64>,
}

impl EpochObservation {
    pub fn session_count(&self) -> usize {
        self.throughput.len()
    }

    pub fn total_drops(&self) -> u64 {
        self.drops.iter().sum()
    }

    /// Packet-weighted mean delay over all deliveries, seconds.
    pub fn mean_delay(&self) -> f64 {
        let n: u64 = self.delivered.iter().sum();
        if n == 0 {
            return 0.0;
        }
        self.delay.iter().zip(&self.delivered).map(|(z, &c)| z * c as f64).sum::<f64>() / n as f64
    }

    pub fn total_throughput(&self) -> f64 {
        self.throughput.iter().sum()
    }
}

/// Scaling references for turning observations into network inputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StateNorm {
    /// Throughput mapped to 1.0, bits/s.
    pub throughput_ref: f64,
    /// Delay mapped to 1.0, seconds.
    pub delay_ref: f64,
}

impl Default for StateNorm {
    fn default() -> Self {
        Self { throughput_ref: 100e6, delay_ref: 20e-3 }
    }
}

/// `[x_1, z_1, x_2, z_2, ...]` scaled by the references and clipped to [0, 1].
pub fn observation_to_state(obs: &EpochObservation, norm: &StateNorm) -> Vec<f64> {
    obs.throughput
        .iter()
        .zip(&obs.delay)
        .flat_map(|(&x, &z)| [(x / norm.throughput_ref).clamp(0.0, 1.0), (z / norm.delay_ref).clamp(0.0, 1.0)])
        .collect()
}

/// Cumulative packet accounting since initialization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PacketTotals {
    pub generated: u64,
    pub delivered: u64,
    pub dropped: u64,
    pub in_flight: u64,
}

#[derive(Debug, Clone, Copy)]
enum EventKind {
    Arrival { session: usize },
    TxDone { link: usize },
    Propagated { packet: usize },
}

#[derive(Debug, Clone, Copy)]
struct Event {
    time: f64,
    seq: u64,
    kind: EventKind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Event {
    // Reversed so BinaryHeap pops the earliest event; seq breaks ties in
    // scheduling order.
    fn cmp(&self, other: &Self) -> Ordering {
        other.time.total_cmp(&self.time).then_with(|| other.seq.cmp(&self.seq))
    }
}

#[derive(Debug, Clone)]
struct Packet {
    serial: u64,
    session: usize,
    path: usize,
    hop: usize,
    created: f64,
}

#[derive(Debug, Clone)]
struct LinkState {
    service_time: f64,
    prop_delay: f64,
    buffer_limit: usize,
    /// Front element is in transmission when non-empty.
    queue: VecDeque<usize>,
}

#[derive(Debug, Clone)]
struct SessionState {
    rate_pkts: f64,
    paths: Vec<Vec<usize>>,
    arrival_rng: ChaCha8Rng,
    path_rng: ChaCha8Rng,
    epoch_delivered: u64,
    epoch_delay_sum: f64,
    epoch_drops: u64,
}

/// Link-level enqueue/transmit log, used to audit FIFO order.
#[derive(Debug, Clone, Default)]
pub struct LinkTrace {
    pub enqueued: Vec<Vec<u64>>,
    pub transmitted: Vec<Vec<u64>>,
}

/// Exclusive, single-threaded simulator state.
#[derive(Debug, Clone)]
pub struct SimState {
    cfg: SimConfig,
    now: f64,
    epoch: usize,
    seq: u64,
    next_serial: u64,
    events: BinaryHeap<Event>,
    links: Vec<LinkState>,
    sessions: Vec<SessionState>,
    packets: Vec<Option<Packet>>,
    free: Vec<usize>,
    cumulative_ratios: Vec<Vec<f64>>,
    path_sizes: Vec<usize>,
    totals: PacketTotals,
    path_usage: Vec<Vec<u64>>,
    trace: Option<LinkTrace>,
}

/// Builds the simulator and schedules the first arrival of every session with
/// positive demand.
pub fn init_sim(g: &NetworkGraph, sessions: &[SessionSpec], cfg: SimConfig) -> Result<SimState, SimError> {
    SimState::new(g, sessions, cfg)
}

impl SimState {
    pub fn new(g: &NetworkGraph, sessions: &[SessionSpec], cfg: SimConfig) -> Result<Self, SimError> {
        cfg.validate()?;
        let links = g
            .links()
            .iter()
            .map(|l| LinkState {
                service_time: cfg.packet_size / l.capacity,
                prop_delay: l.prop_delay,
                buffer_limit: l.buffer_limit,
                queue: VecDeque::new(),
            })
            .collect();

        let mut states = Vec::with_capacity(sessions.len());
        for (k, s) in sessions.iter().enumerate() {
            if !(s.demand_mean >= 0.0) || !s.demand_mean.is_finite() {
                return Err(SimError::InvalidDemand { session: k, demand: s.demand_mean });
            }
            if s.paths.is_empty() {
                return Err(SimError::InvalidPath { session: k, path: 0, reason: "session has no paths".into() });
            }
            let mut paths = Vec::with_capacity(s.paths.len());
            for (j, p) in s.paths.iter().enumerate() {
                validate_path(g, s, p.links()).map_err(|reason| SimError::InvalidPath { session: k, path: j, reason })?;
                paths.push(p.links().iter().map(|l| l.0).collect());
            }
            let mut arrival_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            arrival_rng.set_stream(2 * k as u64);
            let mut path_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            path_rng.set_stream(2 * k as u64 + 1);
            states.push(SessionState {
                rate_pkts: s.demand_mean / cfg.packet_size,
                paths,
                arrival_rng,
                path_rng,
                epoch_delivered: 0,
                epoch_delay_sum: 0.0,
                epoch_drops: 0,
            });
        }

        let path_sizes: Vec<usize> = sessions.iter().map(|s| s.paths.len()).collect();
        let mut sim = Self {
            cfg,
            now: 0.0,
            epoch: 0,
            seq: 0,
            next_serial: 0,
            events: BinaryHeap::new(),
            links,
            sessions: states,
            packets: Vec::new(),
            free: Vec::new(),
            cumulative_ratios: Vec::new(),
            path_usage: path_sizes.iter().map(|&n| vec![0; n]).collect(),
            path_sizes,
            totals: PacketTotals::default(),
            trace: None,
        };
        sim.set_action(&SplitAction::uniform(&sim.path_sizes))?;
        for k in 0..sim.sessions.len() {
            if sim.sessions[k].rate_pkts > 0.0 {
                let t = sim.next_interarrival(k);
                sim.schedule(t, EventKind::Arrival { session: k });
            }
        }
        Ok(sim)
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn pending_events(&self) -> usize {
        self.events.len()
    }

    /// Times of the scheduled session arrivals, in session order.
    pub fn pending_arrivals(&self) -> Vec<(usize, f64)> {
        let mut v: Vec<(usize, f64)> = self
            .events
            .iter()
            .filter_map(|e| match e.kind {
                EventKind::Arrival { session } => Some((session, e.time)),
                _ => None,
            })
            .collect();
        v.sort_by_key(|&(k, _)| k);
        v
    }

    pub fn totals(&self) -> PacketTotals {
        self.totals
    }

    /// Number of packets that chose each candidate path, per session.
    pub fn path_usage(&self) -> &[Vec<u64>] {
        &self.path_usage
    }

    pub fn enable_trace(&mut self) {
        self.trace = Some(LinkTrace {
            enqueued: vec![Vec::new(); self.links.len()],
            transmitted: vec![Vec::new(); self.links.len()],
        });
    }

    pub fn trace(&self) -> Option<&LinkTrace> {
        self.trace.as_ref()
    }

    pub fn path_sizes(&self) -> &[usize] {
        &self.path_sizes
    }

    fn set_action(&mut self, action: &SplitAction) -> Result<(), SimError> {
        if action.session_count() != self.sessions.len() {
            return Err(ActionError::SessionCount { expected: self.sessions.len(), got: action.session_count() }.into());
        }
        for (k, (block, &n)) in action.ratios().iter().zip(&self.path_sizes).enumerate() {
            if block.len() != n {
                return Err(ActionError::PathCount { session: k, expected: n, got: block.len() }.into());
            }
        }
        self.cumulative_ratios = action
            .ratios()
            .iter()
            .map(|block| {
                let mut acc = 0.0;
                block
                    .iter()
                    .map(|w| {
                        acc += w;
                        acc
                    })
                    .collect()
            })
            .collect();
        Ok(())
    }

    /// Advances one decision epoch under `action` and reports what was
    /// delivered during it.
    pub fn run_epoch(&mut self, action: &SplitAction) -> Result<EpochObservation, SimError> {
        self.set_action(action)?;
        for s in &mut self.sessions {
            s.epoch_delivered = 0;
            s.epoch_delay_sum = 0.0;
            s.epoch_drops = 0;
        }
        let end = self.now + self.cfg.epoch_length;
        while let Some(ev) = self.events.peek() {
            if ev.time > end {
                break;
            }
            let ev = self.events.pop().unwrap();
            self.now = ev.time;
            match ev.kind {
                EventKind::Arrival { session } => self.on_arrival(session),
                EventKind::TxDone { link } => self.on_tx_done(link),
                EventKind::Propagated { packet } => self.on_propagated(packet),
            }
        }
        self.now = end;
        let obs = self.observe();
        self.epoch += 1;
        Ok(obs)
    }

    fn observe(&self) -> EpochObservation {
        let len = self.cfg.epoch_length;
        let mut obs = EpochObservation {
            epoch: self.epoch,
            throughput: Vec::with_capacity(self.sessions.len()),
            delay: Vec::with_capacity(self.sessions.len()),
            drops: Vec::with_capacity(self.sessions.len()),
            delivered: Vec::with_capacity(self.sessions.len()),
        };
        for s in &self.sessions {
            if s.epoch_delivered == 0 {
                obs.throughput.push(self.cfg.throughput_floor);
                obs.delay.push(self.cfg.delay_floor);
            } else {
                let bits = s.epoch_delivered as f64 * self.cfg.packet_size;
                obs.throughput.push((bits / len).max(self.cfg.throughput_floor));
                obs.delay.push((s.epoch_delay_sum / s.epoch_delivered as f64).max(self.cfg.delay_floor));
            }
            obs.drops.push(s.epoch_drops);
            obs.delivered.push(s.epoch_delivered);
        }
        obs
    }

    fn schedule(&mut self, time: f64, kind: EventKind) {
        self.seq += 1;
        self.events.push(Event { time, seq: self.seq, kind });
    }

    fn next_interarrival(&mut self, k: usize) -> f64 {
        let s = &mut self.sessions[k];
        let unit: f64 = s.arrival_rng.sample(Exp1);
        self.now + unit / s.rate_pkts
    }

    fn on_arrival(&mut self, k: usize) {
        let u: f64 = self.sessions[k].path_rng.random();
        let cum = &self.cumulative_ratios[k];
        // Last path absorbs rounding in the cumulative sum.
        let path = cum.iter().position(|&c| u < c).unwrap_or(cum.len() - 1);
        self.path_usage[k][path] += 1;
        self.totals.generated += 1;
        self.totals.in_flight += 1;
        let packet = Packet { serial: self.next_serial, session: k, path, hop: 0, created: self.now };
        self.next_serial += 1;
        let id = match self.free.pop() {
            Some(id) => {
                self.packets[id] = Some(packet);
                id
            }
            None => {
                self.packets.push(Some(packet));
                self.packets.len() - 1
            }
        };
        let first = self.sessions[k].paths[path][0];
        self.enqueue(first, id);

        let t = self.next_interarrival(k);
        self.schedule(t, EventKind::Arrival { session: k });
    }

    fn enqueue(&mut self, link: usize, id: usize) {
        let l = &mut self.links[link];
        if l.queue.len() >= l.buffer_limit {
            let p = self.packets[id].take().expect("live packet");
            self.free.push(id);
            self.totals.dropped += 1;
            self.totals.in_flight -= 1;
            self.sessions[p.session].epoch_drops += 1;
            return;
        }
        l.queue.push_back(id);
        let start = l.queue.len() == 1;
        let service = l.service_time;
        if let Some(trace) = &mut self.trace {
            trace.enqueued[link].push(self.packets[id].as_ref().unwrap().serial);
        }
        if start {
            self.schedule(self.now + service, EventKind::TxDone { link });
        }
    }

    fn on_tx_done(&mut self, link: usize) {
        let l = &mut self.links[link];
        let id = l.queue.pop_front().expect("transmitting link has a packet");
        let prop = l.prop_delay;
        let service = l.service_time;
        let more = !l.queue.is_empty();
        if let Some(trace) = &mut self.trace {
            trace.transmitted[link].push(self.packets[id].as_ref().unwrap().serial);
        }
        self.schedule(self.now + prop, EventKind::Propagated { packet: id });
        if more {
            self.schedule(self.now + service, EventKind::TxDone { link });
        }
    }

    fn on_propagated(&mut self, id: usize) {
        let p = self.packets[id].as_mut().expect("live packet");
        p.hop += 1;
        let route = &self.sessions[p.session].paths[p.path];
        if p.hop < route.len() {
            let next = route[p.hop];
            self.enqueue(next, id);
            return;
        }
        let p = self.packets[id].take().unwrap();
        self.free.push(id);
        let s = &mut self.sessions[p.session];
        s.epoch_delivered += 1;
        s.epoch_delay_sum += self.now - p.created;
        self.totals.delivered += 1;
        self.totals.in_flight -= 1;
    }
}

fn validate_path(g: &NetworkGraph, s: &SessionSpec, links: &[crate::topology::LinkId]) -> Result<(), String> {
    let Some(first) = links.first() else {
        return Err("empty path".into());
    };
    if links.iter().any(|l| l.0 >= g.link_count()) {
        return Err("unknown link".into());
    }
    if g.link(*first).src != s.src {
        return Err("path does not start at the session source".into());
    }
    let mut seen = vec![false; g.node_count()];
    let mut at = s.src;
    seen[at.0] = true;
    for l in links {
        let link = g.link(*l);
        if link.src != at {
            return Err("links are not contiguous".into());
        }
        at = link.dst;
        if std::mem::replace(&mut seen[at.0], true) {
            return Err("path revisits a node".into());
        }
    }
    if at != s.dst {
        return Err("path does not end at the session destination".into());
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::{load_topology, Path};

    fn line(capacity_mbps: f64, prop_ms: f64) -> NetworkGraph {
        load_topology(&format!(
            r#"{{"nodes":["a","b"],"links":[{{"src":"a","dst":"b","capacity_mbps":{capacity_mbps},"prop_delay_ms":{prop_ms},"buffer_pkts":1000000}}]}}"#
        ))
        .unwrap()
    }

    fn session(g: &NetworkGraph, demand: f64) -> SessionSpec {
        SessionSpec {
            id: 1,
            src: g.node_id("a").unwrap(),
            dst: g.node_id("b").unwrap(),
            demand_mean: demand,
            paths: vec![Path::from_node_names(g, &["a", "b"]).unwrap()],
        }
    }

    #[test]
    fn one_pending_arrival_per_session() {
        let g = line(100.0, 1.0);
        let sessions = vec![session(&g, 1e6), session(&g, 2e6), session(&g, 0.0)];
        let sim = init_sim(&g, &sessions, SimConfig::default()).unwrap();
        let arrivals = sim.pending_arrivals();
        assert_eq!(arrivals.len(), 2);
        assert_eq!(arrivals.iter().map(|a| a.0).collect::<Vec<_>>(), vec![0, 1]);
        let again = init_sim(&g, &sessions, SimConfig::default()).unwrap();
        assert_eq!(again.pending_arrivals(), arrivals);
    }

    #[test]
    fn zero_demand_reports_floors() {
        let g = line(100.0, 1.0);
        let cfg = SimConfig::default();
        let mut sim = init_sim(&g, &[session(&g, 0.0)], cfg).unwrap();
        let obs = sim.run_epoch(&SplitAction::uniform(&[1])).unwrap();
        assert_eq!(obs.throughput, vec![cfg.throughput_floor]);
        assert_eq!(obs.delay, vec![cfg.delay_floor]);
        assert_eq!(obs.drops, vec![0]);
    }

    #[test]
    fn malformed_action_rejected() {
        let g = line(100.0, 1.0);
        let mut sim = init_sim(&g, &[session(&g, 1e6)], SimConfig::default()).unwrap();
        assert!(matches!(
            sim.run_epoch(&SplitAction::uniform(&[2])),
            Err(SimError::Action(ActionError::PathCount { .. }))
        ));
        assert!(sim.run_epoch(&SplitAction::uniform(&[1, 1])).is_err());
    }

    #[test]
    fn invalid_path_rejected() {
        let g = load_topology(
            r#"{"nodes":["a","b","c"],"links":[{"src":"a","dst":"b","capacity_mbps":1},{"src":"b","dst":"c","capacity_mbps":1}]}"#,
        )
        .unwrap();
        let mut s = session(&g, 1e6);
        s.dst = g.node_id("c").unwrap();
        assert!(matches!(init_sim(&g, &[s], SimConfig::default()), Err(SimError::InvalidPath { .. })));
        assert!(SimConfig { epoch_length: 0.0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn small_buffer_drops_and_conserves() {
        let g = load_topology(
            r#"{"nodes":["a","b"],"links":[{"src":"a","dst":"b","capacity_mbps":10,"buffer_pkts":5}]}"#,
        )
        .unwrap();
        let mut sim = init_sim(&g, &[session(&g, 30e6)], SimConfig::default()).unwrap();
        let obs = sim.run_epoch(&SplitAction::uniform(&[1])).unwrap();
        assert!(obs.drops[0] > 0);
        // Throughput cannot exceed link capacity.
        assert!(obs.throughput[0] <= 10e6 * 1.01);
        let t = sim.totals();
        assert_eq!(t.generated, t.delivered + t.dropped + t.in_flight);
        assert!(t.in_flight <= 5 + 1);
    }

    #[test]
    fn state_vector_scaling() {
        let obs = EpochObservation {
            epoch: 0,
            throughput: vec![100e6, 1e3],
            delay: vec![40e-3, 1e-6],
            drops: vec![0, 0],
            delivered: vec![1, 0],
        };
        let s = observation_to_state(&obs, &StateNorm::default());
        assert_eq!(s.len(), 4);
        assert_eq!(s[0], 1.0);
        assert_eq!(s[1], 1.0);
        assert!(s[2] < 1e-4 && s[3] < 1e-4);
    }
}
