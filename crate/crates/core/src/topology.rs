//! Network graph model, topology documents, random topology generation,
//! hop-count k-shortest paths and session generation.

use std::collections::{BTreeSet, HashMap, HashSet, VecDeque};
use std::fmt;
use std::path::Path as FsPath;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default propagation delay for links that do not specify one.
pub const DEFAULT_PROP_DELAY_S: f64 = 1e-3;
/// Default drop-tail buffer size for links that do not specify one.
pub const DEFAULT_BUFFER_PKTS: usize = 100;
/// Default link capacity used by the random generator (100 Mbps).
pub const DEFAULT_CAPACITY_BPS: f64 = 100e6;
/// Candidate paths per session.
pub const DEFAULT_PATHS_PER_SESSION: usize = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TopologyError {
    #[error("failed to parse topology document: {0}")]
    Parse(String),
    #[error("io error: {0}")]
    Io(String),
    #[error("duplicate node id `{0}`")]
    DuplicateNode(String),
    #[error("link {index} references unknown node `{node}`")]
    UnknownNode { index: usize, node: String },
    #[error("link {index} is a self-loop on `{node}`")]
    SelfLoop { index: usize, node: String },
    #[error("link {index} duplicates directed pair {src}->{dst}")]
    DuplicateLink { index: usize, src: String, dst: String },
    #[error("link {index} ({src}->{dst}) has nonpositive capacity {capacity}")]
    NonPositiveCapacity { index: usize, src: String, dst: String, capacity: f64 },
    #[error("link {index} ({src}->{dst}) has invalid propagation delay {delay}")]
    InvalidDelay { index: usize, src: String, dst: String, delay: f64 },
    #[error("link {index} ({src}->{dst}) has zero buffer")]
    ZeroBuffer { index: usize, src: String, dst: String },
    #[error("cannot build {n_links} links on {n_nodes} nodes")]
    Infeasible { n_nodes: usize, n_links: usize },
    #[error("node `{dst}` is unreachable from `{src}`")]
    Unreachable { src: String, dst: String },
    #[error("graph hosts only {available} reachable pairs, {wanted} sessions requested")]
    InsufficientPairs { wanted: usize, available: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LinkId(pub usize);

/// A directed link. Capacity is in bits/second, delay in seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct Link {
    pub src: NodeId,
    pub dst: NodeId,
    pub capacity: f64,
    pub prop_delay: f64,
    pub buffer_limit: usize,
}

#[derive(Debug, Clone)]
pub struct NetworkGraph {
    nodes: Vec<String>,
    links: Vec<Link>,
    out_links: Vec<Vec<LinkId>>,
    in_links: Vec<Vec<LinkId>>,
    by_pair: HashMap<(NodeId, NodeId), LinkId>,
    by_name: HashMap<String, NodeId>,
}

impl PartialEq for NetworkGraph {
    fn eq(&self, other: &Self) -> bool {
        self.nodes == other.nodes && self.links == other.links
    }
}

impl NetworkGraph {
    /// Builds a graph from node names and links, checking every invariant.
    pub fn new(nodes: Vec<String>, links: Vec<Link>) -> Result<Self, TopologyError> {
        let mut by_name = HashMap::with_capacity(nodes.len());
        for (i, name) in nodes.iter().enumerate() {
            if by_name.insert(name.clone(), NodeId(i)).is_some() {
                return Err(TopologyError::DuplicateNode(name.clone()));
            }
        }
        let name = |n: NodeId| nodes[n.0].clone();
        let mut by_pair = HashMap::with_capacity(links.len());
        let mut out_links = vec![Vec::new(); nodes.len()];
        let mut in_links = vec![Vec::new(); nodes.len()];
        for (index, l) in links.iter().enumerate() {
            for n in [l.src, l.dst] {
                if n.0 >= nodes.len() {
                    return Err(TopologyError::UnknownNode { index, node: format!("#{}", n.0) });
                }
            }
            if l.src == l.dst {
                return Err(TopologyError::SelfLoop { index, node: name(l.src) });
            }
            if !(l.capacity > 0.0) || !l.capacity.is_finite() {
                return Err(TopologyError::NonPositiveCapacity {
                    index,
                    src: name(l.src),
                    dst: name(l.dst),
                    capacity: l.capacity,
                });
            }
            if !(l.prop_delay >= 0.0) || !l.prop_delay.is_finite() {
                return Err(TopologyError::InvalidDelay {
                    index,
                    src: name(l.src),
                    dst: name(l.dst),
                    delay: l.prop_delay,
                });
            }
            if l.buffer_limit == 0 {
                return Err(TopologyError::ZeroBuffer { index, src: name(l.src), dst: name(l.dst) });
            }
            if by_pair.insert((l.src, l.dst), LinkId(index)).is_some() {
                return Err(TopologyError::DuplicateLink { index, src: name(l.src), dst: name(l.dst) });
            }
            out_links[l.src.0].push(LinkId(index));
            in_links[l.dst.0].push(LinkId(index));
        }
        Ok(Self { nodes, links, out_links, in_links, by_pair, by_name })
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn link_count(&self) -> usize {
        self.links.len()
    }

    pub fn nodes(&self) -> &[String] {
        &self.nodes
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn link(&self, id: LinkId) -> &Link {
        &self.links[id.0]
    }

    pub fn node_name(&self, id: NodeId) -> &str {
        &self.nodes[id.0]
    }

    pub fn node_id(&self, name: &str) -> Option<NodeId> {
        self.by_name.get(name).copied()
    }

    pub fn find_link(&self, src: NodeId, dst: NodeId) -> Option<LinkId> {
        self.by_pair.get(&(src, dst)).copied()
    }

    pub fn out_links(&self, n: NodeId) -> &[LinkId] {
        &self.out_links[n.0]
    }

    /// Returns a copy with every link capacity multiplied by `factor`.
    pub fn scale_capacities(&self, factor: f64) -> Result<Self, TopologyError> {
        let links = self
            .links
            .iter()
            .map(|l| Link { capacity: l.capacity * factor, ..l.clone() })
            .collect();
        Self::new(self.nodes.clone(), links)
    }

    /// Connectivity ignoring link direction.
    pub fn is_weakly_connected(&self) -> bool {
        if self.nodes.is_empty() {
            return true;
        }
        let mut seen = vec![false; self.nodes.len()];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        while let Some(u) = queue.pop_front() {
            let nbrs = self.out_links[u]
                .iter()
                .map(|l| self.links[l.0].dst.0)
                .chain(self.in_links[u].iter().map(|l| self.links[l.0].src.0));
            for v in nbrs {
                if !seen[v] {
                    seen[v] = true;
                    queue.push_back(v);
                }
            }
        }
        seen.iter().all(|&s| s)
    }

    /// Hop distance from every node to `dst`, skipping banned nodes and links.
    fn hops_to(&self, dst: NodeId, banned_nodes: &[bool], banned_links: &HashSet<LinkId>) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.nodes.len()];
        if banned_nodes[dst.0] {
            return dist;
        }
        dist[dst.0] = Some(0);
        let mut queue = VecDeque::from([dst]);
        while let Some(v) = queue.pop_front() {
            let d = dist[v.0].unwrap();
            for &l in &self.in_links[v.0] {
                if banned_links.contains(&l) {
                    continue;
                }
                let u = self.links[l.0].src;
                if banned_nodes[u.0] || dist[u.0].is_some() {
                    continue;
                }
                dist[u.0] = Some(d + 1);
                queue.push_back(u);
            }
        }
        dist
    }

    /// Minimum-hop path, lexicographically smallest node sequence among ties.
    fn best_path(
        &self,
        src: NodeId,
        dst: NodeId,
        banned_nodes: &[bool],
        banned_links: &HashSet<LinkId>,
    ) -> Option<Vec<NodeId>> {
        let dist = self.hops_to(dst, banned_nodes, banned_links);
        let mut d = dist[src.0]?;
        let mut cur = src;
        let mut seq = vec![src];
        while d > 0 {
            let next = self.out_links[cur.0]
                .iter()
                .filter(|l| !banned_links.contains(l))
                .map(|l| self.links[l.0].dst)
                .filter(|v| dist[v.0] == Some(d - 1))
                .min()?;
            seq.push(next);
            cur = next;
            d -= 1;
        }
        Some(seq)
    }

    fn path_from_nodes(&self, nodes: Vec<NodeId>) -> Path {
        let links = nodes
            .windows(2)
            .map(|w| self.find_link(w[0], w[1]).expect("consecutive nodes are linked"))
            .collect();
        Path { nodes, links }
    }
}

/// An ordered, loop-free sequence of links.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Path {
    nodes: Vec<NodeId>,
    links: Vec<LinkId>,
}

impl Path {
    /// Builds a path from a link sequence, checking continuity and loop-freedom.
    pub fn from_links(g: &NetworkGraph, links: Vec<LinkId>) -> Result<Self, TopologyError> {
        let Some(first) = links.first() else {
            return Err(TopologyError::InvalidArgument("empty path".into()));
        };
        if links.iter().any(|l| l.0 >= g.link_count()) {
            return Err(TopologyError::InvalidArgument("path references unknown link".into()));
        }
        let mut nodes = vec![g.link(*first).src];
        for l in &links {
            let link = g.link(*l);
            if link.src != *nodes.last().unwrap() {
                return Err(TopologyError::InvalidArgument("path links are not contiguous".into()));
            }
            nodes.push(link.dst);
        }
        let distinct: HashSet<_> = nodes.iter().collect();
        if distinct.len() != nodes.len() {
            return Err(TopologyError::InvalidArgument("path repeats a node".into()));
        }
        Ok(Self { nodes, links })
    }

    /// Builds a path through the named node sequence.
    pub fn from_node_names(g: &NetworkGraph, names: &[&str]) -> Result<Self, TopologyError> {
        let mut links = Vec::with_capacity(names.len().saturating_sub(1));
        for w in names.windows(2) {
            let a = g.node_id(w[0]).ok_or_else(|| TopologyError::InvalidArgument(format!("unknown node {}", w[0])))?;
            let b = g.node_id(w[1]).ok_or_else(|| TopologyError::InvalidArgument(format!("unknown node {}", w[1])))?;
            let l = g
                .find_link(a, b)
                .ok_or_else(|| TopologyError::InvalidArgument(format!("no link {}->{}", w[0], w[1])))?;
            links.push(l);
        }
        Self::from_links(g, links)
    }

    pub fn links(&self) -> &[LinkId] {
        &self.links
    }

    pub fn nodes(&self) -> &[NodeId] {
        &self.nodes
    }

    pub fn hops(&self) -> usize {
        self.links.len()
    }

    pub fn src(&self) -> NodeId {
        self.nodes[0]
    }

    pub fn dst(&self) -> NodeId {
        *self.nodes.last().unwrap()
    }

    pub fn node_names<'a>(&self, g: &'a NetworkGraph) -> Vec<&'a str> {
        self.nodes.iter().map(|n| g.node_name(*n)).collect()
    }

    /// Smallest link capacity along the path.
    pub fn bottleneck(&self, g: &NetworkGraph) -> f64 {
        self.links.iter().map(|l| g.link(*l).capacity).fold(f64::INFINITY, f64::min)
    }
}

impl fmt::Display for Path {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.nodes.iter().map(|n| n.0.to_string()).collect();
        f.write_str(&parts.join("-"))
    }
}

/// One end-to-end communication session.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionSpec {
    pub id: usize,
    pub src: NodeId,
    pub dst: NodeId,
    /// Mean offered load in bits/second.
    pub demand_mean: f64,
    pub paths: Vec<Path>,
}

impl SessionSpec {
    pub fn path_count(&self) -> usize {
        self.paths.len()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinkDoc {
    pub src: String,
    pub dst: String,
    pub capacity_mbps: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prop_delay_ms: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub buffer_pkts: Option<usize>,
}

/// On-disk topology description. Capacities in Mbps, delays in ms.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TopologyDoc {
    pub nodes: Vec<String>,
    pub links: Vec<LinkDoc>,
}

impl TopologyDoc {
    pub fn from_graph(g: &NetworkGraph) -> Self {
        Self {
            nodes: g.nodes.clone(),
            links: g
                .links
                .iter()
                .map(|l| LinkDoc {
                    src: g.node_name(l.src).to_owned(),
                    dst: g.node_name(l.dst).to_owned(),
                    capacity_mbps: l.capacity / 1e6,
                    prop_delay_ms: Some(l.prop_delay * 1e3),
                    buffer_pkts: Some(l.buffer_limit),
                })
                .collect(),
        }
    }

    pub fn into_graph(self) -> Result<NetworkGraph, TopologyError> {
        let index: HashMap<&str, usize> = self.nodes.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
        let mut links = Vec::with_capacity(self.links.len());
        for (i, l) in self.links.iter().enumerate() {
            let lookup = |name: &str| {
                index
                    .get(name)
                    .map(|&n| NodeId(n))
                    .ok_or_else(|| TopologyError::UnknownNode { index: i, node: name.to_owned() })
            };
            links.push(Link {
                src: lookup(&l.src)?,
                dst: lookup(&l.dst)?,
                capacity: l.capacity_mbps * 1e6,
                prop_delay: l.prop_delay_ms.map_or(DEFAULT_PROP_DELAY_S, |ms| ms * 1e-3),
                buffer_limit: l.buffer_pkts.unwrap_or(DEFAULT_BUFFER_PKTS),
            });
        }
        NetworkGraph::new(self.nodes, links)
    }
}

/// Parses a JSON topology document.
pub fn load_topology(text: &str) -> Result<NetworkGraph, TopologyError> {
    let doc: TopologyDoc = serde_json::from_str(text).map_err(|e| TopologyError::Parse(e.to_string()))?;
    doc.into_graph()
}

pub fn load_topology_file(path: impl AsRef<FsPath>) -> Result<NetworkGraph, TopologyError> {
    let text = std::fs::read_to_string(path.as_ref())
        .map_err(|e| TopologyError::Io(format!("{}: {e}", path.as_ref().display())))?;
    load_topology(&text)
}

/// Topologies shipped with the crate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BundledTopology {
    Nsfnet,
    Arpanet,
    Random20,
}

impl BundledTopology {
    pub fn document(self) -> &'static str {
        match self {
            Self::Nsfnet => include_str!("../data/topologies/nsfnet.json"),
            Self::Arpanet => include_str!("../data/topologies/arpanet.json"),
            Self::Random20 => include_str!("../data/topologies/random20.json"),
        }
    }

    pub fn load(self) -> NetworkGraph {
        load_topology(self.document()).expect("bundled topology documents are valid")
    }
}

/// Random connected directed topology: a random spanning tree (random link
/// orientation) followed by uniformly chosen extra links without duplicates.
pub fn generate_random_topology(n_nodes: usize, n_links: usize, seed: u64) -> Result<NetworkGraph, TopologyError> {
    let max_links = n_nodes.saturating_mul(n_nodes.saturating_sub(1));
    if n_nodes < 2 || n_links + 1 < n_nodes || n_links > max_links {
        return Err(TopologyError::Infeasible { n_nodes, n_links });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n_nodes).collect();
    order.shuffle(&mut rng);

    let mut pairs: Vec<(usize, usize)> = Vec::with_capacity(n_links);
    let mut used = HashSet::with_capacity(n_links);
    for i in 1..n_nodes {
        let a = order[i];
        let b = order[rng.random_range(0..i)];
        let pair = if rng.random_bool(0.5) { (a, b) } else { (b, a) };
        used.insert(pair);
        pairs.push(pair);
    }
    let mut free: Vec<(usize, usize)> = (0..n_nodes)
        .flat_map(|a| (0..n_nodes).map(move |b| (a, b)))
        .filter(|&(a, b)| a != b && !used.contains(&(a, b)))
        .collect();
    let extra = n_links - pairs.len();
    let (chosen, _) = free.partial_shuffle(&mut rng, extra);
    pairs.extend_from_slice(chosen);

    let nodes = (0..n_nodes).map(|i| format!("n{i}")).collect();
    let links = pairs
        .into_iter()
        .map(|(a, b)| Link {
            src: NodeId(a),
            dst: NodeId(b),
            capacity: DEFAULT_CAPACITY_BPS,
            prop_delay: DEFAULT_PROP_DELAY_S,
            buffer_limit: DEFAULT_BUFFER_PKTS,
        })
        .collect();
    NetworkGraph::new(nodes, links)
}

/// Up to `k` loop-free paths ordered by hop count, ties broken by the
/// lexicographic order of node indices (Yen's algorithm over BFS).
pub fn k_shortest_paths(g: &NetworkGraph, src: NodeId, dst: NodeId, k: usize) -> Result<Vec<Path>, TopologyError> {
    if src == dst || k == 0 || src.0 >= g.node_count() || dst.0 >= g.node_count() {
        return Err(TopologyError::InvalidArgument(format!(
            "k_shortest_paths requires distinct valid endpoints and k >= 1 (src={}, dst={}, k={k})",
            src.0, dst.0
        )));
    }
    let no_nodes = vec![false; g.node_count()];
    let first = g.best_path(src, dst, &no_nodes, &HashSet::new()).ok_or_else(|| TopologyError::Unreachable {
        src: g.node_name(src).to_owned(),
        dst: g.node_name(dst).to_owned(),
    })?;

    let mut accepted: Vec<Vec<NodeId>> = vec![first];
    let mut candidates: BTreeSet<(usize, Vec<NodeId>)> = BTreeSet::new();
    while accepted.len() < k {
        let prev = accepted.last().unwrap().clone();
        for i in 0..prev.len() - 1 {
            let root = &prev[..=i];
            let mut banned_links = HashSet::new();
            for p in &accepted {
                if p.len() > i + 1 && &p[..=i] == root {
                    if let Some(l) = g.find_link(p[i], p[i + 1]) {
                        banned_links.insert(l);
                    }
                }
            }
            let mut banned_nodes = vec![false; g.node_count()];
            for n in &root[..i] {
                banned_nodes[n.0] = true;
            }
            if let Some(spur) = g.best_path(prev[i], dst, &banned_nodes, &banned_links) {
                let mut full = root[..i].to_vec();
                full.extend(spur);
                if !accepted.contains(&full) {
                    candidates.insert((full.len() - 1, full));
                }
            }
        }
        match candidates.pop_first() {
            Some((_, p)) => accepted.push(p),
            None => break,
        }
    }
    Ok(accepted.into_iter().map(|n| g.path_from_nodes(n)).collect())
}

/// Demand window in bits/second.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DemandWindow {
    pub lo: f64,
    pub hi: f64,
}

impl DemandWindow {
    pub fn from_mbps(lo: f64, hi: f64) -> Self {
        Self { lo: lo * 1e6, hi: hi * 1e6 }
    }

    pub fn center_mbps(&self) -> f64 {
        (self.lo + self.hi) / 2e6
    }
}

/// Draws `k_sessions` distinct reachable (src, dst) pairs with uniform demand
/// means in the window, each with up to three hop-shortest candidate paths.
pub fn make_sessions(
    g: &NetworkGraph,
    k_sessions: usize,
    window: DemandWindow,
    seed: u64,
) -> Result<Vec<SessionSpec>, TopologyError> {
    make_sessions_with_paths(g, k_sessions, window, DEFAULT_PATHS_PER_SESSION, seed)
}

pub fn make_sessions_with_paths(
    g: &NetworkGraph,
    k_sessions: usize,
    window: DemandWindow,
    paths_per_session: usize,
    seed: u64,
) -> Result<Vec<SessionSpec>, TopologyError> {
    if k_sessions == 0 || paths_per_session == 0 {
        return Err(TopologyError::InvalidArgument("need at least one session and one path".into()));
    }
    if !(window.lo >= 0.0) || !(window.hi > window.lo) || !window.hi.is_finite() {
        return Err(TopologyError::InvalidArgument(format!(
            "demand window must satisfy 0 <= lo < hi (got [{}, {}])",
            window.lo, window.hi
        )));
    }
    let no_nodes = vec![false; g.node_count()];
    let mut reachable = Vec::new();
    for d in 0..g.node_count() {
        let dist = g.hops_to(NodeId(d), &no_nodes, &HashSet::new());
        for (s, hops) in dist.iter().enumerate() {
            if s != d && hops.is_some() {
                reachable.push((NodeId(s), NodeId(d)));
            }
        }
    }
    reachable.sort();
    if reachable.len() < k_sessions {
        return Err(TopologyError::InsufficientPairs { wanted: k_sessions, available: reachable.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (pairs, _) = reachable.partial_shuffle(&mut rng, k_sessions);
    let pairs = pairs.to_vec();
    pairs
        .into_iter()
        .enumerate()
        .map(|(i, (src, dst))| {
            let demand_mean = rng.random_range(window.lo..=window.hi);
            let paths = k_shortest_paths(g, src, dst, paths_per_session)?;
            Ok(SessionSpec { id: i + 1, src, dst, demand_mean, paths })
        })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionDocEntry {
    pub id: usize,
    pub src: String,
    pub dst: String,
    pub demand_mbps: f64,
}

/// On-disk session list; candidate paths are recomputed from the graph.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionDoc {
    pub sessions: Vec<SessionDocEntry>,
}

impl SessionDoc {
    pub fn from_sessions(g: &NetworkGraph, sessions: &[SessionSpec]) -> Self {
        Self {
            sessions: sessions
                .iter()
                .map(|s| SessionDocEntry {
                    id: s.id,
                    src: g.node_name(s.src).to_owned(),
                    dst: g.node_name(s.dst).to_owned(),
                    demand_mbps: s.demand_mean / 1e6,
                })
                .collect(),
        }
    }

    pub fn into_sessions(self, g: &NetworkGraph) -> Result<Vec<SessionSpec>, TopologyError> {
        self.sessions
            .into_iter()
            .map(|e| {
                let lookup = |name: &str| {
                    g.node_id(name)
                        .ok_or_else(|| TopologyError::InvalidArgument(format!("session {} names unknown node {name}", e.id)))
                };
                let (src, dst) = (lookup(&e.src)?, lookup(&e.dst)?);
                if !(e.demand_mbps >= 0.0) {
                    return Err(TopologyError::InvalidArgument(format!("session {} has negative demand", e.id)));
                }
                let paths = k_shortest_paths(g, src, dst, DEFAULT_PATHS_PER_SESSION)?;
                Ok(SessionSpec { id: e.id, src, dst, demand_mean: e.demand_mbps * 1e6, paths })
            })
            .collect()
    }
}

pub fn load_sessions(g: &NetworkGraph, text: &str) -> Result<Vec<SessionSpec>, TopologyError> {
    let doc: SessionDoc = serde_json::from_str(text).map_err(|e| TopologyError::Parse(e.to_string()))?;
    doc.into_sessions(g)
}
