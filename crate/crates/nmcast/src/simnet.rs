//! Deterministic simulation substrate: topology, shortest paths, scenario
//! events, and metric collection.
//!
//! The network is an undirected graph with per-link cost and delay. Links
//! are lossless and FIFO; the only latency is the fixed per-link delay.
//! Scenario events (join, leave, publish, strategy switch) are processed in
//! non-decreasing time with ties broken by insertion order, and every run is
//! a pure function of `(topology, events, strategy, seed)`.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::identity::SignedPacket;
use crate::matching::{self, MatchError};
use crate::naming::{GroupUri, Instantiation, UriError};
use crate::routing::{self, ForwardingState, StrategyConfig, StrategyKind, Traversal};

pub type NodeId = u32;

/// Supported version of the topology and scenario file formats.
pub const FILE_FORMAT: u32 = 1;

/// Undirected link with positive cost and non-negative delay.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub u: NodeId,
    pub v: NodeId,
    pub cost: f64,
    #[serde(default)]
    pub delay: f64,
}

/// Simulation errors. `DisconnectedSubscriber` situations are warnings
/// recorded in the metrics, not errors.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("invalid topology: {0}")]
    BadTopology(String),
    #[error("invalid scenario: {0}")]
    BadScenario(String),
    #[error("unknown strategy {0:?}")]
    UnknownStrategy(String),
    #[error("strategy requires a rendezvous point but none is configured")]
    MissingRp,
    #[error("hybrid strategy requires at least one cache node")]
    NoCaches,
    #[error("reflector strategy requires a reflector node")]
    NoReflector,
    #[error("node {node} is not subscribed to {uri:?}")]
    NotSubscribed { node: NodeId, uri: String },
    #[error("publication {0:?} must be concrete (empty or single instantiation)")]
    NonConcretePublication(String),
    #[error(transparent)]
    Uri(#[from] UriError),
    #[error(transparent)]
    Match(#[from] MatchError),
}

/// The simulated network graph, with optional endpoint aliases mapping
/// instantiation names (e.g. `cnn.com` or `1.2.3.4`) onto node ids.
#[derive(Debug, Clone)]
pub struct Topology {
    nodes: BTreeSet<NodeId>,
    links: Vec<Link>,
    adjacency: BTreeMap<NodeId, Vec<(NodeId, usize)>>,
    names: BTreeMap<String, NodeId>,
}

/// Topology file: `{"format":1,"nodes":[...],"links":[...],"names":{...}}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TopologyFile {
    pub format: u32,
    pub nodes: Vec<NodeId>,
    pub links: Vec<Link>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub names: BTreeMap<String, NodeId>,
}

impl Topology {
    pub fn new(
        nodes: impl IntoIterator<Item = NodeId>,
        links: Vec<Link>,
    ) -> Result<Self, SimError> {
        Topology::with_names(nodes, links, BTreeMap::new())
    }

    pub fn with_names(
        nodes: impl IntoIterator<Item = NodeId>,
        links: Vec<Link>,
        names: BTreeMap<String, NodeId>,
    ) -> Result<Self, SimError> {
        let nodes: BTreeSet<NodeId> = nodes.into_iter().collect();
        if nodes.is_empty() {
            return Err(SimError::BadTopology("no nodes".into()));
        }
        let mut adjacency: BTreeMap<NodeId, Vec<(NodeId, usize)>> =
            nodes.iter().map(|&n| (n, Vec::new())).collect();
        let mut seen_pairs = BTreeSet::new();
        for (idx, l) in links.iter().enumerate() {
            if l.u == l.v {
                return Err(SimError::BadTopology(format!("self-loop at node {}", l.u)));
            }
            if !nodes.contains(&l.u) || !nodes.contains(&l.v) {
                return Err(SimError::BadTopology(format!(
                    "link {}-{} references an unknown node",
                    l.u, l.v
                )));
            }
            if !(l.cost.is_finite() && l.cost > 0.0) {
                return Err(SimError::BadTopology(format!(
                    "link {}-{} must have positive finite cost",
                    l.u, l.v
                )));
            }
            if !(l.delay.is_finite() && l.delay >= 0.0) {
                return Err(SimError::BadTopology(format!(
                    "link {}-{} must have non-negative finite delay",
                    l.u, l.v
                )));
            }
            let pair = (l.u.min(l.v), l.u.max(l.v));
            if !seen_pairs.insert(pair) {
                return Err(SimError::BadTopology(format!(
                    "duplicate link between {} and {}",
                    pair.0, pair.1
                )));
            }
            adjacency.get_mut(&l.u).unwrap().push((l.v, idx));
            adjacency.get_mut(&l.v).unwrap().push((l.u, idx));
        }
        for neighbors in adjacency.values_mut() {
            neighbors.sort_unstable();
        }
        for (name, node) in &names {
            if !nodes.contains(node) {
                return Err(SimError::BadTopology(format!(
                    "name {name:?} references an unknown node {node}"
                )));
            }
        }
        Ok(Topology {
            nodes,
            links,
            adjacency,
            names,
        })
    }

    pub fn from_file(file: TopologyFile) -> Result<Self, SimError> {
        if file.format != FILE_FORMAT {
            return Err(SimError::BadTopology(format!(
                "unsupported format {}, expected {FILE_FORMAT}",
                file.format
            )));
        }
        Topology::with_names(file.nodes, file.links, file.names)
    }

    pub fn from_json(text: &str) -> Result<Self, SimError> {
        let file: TopologyFile =
            serde_json::from_str(text).map_err(|e| SimError::BadTopology(e.to_string()))?;
        Topology::from_file(file)
    }

    pub fn to_file(&self) -> TopologyFile {
        TopologyFile {
            format: FILE_FORMAT,
            nodes: self.nodes.iter().copied().collect(),
            links: self.links.clone(),
            names: self.names.clone(),
        }
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes.iter().copied()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn contains(&self, node: NodeId) -> bool {
        self.nodes.contains(&node)
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    /// Neighbors with link indices, sorted by neighbor id.
    pub fn neighbors(&self, node: NodeId) -> &[(NodeId, usize)] {
        self.adjacency.get(&node).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn link_between(&self, a: NodeId, b: NodeId) -> Option<usize> {
        self.neighbors(a)
            .iter()
            .find(|(n, _)| *n == b)
            .map(|(_, idx)| *idx)
    }

    /// Resolves an instantiation endpoint to a node: alias table first, then
    /// a plain decimal node id.
    pub fn resolve_endpoint(&self, endpoint: &str) -> Option<NodeId> {
        if let Some(&n) = self.names.get(endpoint) {
            return Some(n);
        }
        endpoint
            .parse::<NodeId>()
            .ok()
            .filter(|n| self.nodes.contains(n))
    }

    /// Every endpoint name under which a node is reachable: its aliases and
    /// its decimal id.
    pub fn endpoint_names(&self, node: NodeId) -> Vec<String> {
        let mut out: Vec<String> = self
            .names
            .iter()
            .filter(|(_, &n)| n == node)
            .map(|(name, _)| name.clone())
            .collect();
        out.push(node.to_string());
        out
    }

    pub fn is_connected(&self) -> bool {
        let Some(&start) = self.nodes.iter().next() else {
            return true;
        };
        let mut seen = BTreeSet::from([start]);
        let mut queue = VecDeque::from([start]);
        while let Some(n) = queue.pop_front() {
            for &(m, _) in self.neighbors(n) {
                if seen.insert(m) {
                    queue.push_back(m);
                }
            }
        }
        seen.len() == self.nodes.len()
    }
}

/// Shortest-path tree rooted at one node. Nodes missing from `dist` are
/// unreachable (infinite distance, no parent).
#[derive(Debug, Clone)]
pub struct SptTree {
    pub root: NodeId,
    /// Next hop toward the root for every reachable non-root node.
    pub parent: BTreeMap<NodeId, NodeId>,
    pub dist: BTreeMap<NodeId, f64>,
}

impl SptTree {
    /// Path `n, …, root`, or `None` when unreachable.
    pub fn path_to_root(&self, n: NodeId) -> Option<Vec<NodeId>> {
        if !self.dist.contains_key(&n) {
            return None;
        }
        let mut path = vec![n];
        let mut cur = n;
        while cur != self.root {
            cur = *self.parent.get(&cur)?;
            path.push(cur);
        }
        Some(path)
    }

    pub fn hops_to_root(&self, n: NodeId) -> Option<u32> {
        self.path_to_root(n).map(|p| (p.len() - 1) as u32)
    }
}

#[derive(PartialEq, PartialOrd)]
struct OrdF64(f64);

impl Eq for OrdF64 {}

#[allow(clippy::derive_ord_xor_partial_ord)]
impl Ord for OrdF64 {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Dijkstra by cost. Equal-cost predecessors are tie-broken toward the
/// smaller neighbor id, which makes the tree unique and reproducible.
pub fn shortest_paths(topo: &Topology, root: NodeId) -> Result<SptTree, SimError> {
    if !topo.contains(root) {
        return Err(SimError::UnknownNode(root));
    }
    let mut dist: BTreeMap<NodeId, f64> = BTreeMap::from([(root, 0.0)]);
    let mut parent: BTreeMap<NodeId, NodeId> = BTreeMap::new();
    let mut heap = BinaryHeap::from([Reverse((OrdF64(0.0), root))]);
    let mut settled: BTreeSet<NodeId> = BTreeSet::new();
    while let Some(Reverse((OrdF64(d), n))) = heap.pop() {
        if !settled.insert(n) {
            continue;
        }
        for &(m, link_idx) in topo.neighbors(n) {
            let cand = d + topo.links[link_idx].cost;
            match dist.get(&m) {
                Some(&best) if cand > best => {}
                Some(&best) if cand == best => {
                    // Same distance: keep the smaller-id parent.
                    if parent.get(&m).is_some_and(|&p| n < p) {
                        parent.insert(m, n);
                    }
                }
                _ => {
                    dist.insert(m, cand);
                    parent.insert(m, n);
                    heap.push(Reverse((OrdF64(cand), m)));
                }
            }
        }
    }
    Ok(SptTree { root, parent, dist })
}

/// Unweighted hop distances from an origin (the stretch baseline).
pub fn min_hops(topo: &Topology, origin: NodeId) -> BTreeMap<NodeId, u32> {
    let mut hops = BTreeMap::from([(origin, 0)]);
    let mut queue = VecDeque::from([origin]);
    while let Some(n) = queue.pop_front() {
        let h = hops[&n];
        for &(m, _) in topo.neighbors(n) {
            hops.entry(m).or_insert_with(|| {
                queue.push_back(m);
                h + 1
            });
        }
    }
    hops
}

/// Memoized shortest-path trees per root.
#[derive(Debug, Default)]
pub struct SptCache {
    trees: BTreeMap<NodeId, SptTree>,
}

impl SptCache {
    pub fn get(&mut self, topo: &Topology, root: NodeId) -> Result<&SptTree, SimError> {
        if !self.trees.contains_key(&root) {
            let t = shortest_paths(topo, root)?;
            self.trees.insert(root, t);
        }
        Ok(&self.trees[&root])
    }
}

/// A timed scenario event.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioEvent {
    #[serde(rename = "t")]
    pub time: f64,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventKind {
    Join {
        node: NodeId,
        uri: String,
    },
    Leave {
        node: NodeId,
        uri: String,
    },
    Publish {
        node: NodeId,
        uri: String,
        #[serde(default)]
        payload: String,
    },
    SetStrategy {
        strategy: StrategyKind,
    },
}

/// Scenario file: `{"format":1,"strategy":{...},"events":[...]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioFile {
    pub format: u32,
    #[serde(default)]
    pub strategy: StrategyConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub events: Vec<ScenarioEvent>,
}

impl ScenarioFile {
    pub fn from_json(text: &str) -> Result<Self, SimError> {
        let file: ScenarioFile =
            serde_json::from_str(text).map_err(|e| SimError::BadScenario(e.to_string()))?;
        if file.format != FILE_FORMAT {
            return Err(SimError::BadScenario(format!(
                "unsupported format {}, expected {FILE_FORMAT}",
                file.format
            )));
        }
        for ev in &file.events {
            if !(ev.time.is_finite() && ev.time >= 0.0) {
                return Err(SimError::BadScenario(
                    "event times must be non-negative and finite".into(),
                ));
            }
        }
        Ok(file)
    }
}

/// Per-link transmission totals for the per-link table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkUsage {
    pub u: NodeId,
    pub v: NodeId,
    pub transmissions: u64,
}

/// Aggregated outcome of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    /// Membership/control traffic in messages (joins, prunes, pull
    /// requests); never carries payload.
    pub control_messages: u64,
    /// Receiver → delivered `(publication uri, seq)` in arrival order.
    pub deliveries: BTreeMap<NodeId, Vec<(String, u64)>>,
    pub disconnected_subscribers: u64,
    /// Arrivals suppressed because the receiver already had the packet.
    pub duplicate_count: u64,
    /// Total `(packet, link)` traversals carrying payload.
    pub link_transmissions: u64,
    /// Max copies of a single logical packet crossing a single link.
    pub max_link_stress: u64,
    /// Mean over deliveries of hops-taken / min-hop distance (1.0 for
    /// self-delivery); 0.0 when nothing was delivered.
    pub mean_path_stretch: f64,
    pub per_link: Vec<LinkUsage>,
    /// Joins whose instantiation endpoint maps to no node.
    pub unresolved_endpoints: u64,
}

impl RunMetrics {
    pub fn total_deliveries(&self) -> u64 {
        self.deliveries.values().map(|v| v.len() as u64).sum()
    }
}

/// One delivered packet, as observed by a receiving node.
#[derive(Debug, Clone, PartialEq)]
pub struct Delivery {
    pub node: NodeId,
    pub uri: String,
    pub seq: u64,
    pub time: f64,
    pub hops: u32,
    pub origin: NodeId,
    pub packet: Option<SignedPacket>,
    pub payload: Vec<u8>,
}

#[derive(Debug, Default)]
struct MetricsAcc {
    control_messages: u64,
    deliveries: BTreeMap<NodeId, Vec<(String, u64)>>,
    disconnected_subscribers: u64,
    duplicate_count: u64,
    link_transmissions: u64,
    max_link_stress: u64,
    per_link: BTreeMap<usize, u64>,
    stretch_sum: f64,
    stretch_count: u64,
    unresolved_endpoints: u64,
}

#[derive(Debug, Clone)]
struct SubEntry {
    uri: GroupUri,
    nodes: BTreeMap<NodeId, u32>,
}

impl SubEntry {
    fn node_set(&self) -> BTreeSet<NodeId> {
        self.nodes.keys().copied().collect()
    }
}

/// The simulation engine: subscription registry, per-strategy forwarding
/// state, and metric accumulation. Scenario runs and the pub/sub middleware
/// both drive this type.
#[derive(Debug)]
pub struct Sim {
    topo: Topology,
    config: StrategyConfig,
    active: StrategyKind,
    bindings: BTreeMap<String, StrategyKind>,
    subs: BTreeMap<String, SubEntry>,
    state: ForwardingState,
    spts: SptCache,
    minhops: BTreeMap<NodeId, BTreeMap<NodeId, u32>>,
    seqs: BTreeMap<(NodeId, String), u64>,
    metrics: MetricsAcc,
    packet_counter: u64,
    time: f64,
    seed: u64,
}

impl Sim {
    pub fn new(topo: Topology, config: StrategyConfig, seed: u64) -> Sim {
        let active = config.strategy;
        Sim {
            topo,
            config,
            active,
            bindings: BTreeMap::new(),
            subs: BTreeMap::new(),
            state: ForwardingState::default(),
            spts: SptCache::default(),
            minhops: BTreeMap::new(),
            seqs: BTreeMap::new(),
            metrics: MetricsAcc::default(),
            packet_counter: 0,
            time: 0.0,
            seed,
        }
    }

    pub fn topology(&self) -> &Topology {
        &self.topo
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn now(&self) -> f64 {
        self.time
    }

    pub fn active_strategy(&self) -> StrategyKind {
        self.active
    }

    /// Scheme-specific strategy bindings (middleware service selection).
    pub fn set_scheme_binding(&mut self, scheme: &str, kind: StrategyKind) {
        self.bindings.insert(scheme.to_string(), kind);
    }

    fn strategy_for(&self, scheme: &str) -> StrategyKind {
        self.bindings.get(scheme).copied().unwrap_or(self.active)
    }

    /// Concrete groups currently subscribed anywhere (wildcard universe).
    pub fn active_groups(&self) -> Vec<GroupUri> {
        self.subs
            .values()
            .filter(|e| e.uri.is_concrete() && !e.nodes.is_empty())
            .map(|e| e.uri.clone())
            .collect()
    }

    /// Forwarding-state inspection: edges of the tree installed for a
    /// subscription key toward a root, normalized as `(min, max)` pairs.
    pub fn tree_edges(&self, key: &str, root: NodeId) -> Option<BTreeSet<(NodeId, NodeId)>> {
        self.state
            .trees
            .get(&(key.to_string(), root))
            .map(|t| t.edge_set())
    }

    /// True when forwarding state remains for the key.
    pub fn has_state_for(&self, key: &str) -> bool {
        self.state.trees.keys().any(|(k, _)| k == key) || self.state.shared.contains_key(key)
    }

    pub fn advance_to(&mut self, time: f64) {
        if time > self.time {
            self.time = time;
        }
    }

    fn stretch_baseline(&mut self, origin: NodeId, node: NodeId) -> u32 {
        if !self.minhops.contains_key(&origin) {
            let m = min_hops(&self.topo, origin);
            self.minhops.insert(origin, m);
        }
        self.minhops[&origin][&node]
    }

    /// Registers a subscription and installs forwarding state as the
    /// scheme's strategy requires. Joining a group nobody publishes to is a
    /// success, not an error.
    pub fn join(&mut self, node: NodeId, uri: &GroupUri) -> Result<(), SimError> {
        if !self.topo.contains(node) {
            return Err(SimError::UnknownNode(node));
        }
        let key = uri.to_string();
        let entry = self.subs.entry(key.clone()).or_insert_with(|| SubEntry {
            uri: uri.clone(),
            nodes: BTreeMap::new(),
        });
        let count = entry.nodes.entry(node).or_insert(0);
        *count += 1;
        if *count > 1 {
            return Ok(());
        }
        self.install_subscription(node, &key)
    }

    fn install_subscription(&mut self, node: NodeId, key: &str) -> Result<(), SimError> {
        let entry = self.subs.get(key).expect("registered").clone();
        match self.strategy_for(&entry.uri.scheme) {
            StrategyKind::Rpf => {
                let (roots, unresolved) =
                    routing::resolve_roots(&self.topo, &entry.uri.instantiation, self.config.rp)?;
                self.metrics.unresolved_endpoints += unresolved;
                for root in roots {
                    let spt = self.spts.get(&self.topo, root)?;
                    let outcome = self.state.rpf_join(spt, key, node, root);
                    self.metrics.control_messages += outcome.control;
                    self.metrics.disconnected_subscribers += outcome.disconnected;
                }
            }
            StrategyKind::StateDist => {
                let rp = self.config.rp.ok_or(SimError::MissingRp)?;
                let members = entry.node_set();
                let spt = self.spts.get(&self.topo, rp)?;
                let outcome = self.state.statedist_sync(spt, key, &members, node);
                self.metrics.control_messages += outcome.control;
                self.metrics.disconnected_subscribers += outcome.disconnected;
            }
            // Flooding, reflection, and hybrid push/pull need no
            // subscription state beyond the registry.
            StrategyKind::Flood | StrategyKind::Reflector | StrategyKind::Hybrid => {}
        }
        Ok(())
    }

    /// Removes a subscription, pruning forwarding state when the last local
    /// subscriber leaves.
    pub fn leave(&mut self, node: NodeId, uri: &GroupUri) -> Result<(), SimError> {
        if !self.topo.contains(node) {
            return Err(SimError::UnknownNode(node));
        }
        let key = uri.to_string();
        let Some(entry) = self.subs.get_mut(&key) else {
            return Err(SimError::NotSubscribed { node, uri: key });
        };
        let Some(count) = entry.nodes.get_mut(&node) else {
            return Err(SimError::NotSubscribed { node, uri: key });
        };
        *count -= 1;
        if *count > 0 {
            return Ok(());
        }
        entry.nodes.remove(&node);
        let remaining = entry.node_set();
        let uri = entry.uri.clone();
        if remaining.is_empty() {
            self.subs.remove(&key);
        }
        match self.strategy_for(&uri.scheme) {
            StrategyKind::Rpf => {
                let (roots, _) =
                    routing::resolve_roots(&self.topo, &uri.instantiation, self.config.rp)?;
                for root in roots {
                    let spt = self.spts.get(&self.topo, root)?;
                    let control = self.state.rpf_leave(spt, &key, node, root);
                    self.metrics.control_messages += control;
                }
            }
            StrategyKind::StateDist => {
                let rp = self.config.rp.ok_or(SimError::MissingRp)?;
                let spt = self.spts.get(&self.topo, rp)?;
                let outcome = self.state.statedist_sync(spt, &key, &remaining, node);
                self.metrics.control_messages += outcome.control;
            }
            StrategyKind::Flood | StrategyKind::Reflector | StrategyKind::Hybrid => {}
        }
        Ok(())
    }

    /// Switches the run-wide strategy: existing forwarding state is torn
    /// down and every live subscription re-signals under the new strategy.
    pub fn set_strategy(&mut self, kind: StrategyKind) -> Result<(), SimError> {
        self.active = kind;
        self.state = ForwardingState::default();
        let snapshot: Vec<(String, Vec<NodeId>)> = self
            .subs
            .iter()
            .map(|(k, e)| (k.clone(), e.nodes.keys().copied().collect()))
            .collect();
        for (key, nodes) in snapshot {
            for node in nodes {
                self.install_subscription(node, &key)?;
            }
        }
        Ok(())
    }

    /// Publishes a payload. Wildcard names expand over the active groups
    /// first; each concrete publication is sequence-numbered per
    /// `(origin, group)` unless the caller supplies its own numbering.
    pub fn publish(
        &mut self,
        origin: NodeId,
        uri: &GroupUri,
        payload: &[u8],
        packet: Option<&SignedPacket>,
        seq_override: Option<u64>,
    ) -> Result<Vec<Delivery>, SimError> {
        if !self.topo.contains(origin) {
            return Err(SimError::UnknownNode(origin));
        }
        if uri.is_wildcard() {
            let expansions = matching::expand_wildcard(uri, &self.active_groups())?;
            let mut all = Vec::new();
            for g in &expansions {
                all.extend(self.publish(origin, g, payload, packet, seq_override)?);
            }
            return Ok(all);
        }
        if !uri.is_concrete() {
            return Err(SimError::NonConcretePublication(uri.to_string()));
        }
        let key = uri.to_string();
        let seq = match seq_override {
            Some(s) => s,
            None => {
                let c = self.seqs.entry((origin, key.clone())).or_insert(0);
                let s = *c;
                *c += 1;
                s
            }
        };
        self.packet_counter += 1;
        let t0 = self.time;

        let (covering, matched) = routing::dispatch(
            uri,
            self.subs
                .iter()
                .map(|(k, e)| (k.as_str(), &e.uri, e.node_set())),
        );

        let traversals = self.strategy_traversals(origin, uri, &covering, &matched, t0)?;
        Ok(self.commit_traversals(origin, &key, seq, payload, packet, traversals))
    }

    fn strategy_traversals(
        &mut self,
        origin: NodeId,
        uri: &GroupUri,
        covering: &[String],
        matched: &BTreeSet<NodeId>,
        t0: f64,
    ) -> Result<Vec<Traversal>, SimError> {
        let mut out = Vec::new();
        match self.strategy_for(&uri.scheme) {
            StrategyKind::Flood => {
                let spt = self.spts.get(&self.topo, origin)?;
                out.push(routing::flood_deliver(&self.topo, spt, matched, origin, t0));
            }
            StrategyKind::Rpf => {
                for key in covering {
                    let sub_inst = self.subs[key].uri.instantiation.clone();
                    let root = match sub_inst {
                        Instantiation::Empty => self.config.rp.ok_or(SimError::MissingRp)?,
                        _ => {
                            let Some(endpoint) = uri.instantiation.single_endpoint() else {
                                continue;
                            };
                            match self.topo.resolve_endpoint(endpoint) {
                                Some(n) => n,
                                None => continue,
                            }
                        }
                    };
                    let Some(tree) = self.state.trees.get(&(key.clone(), root)) else {
                        continue;
                    };
                    let tree = tree.clone();
                    let spt = self.spts.get(&self.topo, root)?;
                    out.push(routing::rpf_deliver(&self.topo, spt, &tree, origin, t0));
                }
            }
            StrategyKind::StateDist => {
                let rp = self.config.rp.ok_or(SimError::MissingRp)?;
                for key in covering {
                    let Some(tree) = self.state.shared.get(key) else {
                        continue;
                    };
                    let tree = tree.clone();
                    let spt = self.spts.get(&self.topo, rp)?;
                    out.push(routing::statedist_deliver(&self.topo, spt, &tree, origin, t0));
                }
            }
            StrategyKind::Reflector => {
                let reflector = uri
                    .instantiation
                    .single_endpoint()
                    .and_then(|e| self.topo.resolve_endpoint(e))
                    .or(self.config.reflector)
                    .ok_or(SimError::NoReflector)?;
                let spt = self.spts.get(&self.topo, reflector)?;
                out.push(routing::reflector_deliver(
                    &self.topo, spt, reflector, matched, origin, t0,
                ));
            }
            StrategyKind::Hybrid => {
                let caches: BTreeSet<NodeId> = match uri
                    .instantiation
                    .single_endpoint()
                    .and_then(|e| self.topo.resolve_endpoint(e))
                {
                    Some(n) => BTreeSet::from([n]),
                    None => self.config.caches.clone(),
                };
                if caches.is_empty() {
                    return Err(SimError::NoCaches);
                }
                let (trav, control) = routing::hybrid_deliver(
                    &self.topo,
                    &mut self.spts,
                    &caches,
                    matched,
                    origin,
                    t0,
                )?;
                self.metrics.control_messages += control;
                out.push(trav);
            }
        }
        Ok(out)
    }

    fn commit_traversals(
        &mut self,
        origin: NodeId,
        key: &str,
        seq: u64,
        payload: &[u8],
        packet: Option<&SignedPacket>,
        traversals: Vec<Traversal>,
    ) -> Vec<Delivery> {
        let mut stress: BTreeMap<usize, u64> = BTreeMap::new();
        let mut delivered: BTreeSet<NodeId> = BTreeSet::new();
        let mut out = Vec::new();
        for trav in traversals {
            for hop in &trav.hops {
                let link = self
                    .topo
                    .link_between(hop.from, hop.to)
                    .expect("traversal uses topology links");
                self.metrics.link_transmissions += 1;
                *self.metrics.per_link.entry(link).or_insert(0) += 1;
                let s = stress.entry(link).or_insert(0);
                *s += 1;
                self.metrics.max_link_stress = self.metrics.max_link_stress.max(*s);
            }
            for d in &trav.deliveries {
                if !delivered.insert(d.node) {
                    self.metrics.duplicate_count += 1;
                    continue;
                }
                let stretch = if d.node == origin {
                    1.0
                } else {
                    f64::from(d.hops) / f64::from(self.stretch_baseline(origin, d.node))
                };
                self.metrics.stretch_sum += stretch;
                self.metrics.stretch_count += 1;
                self.metrics
                    .deliveries
                    .entry(d.node)
                    .or_default()
                    .push((key.to_string(), seq));
                out.push(Delivery {
                    node: d.node,
                    uri: key.to_string(),
                    seq,
                    time: d.time,
                    hops: d.hops,
                    origin,
                    packet: packet.cloned(),
                    payload: payload.to_vec(),
                });
            }
        }
        out
    }

    /// Freezes the accumulated metrics.
    pub fn metrics(&self) -> RunMetrics {
        let m = &self.metrics;
        RunMetrics {
            control_messages: m.control_messages,
            deliveries: m.deliveries.clone(),
            disconnected_subscribers: m.disconnected_subscribers,
            duplicate_count: m.duplicate_count,
            link_transmissions: m.link_transmissions,
            max_link_stress: m.max_link_stress,
            mean_path_stretch: if m.stretch_count == 0 {
                0.0
            } else {
                m.stretch_sum / m.stretch_count as f64
            },
            per_link: m
                .per_link
                .iter()
                .map(|(&idx, &transmissions)| {
                    let l = &self.topo.links[idx];
                    LinkUsage {
                        u: l.u.min(l.v),
                        v: l.u.max(l.v),
                        transmissions,
                    }
                })
                .collect(),
            unresolved_endpoints: m.unresolved_endpoints,
        }
    }
}

/// Executes a scenario: events sorted by time (stable for ties), processed
/// through a fresh engine. The result is a pure function of the inputs.
pub fn run(
    topo: &Topology,
    events: &[ScenarioEvent],
    config: &StrategyConfig,
    seed: u64,
) -> Result<RunMetrics, SimError> {
    let mut sim = Sim::new(topo.clone(), config.clone(), seed);
    let mut order: Vec<usize> = (0..events.len()).collect();
    order.sort_by(|&a, &b| events[a].time.total_cmp(&events[b].time).then(a.cmp(&b)));
    for idx in order {
        let ev = &events[idx];
        if !(ev.time.is_finite() && ev.time >= 0.0) {
            return Err(SimError::BadScenario(
                "event times must be non-negative and finite".into(),
            ));
        }
        sim.advance_to(ev.time);
        match &ev.kind {
            EventKind::Join { node, uri } => {
                let parsed = crate::naming::parse(uri)?;
                sim.join(*node, &parsed)?;
            }
            EventKind::Leave { node, uri } => {
                let parsed = crate::naming::parse(uri)?;
                sim.leave(*node, &parsed)?;
            }
            EventKind::Publish { node, uri, payload } => {
                let parsed = crate::naming::parse(uri)?;
                sim.publish(*node, &parsed, payload.as_bytes(), None, None)?;
            }
            EventKind::SetStrategy { strategy } => {
                sim.set_strategy(*strategy)?;
            }
        }
    }
    Ok(sim.metrics())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line3() -> Topology {
        // 1 - 2 - 3, unit cost and delay
        Topology::new(
            [1, 2, 3],
            vec![
                Link { u: 1, v: 2, cost: 1.0, delay: 1.0 },
                Link { u: 2, v: 3, cost: 1.0, delay: 1.0 },
            ],
        )
        .unwrap()
    }

    #[test]
    fn line_graph_distances() {
        let t = line3();
        let spt = shortest_paths(&t, 1).unwrap();
        assert_eq!(spt.dist[&1], 0.0);
        assert_eq!(spt.dist[&2], 1.0);
        assert_eq!(spt.dist[&3], 2.0);
        assert_eq!(spt.path_to_root(3).unwrap(), vec![3, 2, 1]);
    }

    #[test]
    fn triangle_parent_is_direct_link() {
        let t = Topology::new(
            [1, 2, 3],
            vec![
                Link { u: 1, v: 2, cost: 1.0, delay: 0.0 },
                Link { u: 2, v: 3, cost: 1.0, delay: 0.0 },
                Link { u: 1, v: 3, cost: 1.0, delay: 0.0 },
            ],
        )
        .unwrap();
        let spt = shortest_paths(&t, 1).unwrap();
        assert_eq!(spt.parent[&3], 1);
        assert_eq!(spt.parent[&2], 1);
    }

    #[test]
    fn equal_cost_tie_breaks_to_smaller_id() {
        // 1-2, 1-3, 2-4, 3-4: node 4 is reachable at equal cost via 2 or 3.
        let t = Topology::new(
            [1, 2, 3, 4],
            vec![
                Link { u: 1, v: 2, cost: 1.0, delay: 0.0 },
                Link { u: 1, v: 3, cost: 1.0, delay: 0.0 },
                Link { u: 2, v: 4, cost: 1.0, delay: 0.0 },
                Link { u: 3, v: 4, cost: 1.0, delay: 0.0 },
            ],
        )
        .unwrap();
        let spt = shortest_paths(&t, 1).unwrap();
        assert_eq!(spt.parent[&4], 2);
    }

    #[test]
    fn disconnected_node_has_no_distance() {
        let t = Topology::new(
            [1, 2, 9],
            vec![Link { u: 1, v: 2, cost: 1.0, delay: 0.0 }],
        )
        .unwrap();
        let spt = shortest_paths(&t, 1).unwrap();
        assert!(!spt.dist.contains_key(&9));
        assert!(spt.path_to_root(9).is_none());
        assert!(!t.is_connected());
    }

    #[test]
    fn unknown_root_rejected() {
        assert!(matches!(
            shortest_paths(&line3(), 42),
            Err(SimError::UnknownNode(42))
        ));
    }

    #[test]
    fn topology_validation() {
        assert!(Topology::new([1], vec![Link { u: 1, v: 1, cost: 1.0, delay: 0.0 }]).is_err());
        assert!(Topology::new([1, 2], vec![Link { u: 1, v: 3, cost: 1.0, delay: 0.0 }]).is_err());
        assert!(Topology::new([1, 2], vec![Link { u: 1, v: 2, cost: 0.0, delay: 0.0 }]).is_err());
        assert!(Topology::new(
            [1, 2],
            vec![
                Link { u: 1, v: 2, cost: 1.0, delay: 0.0 },
                Link { u: 2, v: 1, cost: 2.0, delay: 0.0 },
            ],
        )
        .is_err());
    }

    #[test]
    fn topology_json_round_trip() {
        let text = r#"{"format":1,"nodes":[1,2,3],"links":[{"u":1,"v":2,"cost":1.0},{"u":2,"v":3,"cost":2.0,"delay":0.5}],"names":{"cnn.com":3}}"#;
        let topo = Topology::from_json(text).unwrap();
        assert_eq!(topo.resolve_endpoint("cnn.com"), Some(3));
        assert_eq!(topo.resolve_endpoint("2"), Some(2));
        assert_eq!(topo.resolve_endpoint("nowhere.example"), None);
        assert_eq!(topo.links()[0].delay, 0.0);
        let file = topo.to_file();
        assert_eq!(file.format, 1);
        assert_eq!(file.nodes, vec![1, 2, 3]);
    }

    #[test]
    fn bad_format_version_rejected() {
        let text = r#"{"format":2,"nodes":[1],"links":[]}"#;
        assert!(matches!(
            Topology::from_json(text),
            Err(SimError::BadTopology(_))
        ));
    }

    #[test]
    fn scenario_parses_events() {
        let text = r#"{
            "format": 1,
            "strategy": {"strategy": "rpf", "rp": 2},
            "events": [
                {"t": 0.0, "kind": "join", "node": 3, "uri": "opaque://news"},
                {"t": 1.0, "kind": "publish", "node": 1, "uri": "opaque://news", "payload": "hi"},
                {"t": 2.0, "kind": "set_strategy", "strategy": "flood"},
                {"t": 3.0, "kind": "leave", "node": 3, "uri": "opaque://news"}
            ]
        }"#;
        let file = ScenarioFile::from_json(text).unwrap();
        assert_eq!(file.events.len(), 4);
        assert_eq!(file.strategy.rp, Some(2));
    }

    #[test]
    fn min_hops_is_bfs() {
        let t = line3();
        let h = min_hops(&t, 1);
        assert_eq!(h[&3], 2);
        assert_eq!(h[&1], 0);
    }
}
