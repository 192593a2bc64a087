//! Group distribution strategies: flooding, reverse-path forwarding,
//! control-plane state distribution, hybrid push/pull, and unicast server
//! reflection.
//!
//! Each strategy turns subscriptions into forwarding state and a publish
//! into a traversal: the set of link hops the packet takes, with
//! delay-accumulated arrival times, and the deliveries it produces. Which
//! strategy serves a group is a deployment choice (per run, or per scheme in
//! the middleware); names never predefine the distribution technology.
//!
//! The instantiation clause of a name is interpreted by the strategy in
//! charge: reverse-path forwarding reads it as the source (or source set) to
//! join toward, the reflector reads it as the reflector server, and the
//! hybrid scheme reads it as the replication cache to push to.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::matching;
use crate::naming::{GroupUri, Instantiation};
use crate::simnet::{NodeId, SimError, SptCache, SptTree, Topology};

/// The five distribution strategies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StrategyKind {
    Flood,
    Rpf,
    #[serde(rename = "statedist")]
    StateDist,
    Hybrid,
    Reflector,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 5] = [
        StrategyKind::Flood,
        StrategyKind::Rpf,
        StrategyKind::StateDist,
        StrategyKind::Hybrid,
        StrategyKind::Reflector,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::Flood => "flood",
            StrategyKind::Rpf => "rpf",
            StrategyKind::StateDist => "statedist",
            StrategyKind::Hybrid => "hybrid",
            StrategyKind::Reflector => "reflector",
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for StrategyKind {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "flood" => Ok(StrategyKind::Flood),
            "rpf" => Ok(StrategyKind::Rpf),
            "statedist" => Ok(StrategyKind::StateDist),
            "hybrid" => Ok(StrategyKind::Hybrid),
            "reflector" => Ok(StrategyKind::Reflector),
            other => Err(SimError::UnknownStrategy(other.to_string())),
        }
    }
}

impl Default for StrategyKind {
    fn default() -> Self {
        StrategyKind::Rpf
    }
}

/// Strategy selection plus the node parameters individual strategies need:
/// a rendezvous point for shared trees, edge caches for hybrid push/pull,
/// and a reflector server.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StrategyConfig {
    #[serde(default)]
    pub strategy: StrategyKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rp: Option<NodeId>,
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub caches: BTreeSet<NodeId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reflector: Option<NodeId>,
}

impl StrategyConfig {
    pub fn new(strategy: StrategyKind) -> Self {
        StrategyConfig {
            strategy,
            ..Default::default()
        }
    }

    pub fn with_rp(mut self, rp: NodeId) -> Self {
        self.rp = Some(rp);
        self
    }

    pub fn with_caches(mut self, caches: impl IntoIterator<Item = NodeId>) -> Self {
        self.caches = caches.into_iter().collect();
        self
    }

    pub fn with_reflector(mut self, reflector: NodeId) -> Self {
        self.reflector = Some(reflector);
        self
    }
}

/// One link crossing with its delay-accumulated arrival time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hop {
    pub from: NodeId,
    pub to: NodeId,
    pub arrive: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraversalDelivery {
    pub node: NodeId,
    pub time: f64,
    pub hops: u32,
}

/// What a single publish did on the wire.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Traversal {
    pub hops: Vec<Hop>,
    pub deliveries: Vec<TraversalDelivery>,
}

impl Traversal {
    pub fn transmissions(&self) -> u64 {
        self.hops.len() as u64
    }

    pub fn delivered_nodes(&self) -> BTreeSet<NodeId> {
        self.deliveries.iter().map(|d| d.node).collect()
    }
}

fn link_delay(topo: &Topology, a: NodeId, b: NodeId) -> f64 {
    let idx = topo.link_between(a, b).expect("adjacent nodes");
    topo.links()[idx].delay
}

/// Appends hops along a node sequence, returning time and hop count at the
/// end of the walk.
fn walk_path(
    topo: &Topology,
    path: &[NodeId],
    mut t: f64,
    mut h: u32,
    out: &mut Vec<Hop>,
) -> (f64, u32) {
    for w in path.windows(2) {
        t += link_delay(topo, w[0], w[1]);
        h += 1;
        out.push(Hop {
            from: w[0],
            to: w[1],
            arrive: t,
        });
    }
    (t, h)
}

/// A distribution tree: the union of subscribers' paths toward a root,
/// stored as downstream (away-from-root) child sets. Downstream sets never
/// contain a node's own upstream link, so tree forwarding cannot echo a
/// packet back where it came from.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TreeState {
    pub root: NodeId,
    pub subscribers: BTreeSet<NodeId>,
    pub children: BTreeMap<NodeId, BTreeSet<NodeId>>,
    pub nodes: BTreeSet<NodeId>,
}

impl TreeState {
    /// Rebuilds the tree from the current subscriber set; returns the
    /// number of subscribers with no path to the root.
    fn rebuild(spt: &SptTree, subscribers: &BTreeSet<NodeId>) -> (TreeState, u64) {
        let mut tree = TreeState {
            root: spt.root,
            subscribers: subscribers.clone(),
            children: BTreeMap::new(),
            nodes: BTreeSet::new(),
        };
        let mut disconnected = 0;
        for &s in subscribers {
            let Some(path) = spt.path_to_root(s) else {
                disconnected += 1;
                continue;
            };
            // path = s .. root; children point away from the root.
            tree.nodes.extend(&path);
            for w in path.windows(2) {
                tree.children.entry(w[1]).or_default().insert(w[0]);
            }
        }
        if !tree.nodes.is_empty() || subscribers.iter().any(|&s| s == spt.root) {
            tree.nodes.insert(spt.root);
        }
        (tree, disconnected)
    }

    /// Tree edges as normalized `(min, max)` pairs.
    pub fn edge_set(&self) -> BTreeSet<(NodeId, NodeId)> {
        self.children
            .iter()
            .flat_map(|(&p, kids)| kids.iter().map(move |&c| (p.min(c), p.max(c))))
            .collect()
    }

    fn tree_neighbors(&self, n: NodeId) -> BTreeSet<NodeId> {
        let mut out: BTreeSet<NodeId> = self.children.get(&n).cloned().unwrap_or_default();
        for (&p, kids) in &self.children {
            if kids.contains(&n) {
                out.insert(p);
            }
        }
        out
    }

    fn is_empty(&self) -> bool {
        self.subscribers.is_empty()
    }
}

/// Outcome of a membership change: control messages sent and subscribers
/// found disconnected.
#[derive(Debug, Clone, Copy, Default)]
pub struct SyncOutcome {
    pub control: u64,
    pub disconnected: u64,
}

/// Per-run forwarding state: source/rendezvous trees per
/// `(subscription key, root)` and shared bidirectional trees per key.
#[derive(Debug, Clone, Default)]
pub struct ForwardingState {
    pub trees: BTreeMap<(String, NodeId), TreeState>,
    pub shared: BTreeMap<String, TreeState>,
}

impl ForwardingState {
    /// Installs reverse-path state for a subscriber toward a root. The join
    /// signal travels the subscriber's shortest path, one control message
    /// per hop.
    pub fn rpf_join(
        &mut self,
        spt: &SptTree,
        key: &str,
        subscriber: NodeId,
        root: NodeId,
    ) -> SyncOutcome {
        let entry = self
            .trees
            .entry((key.to_string(), root))
            .or_insert_with(|| TreeState {
                root,
                ..TreeState::default()
            });
        let mut subscribers = entry.subscribers.clone();
        subscribers.insert(subscriber);
        let (tree, _) = TreeState::rebuild(spt, &subscribers);
        *entry = tree;
        match spt.hops_to_root(subscriber) {
            Some(h) => SyncOutcome {
                control: u64::from(h),
                disconnected: 0,
            },
            None => SyncOutcome {
                control: 0,
                disconnected: 1,
            },
        }
    }

    /// Removes reverse-path state; pruning the last subscriber drops every
    /// state entry for the `(key, root)` tree.
    pub fn rpf_leave(
        &mut self,
        spt: &SptTree,
        key: &str,
        subscriber: NodeId,
        root: NodeId,
    ) -> u64 {
        let id = (key.to_string(), root);
        let Some(entry) = self.trees.get_mut(&id) else {
            return 0;
        };
        let mut subscribers = entry.subscribers.clone();
        subscribers.remove(&subscriber);
        if subscribers.is_empty() {
            self.trees.remove(&id);
        } else {
            let (tree, _) = TreeState::rebuild(spt, &subscribers);
            *entry = tree;
        }
        spt.hops_to_root(subscriber).map(u64::from).unwrap_or(0)
    }

    /// Synchronizes the shared bidirectional tree for a group to a new
    /// membership set. State is established by control messages alone,
    /// before and independent of any data packet; `changed` is the member
    /// whose join or leave triggered the sync.
    pub fn statedist_sync(
        &mut self,
        spt: &SptTree,
        key: &str,
        members: &BTreeSet<NodeId>,
        changed: NodeId,
    ) -> SyncOutcome {
        let (tree, _) = TreeState::rebuild(spt, members);
        if tree.is_empty() {
            self.shared.remove(key);
        } else {
            self.shared.insert(key.to_string(), tree);
        }
        match spt.hops_to_root(changed) {
            Some(h) => SyncOutcome {
                control: u64::from(h),
                disconnected: 0,
            },
            None => SyncOutcome {
                control: 0,
                disconnected: 1,
            },
        }
    }
}

/// Resolves the roots a subscription's instantiation asks to join toward:
/// the rendezvous point for any-source names, the named node for
/// single-source names, every member of an explicit set, and every node
/// whose name tests positive for a filter set (false positives included —
/// they cost join traffic, nothing else).
pub fn resolve_roots(
    topo: &Topology,
    inst: &Instantiation,
    rp: Option<NodeId>,
) -> Result<(Vec<NodeId>, u64), SimError> {
    let mut unresolved = 0;
    let mut roots = BTreeSet::new();
    match inst {
        Instantiation::Empty => {
            roots.insert(rp.ok_or(SimError::MissingRp)?);
        }
        Instantiation::Single(e) => match topo.resolve_endpoint(e) {
            Some(n) => {
                roots.insert(n);
            }
            None => unresolved += 1,
        },
        Instantiation::ExplicitSet(set) => {
            for e in set {
                match topo.resolve_endpoint(e) {
                    Some(n) => {
                        roots.insert(n);
                    }
                    None => unresolved += 1,
                }
            }
        }
        Instantiation::FilterSet(filter) => {
            for node in topo.nodes() {
                if topo
                    .endpoint_names(node)
                    .iter()
                    .any(|name| filter.contains(name))
                {
                    roots.insert(node);
                }
            }
        }
    }
    Ok((roots.into_iter().collect(), unresolved))
}

/// Matches a concrete publication against the subscription table: returns
/// the covering subscription keys (sorted) and the union of their
/// subscriber nodes.
pub fn dispatch<'a>(
    publication: &GroupUri,
    subscriptions: impl Iterator<Item = (&'a str, &'a GroupUri, BTreeSet<NodeId>)>,
) -> (Vec<String>, BTreeSet<NodeId>) {
    let mut covering = Vec::new();
    let mut matched = BTreeSet::new();
    for (key, sub, nodes) in subscriptions {
        if matching::covers(sub, publication) {
            covering.push(key.to_string());
            matched.extend(nodes);
        }
    }
    (covering, matched)
}

/// Interest-blind broadcast over the origin-rooted shortest-path tree
/// (reverse-path broadcast): every reachable node receives the packet
/// exactly once, whether or not anyone subscribed; group members record a
/// delivery.
pub fn flood_deliver(
    topo: &Topology,
    spt: &SptTree,
    members: &BTreeSet<NodeId>,
    origin: NodeId,
    t0: f64,
) -> Traversal {
    debug_assert_eq!(spt.root, origin);
    let mut children: BTreeMap<NodeId, Vec<NodeId>> = BTreeMap::new();
    for (&child, &parent) in &spt.parent {
        children.entry(parent).or_default().push(child);
    }
    let mut trav = Traversal::default();
    let mut queue = VecDeque::from([(origin, t0, 0u32)]);
    while let Some((n, t, h)) = queue.pop_front() {
        if members.contains(&n) {
            trav.deliveries.push(TraversalDelivery { node: n, time: t, hops: h });
        }
        for &c in children.get(&n).into_iter().flatten() {
            let t_next = t + link_delay(topo, n, c);
            trav.hops.push(Hop { from: n, to: c, arrive: t_next });
            queue.push_back((c, t_next, h + 1));
        }
    }
    trav
}

/// Delivery along an installed reverse-path tree. A publish from the root
/// flows straight down the installed states; a publish from elsewhere first
/// travels the origin's shortest path to the root (the register leg), then
/// down the tree.
pub fn rpf_deliver(
    topo: &Topology,
    spt: &SptTree,
    tree: &TreeState,
    origin: NodeId,
    t0: f64,
) -> Traversal {
    debug_assert_eq!(spt.root, tree.root);
    let mut trav = Traversal::default();
    let (t, h) = if origin == tree.root {
        (t0, 0)
    } else {
        let Some(mut path) = spt.path_to_root(origin) else {
            return trav;
        };
        // Walk up toward the root (unicast leg, no tree state involved).
        path.dedup();
        walk_path(topo, &path, t0, 0, &mut trav.hops)
    };
    down_tree(topo, tree, tree.root, t, h, &mut trav);
    trav
}

fn down_tree(
    topo: &Topology,
    tree: &TreeState,
    entry: NodeId,
    t: f64,
    h: u32,
    trav: &mut Traversal,
) {
    let mut queue = VecDeque::from([(entry, t, h)]);
    while let Some((n, t, h)) = queue.pop_front() {
        if tree.subscribers.contains(&n) {
            trav.deliveries.push(TraversalDelivery { node: n, time: t, hops: h });
        }
        for &c in tree.children.get(&n).into_iter().flatten() {
            let t_next = t + link_delay(topo, n, c);
            trav.hops.push(Hop { from: n, to: c, arrive: t_next });
            queue.push_back((c, t_next, h + 1));
        }
    }
}

/// Delivery along a shared bidirectional tree. On-tree publishers inject in
/// place and the packet spreads over every tree link; off-tree publishers
/// walk toward the rendezvous point until they touch the tree. No per-source
/// state exists anywhere.
pub fn statedist_deliver(
    topo: &Topology,
    spt_rp: &SptTree,
    tree: &TreeState,
    origin: NodeId,
    t0: f64,
) -> Traversal {
    let mut trav = Traversal::default();
    let (entry, t, h) = if tree.nodes.contains(&origin) {
        (origin, t0, 0)
    } else {
        let Some(path) = spt_rp.path_to_root(origin) else {
            return trav;
        };
        let mut t = t0;
        let mut h = 0;
        let mut entry = None;
        for w in path.windows(2) {
            t += link_delay(topo, w[0], w[1]);
            h += 1;
            trav.hops.push(Hop { from: w[0], to: w[1], arrive: t });
            if tree.nodes.contains(&w[1]) {
                entry = Some(w[1]);
                break;
            }
        }
        match entry {
            Some(e) => (e, t, h),
            // Reached the rendezvous point without touching the tree:
            // nobody is subscribed.
            None => return trav,
        }
    };
    // Bidirectional spread: forward on every tree link except the arrival.
    let mut visited = BTreeSet::from([entry]);
    let mut queue = VecDeque::from([(entry, t, h)]);
    while let Some((n, t, h)) = queue.pop_front() {
        if tree.subscribers.contains(&n) {
            trav.deliveries.push(TraversalDelivery { node: n, time: t, hops: h });
        }
        for m in tree.tree_neighbors(n) {
            if visited.insert(m) {
                let t_next = t + link_delay(topo, n, m);
                trav.hops.push(Hop { from: n, to: m, arrive: t_next });
                queue.push_back((m, t_next, h + 1));
            }
        }
    }
    trav
}

/// Unicast server reflection: the origin unicasts to the reflector, which
/// unicasts one copy per subscriber. Trivial routing, but the reflector's
/// access links carry one copy per receiver.
pub fn reflector_deliver(
    topo: &Topology,
    spt_reflector: &SptTree,
    reflector: NodeId,
    subscribers: &BTreeSet<NodeId>,
    origin: NodeId,
    t0: f64,
) -> Traversal {
    debug_assert_eq!(spt_reflector.root, reflector);
    let mut trav = Traversal::default();
    let Some(up) = spt_reflector.path_to_root(origin) else {
        return trav;
    };
    let (t_r, h_r) = walk_path(topo, &up, t0, 0, &mut trav.hops);
    for &s in subscribers {
        if s == reflector {
            trav.deliveries.push(TraversalDelivery { node: s, time: t_r, hops: h_r });
            continue;
        }
        let Some(down) = spt_reflector.path_to_root(s) else {
            continue;
        };
        let down: Vec<NodeId> = down.into_iter().rev().collect();
        let (t_s, h_s) = walk_path(topo, &down, t_r, h_r, &mut trav.hops);
        trav.deliveries.push(TraversalDelivery { node: s, time: t_s, hops: h_s });
    }
    trav
}

/// Hybrid push/pull: the packet is multicast-pushed along the origin-rooted
/// tree spanning every cache that has assigned subscribers, then each
/// subscriber pulls from its nearest cache (by cost, smaller cache id on
/// ties). Pull requests count as control messages; the push and the pull
/// responses carry payload.
pub fn hybrid_deliver(
    topo: &Topology,
    spts: &mut SptCache,
    caches: &BTreeSet<NodeId>,
    subscribers: &BTreeSet<NodeId>,
    origin: NodeId,
    t0: f64,
) -> Result<(Traversal, u64), SimError> {
    let mut trav = Traversal::default();
    let mut control = 0u64;

    // Nearest-cache assignment.
    let mut assignment: BTreeMap<NodeId, BTreeSet<NodeId>> = BTreeMap::new();
    for &s in subscribers {
        let mut best: Option<(f64, NodeId)> = None;
        for &c in caches {
            let spt = spts.get(topo, c)?;
            let Some(&d) = spt.dist.get(&s) else { continue };
            let better = match best {
                None => true,
                Some((bd, bc)) => d < bd || (d == bd && c < bc),
            };
            if better {
                best = Some((d, c));
            }
        }
        if let Some((_, c)) = best {
            assignment.entry(c).or_default().insert(s);
        }
    }

    // Push leg: origin-rooted tree spanning the active caches.
    let active: BTreeSet<NodeId> = assignment.keys().copied().collect();
    let spt_origin = spts.get(topo, origin)?;
    let (push_tree, _) = TreeState::rebuild(spt_origin, &active);
    let mut cache_arrival: BTreeMap<NodeId, (f64, u32)> = BTreeMap::new();
    let mut queue = VecDeque::from([(origin, t0, 0u32)]);
    while let Some((n, t, h)) = queue.pop_front() {
        if active.contains(&n) {
            cache_arrival.insert(n, (t, h));
        }
        for &c in push_tree.children.get(&n).into_iter().flatten() {
            let t_next = t + link_delay(topo, n, c);
            trav.hops.push(Hop { from: n, to: c, arrive: t_next });
            queue.push_back((c, t_next, h + 1));
        }
    }

    // Pull leg: request up (control), response down (payload).
    for (&cache, subs) in &assignment {
        let Some(&(t_c, h_c)) = cache_arrival.get(&cache) else {
            continue;
        };
        let spt_cache = spts.get(topo, cache)?;
        for &s in subs {
            if s == cache {
                trav.deliveries.push(TraversalDelivery { node: s, time: t_c, hops: h_c });
                continue;
            }
            let Some(path) = spt_cache.path_to_root(s) else {
                continue;
            };
            control += (path.len() - 1) as u64;
            let down: Vec<NodeId> = path.into_iter().rev().collect();
            let (t_s, h_s) = walk_path(topo, &down, t_c, h_c, &mut trav.hops);
            trav.deliveries.push(TraversalDelivery { node: s, time: t_s, hops: h_s });
        }
    }
    Ok((trav, control))
}
