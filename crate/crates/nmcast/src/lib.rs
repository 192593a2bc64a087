//! Name-oriented multicast toolkit.
//!
//! The crate models multicast group communication around *names* instead of
//! addresses: a group URI carries a namespace, a hierarchical group
//! identifier, an optional instantiation (the publishing node or node set),
//! an optional port, and an optional security credential. On top of the
//! naming layer sit coverage matching (hierarchy, aggregation, wildcard
//! publish, instantiation sets), self-certifying group identities with
//! source-admission certificates, and a deterministic network simulator that
//! exercises five group-distribution strategies behind a
//! technology-transparent pub/sub socket API.
//!
//! Start with the runnable examples (`cargo run --example parse_names`, …);
//! each one demonstrates a single capability end to end.

pub mod bloom;
pub mod cli;
pub mod identity;
pub mod matching;
pub mod middleware;
pub mod naming;
pub mod routing;
pub mod simnet;

pub use bloom::BloomFilter;
pub use identity::{
    GroupIdentity, KeyPair, Lifetime, PacketSigner, SignedPacket, SourceCertificate, Verdict,
};
pub use matching::{coverage, covers, expand_wildcard, group_covers, inst_covers, Coverage};
pub use middleware::{MSocket, Network, ReceivedMessage};
pub use naming::{default_map, GroupUri, Instantiation, TechBinding};
pub use routing::{StrategyConfig, StrategyKind};
pub use simnet::{run, NodeId, RunMetrics, ScenarioEvent, Topology};
