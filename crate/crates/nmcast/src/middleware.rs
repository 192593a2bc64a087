//! Technology-transparent pub/sub sockets.
//!
//! A socket is bound to a node and joins groups by name; which distribution
//! strategy serves a group follows from its scheme (`mcast-ip` rides on
//! reverse-path forwarding, `sip` on a reflector, everything else on the
//! run's configured default), never from the application code. Joining a
//! group with no active source succeeds silently, and a receive on a silent
//! group returns nothing rather than an error: the absence of data does not
//! indicate the absence of a source. Malformed names, by contrast, always
//! error at the API boundary.
//!
//! Packets are signed on send and verified at the first hop and at every
//! receiving socket; unverified packets are dropped and counted unless a
//! socket opts into receiving them.

use std::collections::{BTreeMap, VecDeque};

use crate::identity::{sign_packet, verify_packet, IdentityError, PacketSigner, SignedPacket, Verdict};
use crate::matching;
use crate::naming::{self, GroupUri, UriError};
use crate::routing::{StrategyConfig, StrategyKind};
use crate::simnet::{Delivery, NodeId, RunMetrics, Sim, SimError, Topology};

/// Errors at the socket API boundary.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MiddlewareError {
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("unknown socket")]
    UnknownSocket,
    #[error("malformed group name: {0}")]
    MalformedUri(#[from] UriError),
    #[error("subscriptions may not carry the publish wildcard: {0:?}")]
    WildcardSubscription(String),
    #[error("not subscribed to {0:?}")]
    NotSubscribed(String),
    #[error(transparent)]
    Identity(#[from] IdentityError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// Handle to a multicast socket.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MSocket(usize);

/// A message delivered to a socket, in arrival order.
#[derive(Debug, Clone, PartialEq)]
pub struct ReceivedMessage {
    /// Canonical publication name (credential clause bound to the group ID).
    pub group_uri: String,
    pub payload: Vec<u8>,
    pub source_node: NodeId,
    pub seq: u64,
    pub verified: Verdict,
    pub time: f64,
}

#[derive(Debug)]
struct SocketState {
    node: NodeId,
    subscriptions: BTreeMap<String, GroupUri>,
    queue: VecDeque<ReceivedMessage>,
    seqs: BTreeMap<String, u64>,
    deliver_unverified: bool,
    dropped_unverified: u64,
}

/// The middleware: sockets on top of a simulated network.
#[derive(Debug)]
pub struct Network {
    sim: Sim,
    sockets: Vec<SocketState>,
    verify_every_hop: bool,
    first_hop_drops: u64,
    hop_verifications: u64,
}

impl Network {
    /// Builds a network over a topology. Scheme defaults: `mcast-ip` →
    /// reverse-path forwarding, `sip` → reflector; other schemes use the
    /// configured strategy. All bindings can be overridden.
    pub fn new(topo: Topology, config: StrategyConfig, seed: u64) -> Network {
        let mut sim = Sim::new(topo, config, seed);
        sim.set_scheme_binding("mcast-ip", StrategyKind::Rpf);
        sim.set_scheme_binding("sip", StrategyKind::Reflector);
        Network {
            sim,
            sockets: Vec::new(),
            verify_every_hop: false,
            first_hop_drops: 0,
            hop_verifications: 0,
        }
    }

    /// Overrides the strategy serving a scheme.
    pub fn bind_scheme(&mut self, scheme: &str, kind: StrategyKind) {
        self.sim.set_scheme_binding(scheme, kind);
    }

    /// Enables packet verification at every forwarding hop instead of only
    /// first hop and receivers.
    pub fn set_verify_every_hop(&mut self, on: bool) {
        self.verify_every_hop = on;
    }

    /// Opens a socket on a node. A fresh socket has no subscriptions and an
    /// empty receive queue.
    pub fn create_msocket(&mut self, node: NodeId) -> Result<MSocket, MiddlewareError> {
        if !self.sim.topology().contains(node) {
            return Err(MiddlewareError::UnknownNode(node));
        }
        self.sockets.push(SocketState {
            node,
            subscriptions: BTreeMap::new(),
            queue: VecDeque::new(),
            seqs: BTreeMap::new(),
            deliver_unverified: false,
            dropped_unverified: 0,
        });
        Ok(MSocket(self.sockets.len() - 1))
    }

    fn socket(&self, ms: MSocket) -> Result<&SocketState, MiddlewareError> {
        self.sockets.get(ms.0).ok_or(MiddlewareError::UnknownSocket)
    }

    fn socket_mut(&mut self, ms: MSocket) -> Result<&mut SocketState, MiddlewareError> {
        self.sockets.get_mut(ms.0).ok_or(MiddlewareError::UnknownSocket)
    }

    pub fn node_of(&self, ms: MSocket) -> Result<NodeId, MiddlewareError> {
        Ok(self.socket(ms)?.node)
    }

    /// Canonical names this socket is subscribed to.
    pub fn subscriptions(&self, ms: MSocket) -> Result<Vec<String>, MiddlewareError> {
        Ok(self.socket(ms)?.subscriptions.keys().cloned().collect())
    }

    /// Unverified packets this socket has dropped.
    pub fn dropped_unverified(&self, ms: MSocket) -> Result<u64, MiddlewareError> {
        Ok(self.socket(ms)?.dropped_unverified)
    }

    /// Packets dropped at the first hop before any forwarding.
    pub fn first_hop_drops(&self) -> u64 {
        self.first_hop_drops
    }

    pub fn hop_verifications(&self) -> u64 {
        self.hop_verifications
    }

    /// Queue unverified packets (marked with their verdict) instead of
    /// dropping them.
    pub fn set_deliver_unverified(&mut self, ms: MSocket, on: bool) -> Result<(), MiddlewareError> {
        self.socket_mut(ms)?.deliver_unverified = on;
        Ok(())
    }

    /// Subscribes the socket to a group. Idempotent per canonical name; a
    /// group with no active source joins silently.
    pub fn join(&mut self, ms: MSocket, uri_text: &str) -> Result<(), MiddlewareError> {
        let uri = naming::parse(uri_text)?;
        if uri.is_wildcard() {
            return Err(MiddlewareError::WildcardSubscription(uri.to_string()));
        }
        let key = uri.to_string();
        let node = self.socket(ms)?.node;
        if self.socket(ms)?.subscriptions.contains_key(&key) {
            return Ok(());
        }
        self.sim.join(node, &uri)?;
        self.socket_mut(ms)?.subscriptions.insert(key, uri);
        Ok(())
    }

    /// Drops a subscription; the last local subscriber prunes routing state.
    pub fn leave(&mut self, ms: MSocket, uri_text: &str) -> Result<(), MiddlewareError> {
        let uri = naming::parse(uri_text)?;
        let key = uri.to_string();
        if !self.socket(ms)?.subscriptions.contains_key(&key) {
            return Err(MiddlewareError::NotSubscribed(key));
        }
        let node = self.socket(ms)?.node;
        self.sim.leave(node, &uri)?;
        self.socket_mut(ms)?.subscriptions.remove(&key);
        Ok(())
    }

    /// Publishes a signed payload to a group name. Wildcard names expand
    /// over the active groups first. Returns the number of concrete
    /// publications dispatched.
    pub fn send(
        &mut self,
        ms: MSocket,
        uri_text: &str,
        payload: &[u8],
        signer: &PacketSigner<'_>,
    ) -> Result<usize, MiddlewareError> {
        let uri = naming::parse(uri_text)?;
        let targets = if uri.is_wildcard() {
            matching::expand_wildcard(&uri, &self.sim.active_groups())
                .map_err(SimError::from)?
        } else {
            vec![uri]
        };
        for target in &targets {
            self.send_concrete(ms, target, payload, signer)?;
        }
        Ok(targets.len())
    }

    fn send_concrete(
        &mut self,
        ms: MSocket,
        uri: &GroupUri,
        payload: &[u8],
        signer: &PacketSigner<'_>,
    ) -> Result<(), MiddlewareError> {
        let key = uri.to_string();
        let sock = self.socket_mut(ms)?;
        let seq = {
            let c = sock.seqs.entry(key.clone()).or_insert(0);
            let s = *c;
            *c += 1;
            s
        };
        let node = sock.node;
        let pkt = sign_packet(signer, &key, seq, payload)?;
        self.inject_signed(node, &pkt)?;
        Ok(())
    }

    /// Feeds an already-signed packet into the network at a node, as a
    /// border router would. The packet is verified before any forwarding;
    /// failures are dropped and counted, never delivered.
    pub fn inject_signed(
        &mut self,
        origin: NodeId,
        pkt: &SignedPacket,
    ) -> Result<Vec<Delivery>, MiddlewareError> {
        let now = self.sim.now() as u64;
        if !verify_packet(pkt, now).is_accepted() {
            self.first_hop_drops += 1;
            return Ok(Vec::new());
        }
        let pub_uri = naming::parse(&pkt.group_uri)?;
        let tx_before = self.sim.metrics().link_transmissions;
        let deliveries =
            self.sim
                .publish(origin, &pub_uri, &pkt.payload, Some(pkt), Some(pkt.seq))?;
        if self.verify_every_hop {
            let crossed = self.sim.metrics().link_transmissions - tx_before;
            for _ in 0..crossed {
                let _ = verify_packet(pkt, now);
                self.hop_verifications += 1;
            }
        }
        self.route_deliveries(&pub_uri, &deliveries);
        Ok(deliveries)
    }

    fn route_deliveries(&mut self, pub_uri: &GroupUri, deliveries: &[Delivery]) {
        for d in deliveries {
            for sock in self.sockets.iter_mut().filter(|s| s.node == d.node) {
                let covered = sock
                    .subscriptions
                    .values()
                    .any(|sub| matching::covers(sub, pub_uri));
                if !covered {
                    continue;
                }
                let verified = match &d.packet {
                    Some(pkt) => verify_packet(pkt, d.time as u64),
                    None => Verdict::Accepted,
                };
                if verified.is_accepted() || sock.deliver_unverified {
                    sock.queue.push_back(ReceivedMessage {
                        group_uri: d.uri.clone(),
                        payload: d.payload.clone(),
                        source_node: d.origin,
                        seq: d.seq,
                        verified,
                        time: d.time,
                    });
                } else {
                    sock.dropped_unverified += 1;
                }
            }
        }
    }

    /// Takes the next queued message, or `None` once the queue is drained —
    /// a normal outcome for a silent group, not an error. The timeout is the
    /// contractual wait bound; in simulation every pending delivery is
    /// already queued, so an empty queue means the timeout elapsed.
    pub fn receive(
        &mut self,
        ms: MSocket,
        _timeout_secs: f64,
    ) -> Result<Option<ReceivedMessage>, MiddlewareError> {
        Ok(self.socket_mut(ms)?.queue.pop_front())
    }

    pub fn metrics(&self) -> RunMetrics {
        self.sim.metrics()
    }

    pub fn sim(&self) -> &Sim {
        &self.sim
    }

    pub fn advance_to(&mut self, time: f64) {
        self.sim.advance_to(time);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::identity::{create_group_identity, issue_certificate, KeyPair, Lifetime};
    use crate::simnet::Link;

    const SEED: &[u8] = b"controller-seed-for-middleware-tests-0001";

    fn line4() -> Topology {
        let mut names = BTreeMap::new();
        names.insert("cnn.com".to_string(), 1);
        names.insert("1.2.3.4".to_string(), 1);
        Topology::with_names(
            [1, 2, 3, 4],
            (1..4)
                .map(|u| Link { u, v: u + 1, cost: 1.0, delay: 1.0 })
                .collect(),
            names,
        )
        .unwrap()
    }

    fn network() -> Network {
        Network::new(
            line4(),
            StrategyConfig::new(StrategyKind::Rpf).with_rp(2).with_reflector(2),
            0,
        )
    }

    #[test]
    fn fresh_socket_is_empty() {
        let mut net = network();
        let ms = net.create_msocket(1).unwrap();
        assert_eq!(net.subscriptions(ms).unwrap().len(), 0);
        assert_eq!(net.receive(ms, 1.0).unwrap(), None);
    }

    #[test]
    fn sockets_on_one_node_have_independent_queues() {
        let mut net = network();
        let a = net.create_msocket(3).unwrap();
        let b = net.create_msocket(3).unwrap();
        net.join(a, "opaque://news@cnn.com").unwrap();
        net.join(b, "opaque://news@cnn.com").unwrap();
        let pub_sock = net.create_msocket(1).unwrap();
        let ctrl = create_group_identity(SEED, 0).unwrap();
        net.send(pub_sock, "opaque://news@cnn.com", b"x", &PacketSigner::Controller(&ctrl))
            .unwrap();
        let ma = net.receive(a, 1.0).unwrap().unwrap();
        assert_eq!(ma.payload, b"x");
        assert!(net.receive(a, 1.0).unwrap().is_none());
        assert!(net.receive(b, 1.0).unwrap().is_some());
    }

    #[test]
    fn create_on_absent_node_fails() {
        let mut net = network();
        assert!(matches!(
            net.create_msocket(99),
            Err(MiddlewareError::UnknownNode(99))
        ));
    }

    #[test]
    fn join_is_idempotent_on_canonical_form() {
        let mut net = network();
        let ms = net.create_msocket(3).unwrap();
        net.join(ms, "mcast-ip://224.10.20.30@1.2.3.4/groupkey").unwrap();
        net.join(ms, "MCAST-IP://224.10.20.30@1.2.3.4/groupkey").unwrap();
        assert_eq!(net.subscriptions(ms).unwrap().len(), 1);
    }

    #[test]
    fn concurrent_subscriptions_across_schemes() {
        let mut net = network();
        let ms = net.create_msocket(3).unwrap();
        net.join(ms, "mcast-ip://224.10.20.30@1.2.3.4/groupkey").unwrap();
        net.join(ms, "sip://hypnotic-talks@2").unwrap();
        assert_eq!(net.subscriptions(ms).unwrap().len(), 2);
    }

    #[test]
    fn sourceless_group_receives_nothing_without_error() {
        let mut net = network();
        let ms = net.create_msocket(4).unwrap();
        net.join(ms, "mcast-ip://224.10.20.30@1.2.3.4/groupkey").unwrap();
        assert_eq!(net.receive(ms, 5.0).unwrap(), None);
    }

    #[test]
    fn malformed_uri_always_errors() {
        let mut net = network();
        let ms = net.create_msocket(1).unwrap();
        assert!(matches!(
            net.join(ms, "opaque://"),
            Err(MiddlewareError::MalformedUri(_))
        ));
        let ctrl = create_group_identity(SEED, 0).unwrap();
        assert!(matches!(
            net.send(ms, "not-a-uri", b"x", &PacketSigner::Controller(&ctrl)),
            Err(MiddlewareError::MalformedUri(_))
        ));
    }

    #[test]
    fn wildcard_subscription_rejected() {
        let mut net = network();
        let ms = net.create_msocket(1).unwrap();
        assert!(matches!(
            net.join(ms, "opaque://*@cnn.com"),
            Err(MiddlewareError::WildcardSubscription(_))
        ));
    }

    #[test]
    fn leave_inverts_join() {
        let mut net = network();
        let ms = net.create_msocket(3).unwrap();
        net.join(ms, "opaque://news@cnn.com").unwrap();
        net.leave(ms, "opaque://news@cnn.com").unwrap();
        assert_eq!(net.subscriptions(ms).unwrap().len(), 0);
        assert!(matches!(
            net.leave(ms, "opaque://news@cnn.com"),
            Err(MiddlewareError::NotSubscribed(_))
        ));
    }

    #[test]
    fn aggregate_subscription_receives_instance_publish() {
        let mut net = network();
        let ms = net.create_msocket(4).unwrap();
        net.join(ms, "opaque://news").unwrap();
        let pub_sock = net.create_msocket(1).unwrap();
        let ctrl = create_group_identity(SEED, 0).unwrap();
        net.send(pub_sock, "opaque://news@cnn.com", b"breaking", &PacketSigner::Controller(&ctrl))
            .unwrap();
        let msg = net.receive(ms, 1.0).unwrap().unwrap();
        assert_eq!(msg.payload, b"breaking");
        assert_eq!(msg.verified, Verdict::Accepted);
        assert_eq!(msg.source_node, 1);
    }

    #[test]
    fn wildcard_send_expands_over_active_groups() {
        let mut net = network();
        let s1 = net.create_msocket(3).unwrap();
        let s2 = net.create_msocket(4).unwrap();
        net.join(s1, "opaque://politics@cnn.com").unwrap();
        net.join(s2, "opaque://economics@cnn.com").unwrap();
        let pub_sock = net.create_msocket(1).unwrap();
        let ctrl = create_group_identity(SEED, 0).unwrap();
        let dispatched = net
            .send(pub_sock, "opaque://*@cnn.com", b"all", &PacketSigner::Controller(&ctrl))
            .unwrap();
        assert_eq!(dispatched, 2);
        assert!(net.receive(s1, 1.0).unwrap().is_some());
        assert!(net.receive(s2, 1.0).unwrap().is_some());
    }

    #[test]
    fn tampered_packet_dropped_at_first_hop() {
        let mut net = network();
        let ms = net.create_msocket(4).unwrap();
        net.join(ms, "opaque://news").unwrap();
        let ctrl = create_group_identity(SEED, 0).unwrap();
        let mut pkt = sign_packet(
            &PacketSigner::Controller(&ctrl),
            "opaque://news@cnn.com",
            0,
            b"evil",
        )
        .unwrap();
        pkt.payload[0] ^= 1;
        let delivered = net.inject_signed(1, &pkt).unwrap();
        assert!(delivered.is_empty());
        assert_eq!(net.first_hop_drops(), 1);
        assert_eq!(net.receive(ms, 1.0).unwrap(), None);
    }

    #[test]
    fn expired_certificate_dropped_and_counted() {
        let mut net = network();
        net.advance_to(100.0);
        let ms = net.create_msocket(4).unwrap();
        net.join(ms, "opaque://news").unwrap();
        let ctrl = create_group_identity(SEED, 0).unwrap();
        let src = KeyPair::from_seed(b"source-seed-abcdefghijklmnopqrstuvwxyz").unwrap();
        let cert = issue_certificate(
            &ctrl,
            &src.public_key(),
            Some(Lifetime { not_before: 0, not_after: 10 }),
        );
        let pub_sock = net.create_msocket(1).unwrap();
        net.send(
            pub_sock,
            "opaque://news@cnn.com",
            b"late",
            &PacketSigner::Source { keys: &src, certificate: &cert },
        )
        .unwrap();
        // Dropped at first hop: the certificate lifetime is over.
        assert_eq!(net.first_hop_drops(), 1);
        assert_eq!(net.receive(ms, 1.0).unwrap(), None);
    }

    #[test]
    fn no_cross_talk_between_groups() {
        let mut net = network();
        let ms = net.create_msocket(4).unwrap();
        net.join(ms, "opaque://politics").unwrap();
        let pub_sock = net.create_msocket(1).unwrap();
        let ctrl = create_group_identity(SEED, 0).unwrap();
        net.send(pub_sock, "opaque://news@cnn.com", b"x", &PacketSigner::Controller(&ctrl))
            .unwrap();
        assert_eq!(net.receive(ms, 1.0).unwrap(), None);
    }

    #[test]
    fn per_sender_fifo_by_sequence() {
        let mut net = network();
        let ms = net.create_msocket(4).unwrap();
        net.join(ms, "opaque://news").unwrap();
        let pub_sock = net.create_msocket(1).unwrap();
        let ctrl = create_group_identity(SEED, 0).unwrap();
        for i in 0..5u8 {
            net.send(
                pub_sock,
                "opaque://news@cnn.com",
                &[i],
                &PacketSigner::Controller(&ctrl),
            )
            .unwrap();
        }
        let seqs: Vec<u64> = std::iter::from_fn(|| net.receive(ms, 0.0).unwrap())
            .map(|m| m.seq)
            .collect();
        assert_eq!(seqs, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn reflector_scheme_binding_used_for_sip() {
        let mut net = network();
        let ms = net.create_msocket(4).unwrap();
        net.join(ms, "sip://talks@2").unwrap();
        let pub_sock = net.create_msocket(1).unwrap();
        let ctrl = create_group_identity(SEED, 0).unwrap();
        net.send(pub_sock, "sip://talks@2", b"x", &PacketSigner::Controller(&ctrl))
            .unwrap();
        let msg = net.receive(ms, 1.0).unwrap().unwrap();
        // Via reflector node 2: 1→2 then 2→3→4 gives three hops.
        assert_eq!(msg.time, 3.0);
    }
}
