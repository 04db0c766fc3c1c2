//! Block propagation between nodes and longest-valid-chain fork resolution.
//!
//! Transport is abstracted behind [`PeerClient`]: the node service plugs in
//! an HTTP client, the simulation harness an in-memory one.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::keys::KeyResolver;
use crate::ledger::{validate_chain, Block, Chain, Verdict, ViolationReason};

pub mod sim;

pub use sim::{simulate, NodeHead, ScriptError, SimEvent, Transcript, TranscriptStep};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SyncError {
    #[error("invalid peer address {0:?}")]
    InvalidPeerAddr(String),
    #[error("a node cannot register itself as a peer")]
    SelfPeer,
    #[error("announced block is not the local head")]
    NotHead,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TransportError {
    #[error("peer unreachable: {0}")]
    Unreachable(String),
    #[error("protocol error: {0}")]
    Protocol(String),
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PeerAddr {
    pub host: String,
    pub port: u16,
}

impl PeerAddr {
    pub fn new(host: impl Into<String>, port: u16) -> Result<Self, SyncError> {
        let host = host.into();
        let well_formed = !host.is_empty()
            && host.len() <= 253
            && host
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || matches!(c, '.' | '-' | '_'))
            && !host.starts_with(['-', '.']);
        if !well_formed || port == 0 {
            return Err(SyncError::InvalidPeerAddr(format!("{host}:{port}")));
        }
        Ok(PeerAddr { host, port })
    }

    pub fn base_url(&self) -> String {
        format!("http://{}:{}", self.host, self.port)
    }
}

impl FromStr for PeerAddr {
    type Err = SyncError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let bad = || SyncError::InvalidPeerAddr(s.to_string());
        let (host, port) = s.rsplit_once(':').ok_or_else(bad)?;
        let port: u16 = port.parse().map_err(|_| bad())?;
        PeerAddr::new(host, port).map_err(|_| bad())
    }
}

impl fmt::Display for PeerAddr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.host, self.port)
    }
}

#[derive(Debug, Clone)]
pub struct NodeState {
    pub chain: Chain,
    peers: BTreeSet<PeerAddr>,
    node_id: String,
    self_addr: Option<PeerAddr>,
}

impl NodeState {
    pub fn new(node_id: impl Into<String>, chain: Chain, self_addr: Option<PeerAddr>) -> Self {
        NodeState {
            chain,
            peers: BTreeSet::new(),
            node_id: node_id.into(),
            self_addr,
        }
    }

    pub fn node_id(&self) -> &str {
        &self.node_id
    }

    pub fn peers(&self) -> &BTreeSet<PeerAddr> {
        &self.peers
    }

    /// Returns whether the peer was newly added.
    pub fn add_peer(&mut self, peer: PeerAddr) -> Result<bool, SyncError> {
        if self.self_addr.as_ref() == Some(&peer) {
            return Err(SyncError::SelfPeer);
        }
        Ok(self.peers.insert(peer))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RejectReason {
    /// Already part of the local chain.
    Duplicate,
    /// At or below the local head but different from the local block there.
    Stale,
    /// Next index, but does not link to the local head.
    Link,
    Invalid(ViolationReason),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "outcome", content = "reason", rename_all = "snake_case")]
pub enum ReceiveOutcome {
    Accepted,
    Rejected(RejectReason),
    NeedSync,
}

pub trait PeerClient {
    fn deliver_block(&self, peer: &PeerAddr, block: &Block) -> Result<ReceiveOutcome, TransportError>;
    fn fetch_chain(&self, peer: &PeerAddr) -> Result<Vec<Block>, TransportError>;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Delivery {
    pub peer: PeerAddr,
    pub result: Result<ReceiveOutcome, TransportError>,
}

impl Serialize for TransportError {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for TransportError {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        Ok(TransportError::Unreachable(String::deserialize(d)?))
    }
}

/// Pushes the local head to every peer. Failures are recorded per peer.
pub fn announce_block(
    state: &NodeState,
    block: &Block,
    client: &dyn PeerClient,
) -> Result<Vec<Delivery>, SyncError> {
    if state.chain.head() != block {
        return Err(SyncError::NotHead);
    }
    Ok(state
        .peers
        .iter()
        .map(|peer| Delivery {
            peer: peer.clone(),
            result: client.deliver_block(peer, block),
        })
        .collect())
}

pub fn receive_block(state: &mut NodeState, block: Block, keys: &dyn KeyResolver) -> ReceiveOutcome {
    let head = state.chain.head();
    if block.index <= head.index {
        let local = &state.chain.blocks()[block.index as usize];
        return if *local == block {
            ReceiveOutcome::Rejected(RejectReason::Duplicate)
        } else {
            ReceiveOutcome::Rejected(RejectReason::Stale)
        };
    }
    if block.index > head.index + 1 {
        return ReceiveOutcome::NeedSync;
    }
    if block.prev_hash != head.hash {
        return ReceiveOutcome::Rejected(RejectReason::Link);
    }
    match state.chain.extend(block, keys) {
        Ok(chain) => {
            state.chain = chain;
            ReceiveOutcome::Accepted
        }
        Err(reason) => ReceiveOutcome::Rejected(RejectReason::Invalid(reason)),
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyncReport {
    pub adopted_from: Option<PeerAddr>,
    pub unreachable: Vec<PeerAddr>,
    /// Longer peer chains that failed validation.
    pub rejected: Vec<(PeerAddr, Verdict)>,
    pub length: usize,
    pub head: String,
}

pub type PeerChains = Vec<(PeerAddr, Result<Vec<Block>, TransportError>)>;

/// Network half of conflict resolution; needs no access to local state.
pub fn fetch_peer_chains<'a>(
    peers: impl IntoIterator<Item = &'a PeerAddr>,
    client: &dyn PeerClient,
) -> PeerChains {
    peers
        .into_iter()
        .map(|peer| (peer.clone(), client.fetch_chain(peer)))
        .collect()
}

/// Adopts the longest fully valid candidate strictly longer than the local
/// chain. Equal lengths keep the local chain; among equally long candidates
/// the first in peer order wins.
pub fn adopt_longest_valid(state: &mut NodeState, candidates: PeerChains, keys: &dyn KeyResolver) -> SyncReport {
    let mut report = SyncReport::default();
    let mut reachable = Vec::new();
    for (peer, fetched) in candidates {
        match fetched {
            Ok(blocks) => reachable.push((peer, blocks)),
            Err(_) => report.unreachable.push(peer),
        }
    }
    // Stable sort keeps peer order among equal lengths.
    reachable.sort_by_key(|(_, blocks)| std::cmp::Reverse(blocks.len()));
    for (peer, blocks) in reachable {
        if blocks.len() <= state.chain.len() {
            break;
        }
        match validate_chain(&blocks, keys) {
            Verdict::Valid => {
                state.chain = Chain::from_blocks(blocks, keys).expect("validated above");
                report.adopted_from = Some(peer);
                break;
            }
            violation => report.rejected.push((peer, violation)),
        }
    }
    report.length = state.chain.len();
    report.head = state.chain.head().hash.clone();
    report
}

pub fn resolve_conflicts(state: &mut NodeState, client: &dyn PeerClient, keys: &dyn KeyResolver) -> SyncReport {
    let candidates = fetch_peer_chains(state.peers.iter(), client);
    adopt_longest_valid(state, candidates, keys)
}
