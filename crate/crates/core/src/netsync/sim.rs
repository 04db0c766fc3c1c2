//! Deterministic multi-node simulation over an in-memory transport.
//!
//! Nodes run the same `receive_block` / `resolve_conflicts` code as the
//! service; only the [`PeerClient`] differs. Every event is followed by a
//! snapshot of all heads and a validity check of every honest node's chain.

use std::cell::RefCell;
use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{
    adopt_longest_valid, announce_block, fetch_peer_chains, receive_block, NodeState, PeerAddr, PeerClient,
    ReceiveOutcome, TransportError,
};
use crate::clock::{Clock, SteppingClock};
use crate::keys::KeyResolver;
use crate::ledger::{append_block, validate_chain, Block, Chain, GENESIS_TIMESTAMP};
use crate::por::BlockPayload;

const SIM_PORT: u16 = 8080;

#[derive(Debug, Error, PartialEq, Eq)]
#[error("malformed script: {0}")]
pub struct ScriptError(pub String);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum SimEvent {
    /// Append a consented payload on `node` and push it to its peers.
    Publish {
        node: usize,
        author_ref: String,
        payload: BlockPayload,
    },
    /// Dishonest append that skips attestation checks. The node is excluded
    /// from the safety check from then on.
    Forge {
        node: usize,
        author_ref: String,
        payload: BlockPayload,
    },
    /// Push the current head of `node` again.
    Reannounce { node: usize },
    /// Split `group` from the remaining nodes.
    Partition { group: BTreeSet<usize> },
    Heal,
    /// Run conflict resolution on `node`.
    Sync { node: usize },
}

impl SimEvent {
    fn summary(&self) -> String {
        match self {
            SimEvent::Publish { node, author_ref, .. } => format!("publish(node={node}, author={author_ref})"),
            SimEvent::Forge { node, author_ref, .. } => format!("forge(node={node}, author={author_ref})"),
            SimEvent::Reannounce { node } => format!("reannounce(node={node})"),
            SimEvent::Partition { group } => format!("partition({group:?})"),
            SimEvent::Heal => "heal".to_string(),
            SimEvent::Sync { node } => format!("sync(node={node})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeHead {
    pub node: usize,
    pub length: usize,
    pub head: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptStep {
    pub step: usize,
    pub event: String,
    pub notes: Vec<String>,
    pub heads: Vec<NodeHead>,
    pub honest_chains_valid: bool,
}

impl TranscriptStep {
    pub fn converged(&self) -> bool {
        self.heads.windows(2).all(|w| w[0].head == w[1].head)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transcript {
    pub seed: u64,
    pub node_ids: Vec<String>,
    pub steps: Vec<TranscriptStep>,
}

impl Transcript {
    pub fn last(&self) -> &TranscriptStep {
        self.steps.last().expect("initial snapshot is always recorded")
    }

    pub fn always_safe(&self) -> bool {
        self.steps.iter().all(|s| s.honest_chains_valid)
    }
}

struct Harness<'k> {
    nodes: Vec<RefCell<NodeState>>,
    addrs: Vec<PeerAddr>,
    side: Vec<bool>,
    honest: Vec<bool>,
    keys: &'k dyn KeyResolver,
    clock: SteppingClock,
    rng: ChaCha8Rng,
}

struct SimTransport<'a, 'k> {
    harness: &'a Harness<'k>,
    from: usize,
}

impl SimTransport<'_, '_> {
    fn target(&self, peer: &PeerAddr) -> Result<usize, TransportError> {
        let to = self
            .harness
            .addrs
            .iter()
            .position(|a| a == peer)
            .ok_or_else(|| TransportError::Unreachable(format!("unknown peer {peer}")))?;
        if self.harness.side[to] != self.harness.side[self.from] {
            return Err(TransportError::Unreachable(format!("{peer} is partitioned away")));
        }
        Ok(to)
    }
}

impl PeerClient for SimTransport<'_, '_> {
    fn deliver_block(&self, peer: &PeerAddr, block: &Block) -> Result<ReceiveOutcome, TransportError> {
        let to = self.target(peer)?;
        let mut state = self.harness.nodes[to].borrow_mut();
        Ok(receive_block(&mut state, block.clone(), self.harness.keys))
    }

    fn fetch_chain(&self, peer: &PeerAddr) -> Result<Vec<Block>, TransportError> {
        let to = self.target(peer)?;
        Ok(self.harness.nodes[to].borrow().chain.blocks().to_vec())
    }
}

impl<'k> Harness<'k> {
    fn new(count: usize, seed: u64, keys: &'k dyn KeyResolver) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let addrs: Vec<PeerAddr> = (0..count)
            .map(|i| PeerAddr::new(format!("node{i}"), SIM_PORT).expect("static address"))
            .collect();
        let nodes = (0..count)
            .map(|i| {
                let id = format!("{:016x}", rng.gen::<u64>());
                let mut state = NodeState::new(id, Chain::genesis(), Some(addrs[i].clone()));
                for (j, addr) in addrs.iter().enumerate() {
                    if i != j {
                        state.add_peer(addr.clone()).expect("distinct address");
                    }
                }
                RefCell::new(state)
            })
            .collect();
        Harness {
            nodes,
            addrs,
            side: vec![false; count],
            honest: vec![true; count],
            keys,
            clock: SteppingClock::new(GENESIS_TIMESTAMP + 1_000, 1_000),
            rng,
        }
    }

    fn announce(&mut self, from: usize, notes: &mut Vec<String>) {
        let mut need_sync = Vec::new();
        {
            let state = self.nodes[from].borrow();
            let head = state.chain.head().clone();
            let client = SimTransport { harness: self, from };
            let deliveries = announce_block(&state, &head, &client).expect("announcing own head");
            for d in deliveries {
                let to = self.addrs.iter().position(|a| *a == d.peer).expect("known peer");
                match &d.result {
                    Ok(outcome) => {
                        notes.push(format!("deliver {from}->{to}: {outcome:?}"));
                        if *outcome == ReceiveOutcome::NeedSync {
                            need_sync.push(to);
                        }
                    }
                    Err(e) => notes.push(format!("deliver {from}->{to} failed: {e}")),
                }
            }
        }
        need_sync.shuffle(&mut self.rng);
        for node in need_sync {
            self.sync(node, notes);
        }
    }

    fn sync(&self, node: usize, notes: &mut Vec<String>) {
        let peers: Vec<PeerAddr> = self.nodes[node].borrow().peers().iter().cloned().collect();
        let client = SimTransport { harness: self, from: node };
        let candidates = fetch_peer_chains(peers.iter(), &client);
        let report = adopt_longest_valid(&mut self.nodes[node].borrow_mut(), candidates, self.keys);
        notes.push(format!(
            "sync {node}: adopted={:?} unreachable={} rejected={} length={}",
            report.adopted_from.map(|p| p.to_string()),
            report.unreachable.len(),
            report.rejected.len(),
            report.length
        ));
    }

    fn apply(&mut self, event: &SimEvent, notes: &mut Vec<String>) {
        match event {
            SimEvent::Publish { node, author_ref, payload } => {
                let appended = {
                    let state = self.nodes[*node].borrow();
                    append_block(&state.chain, payload.clone(), author_ref, &self.clock, self.keys)
                };
                match appended {
                    Ok(chain) => {
                        self.nodes[*node].borrow_mut().chain = chain;
                        self.announce(*node, notes);
                    }
                    Err(e) => notes.push(format!("publish on {node} refused: {e}")),
                }
            }
            SimEvent::Forge { node, author_ref, payload } => {
                {
                    let mut state = self.nodes[*node].borrow_mut();
                    let parent = state.chain.head().clone();
                    let mut block = Block {
                        index: parent.index + 1,
                        timestamp: self.clock.now_ms(),
                        author_ref: author_ref.clone(),
                        payload: Some(payload.clone()),
                        prev_hash: parent.hash.clone(),
                        hash: String::new(),
                    };
                    block.hash = block.compute_hash();
                    let mut blocks = state.chain.blocks().to_vec();
                    blocks.push(block);
                    state.chain = Chain::from_blocks_unchecked(blocks);
                }
                self.honest[*node] = false;
                notes.push(format!("node {node} is now dishonest"));
                self.announce(*node, notes);
            }
            SimEvent::Reannounce { node } => self.announce(*node, notes),
            SimEvent::Partition { group } => {
                for (i, side) in self.side.iter_mut().enumerate() {
                    *side = group.contains(&i);
                }
            }
            SimEvent::Heal => self.side.iter_mut().for_each(|s| *s = false),
            SimEvent::Sync { node } => self.sync(*node, notes),
        }
    }

    fn snapshot(&self, step: usize, event: String, notes: Vec<String>) -> TranscriptStep {
        let heads = self
            .nodes
            .iter()
            .enumerate()
            .map(|(node, s)| {
                let s = s.borrow();
                NodeHead {
                    node,
                    length: s.chain.len(),
                    head: s.chain.head().hash.clone(),
                }
            })
            .collect();
        let honest_chains_valid = self
            .nodes
            .iter()
            .zip(&self.honest)
            .filter(|(_, honest)| **honest)
            .all(|(s, _)| validate_chain(s.borrow().chain.blocks(), self.keys).is_valid());
        TranscriptStep {
            step,
            event,
            notes,
            heads,
            honest_chains_valid,
        }
    }
}

fn check_script(nodes: usize, script: &[SimEvent]) -> Result<(), ScriptError> {
    if nodes == 0 {
        return Err(ScriptError("at least one node is required".into()));
    }
    for (i, event) in script.iter().enumerate() {
        let bad = |m: String| Err(ScriptError(format!("event {i}: {m}")));
        match event {
            SimEvent::Publish { node, .. }
            | SimEvent::Forge { node, .. }
            | SimEvent::Reannounce { node }
            | SimEvent::Sync { node } => {
                if *node >= nodes {
                    return bad(format!("node {node} out of range 0..{nodes}"));
                }
            }
            SimEvent::Partition { group } => {
                if group.is_empty() || group.len() >= nodes {
                    return bad("partition group must be a non-empty proper subset".into());
                }
                if let Some(n) = group.iter().find(|&&n| n >= nodes) {
                    return bad(format!("node {n} out of range 0..{nodes}"));
                }
            }
            SimEvent::Heal => {}
        }
    }
    Ok(())
}

/// Parses a JSON array of events.
pub fn parse_script(text: &str) -> Result<Vec<SimEvent>, ScriptError> {
    serde_json::from_str(text).map_err(|e| ScriptError(e.to_string()))
}

pub fn simulate(
    nodes: usize,
    script: &[SimEvent],
    seed: u64,
    keys: &dyn KeyResolver,
) -> Result<Transcript, ScriptError> {
    check_script(nodes, script)?;
    let mut harness = Harness::new(nodes, seed, keys);
    let node_ids = harness
        .nodes
        .iter()
        .map(|n| n.borrow().node_id().to_string())
        .collect();
    let mut steps = vec![harness.snapshot(0, "init".into(), Vec::new())];
    for (i, event) in script.iter().enumerate() {
        let mut notes = Vec::new();
        harness.apply(event, &mut notes);
        steps.push(harness.snapshot(i + 1, event.summary(), notes));
    }
    Ok(Transcript { seed, node_ids, steps })
}
