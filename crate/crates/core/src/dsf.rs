//! Distributed selective flooding (DSF): finite-time set-consensus as an
//! explicit synchronous round engine.
//!
//! Every node starts with its own tagged message and, each round, forwards at
//! most one message per outgoing link. On undirected trees a node never sends
//! a message back over a link it already crossed in either direction, and all
//! nodes hold every message after `n - 1` rounds. On directed graphs only the
//! "already sent" rule applies (plain flooding) and completion takes at most
//! `n + d_G - 1` rounds.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::graph::{Graph, GraphError, NodeId, SpanningTree};

#[derive(Debug, Error, PartialEq)]
pub enum DsfError {
    #[error("payload origins must be exactly 0..{n}; problem at position {position}")]
    PayloadMismatch { n: usize, position: usize },
    #[error(
        "undirected DSF requires a tree ({edges} edges on {n} nodes); extract a spanning tree first"
    )]
    NotATree { n: usize, edges: usize },
    #[error("directed DSF requires a strongly connected graph: {0}")]
    NotStronglyConnected(GraphError),
    #[error("set-consensus not reached after {rounds} rounds: node {node} holds {held} of {n} messages")]
    ProtocolViolation {
        rounds: usize,
        node: NodeId,
        held: usize,
        n: usize,
    },
}

/// A message stamped with the id of the node that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct TaggedMessage {
    pub origin: NodeId,
    pub payload: Arc<[f64]>,
}

impl TaggedMessage {
    pub fn new(origin: NodeId, payload: impl Into<Arc<[f64]>>) -> Self {
        Self {
            origin,
            payload: payload.into(),
        }
    }

    /// Number of 64-bit scalars on the wire.
    pub fn payload_scalars(&self) -> usize {
        self.payload.len()
    }
}

/// Per-node protocol state.
#[derive(Debug, Clone)]
pub struct DsfNodeState {
    id: NodeId,
    info_set: BTreeMap<NodeId, TaggedMessage>,
    sent_to: BTreeMap<NodeId, BTreeSet<NodeId>>,
    received_from: BTreeMap<NodeId, BTreeSet<NodeId>>,
}

impl DsfNodeState {
    pub fn new(own: TaggedMessage) -> Self {
        let id = own.origin;
        Self {
            id,
            info_set: BTreeMap::from([(id, own)]),
            sent_to: BTreeMap::new(),
            received_from: BTreeMap::new(),
        }
    }

    pub fn id(&self) -> NodeId {
        self.id
    }

    /// Messages held, keyed (and iterated) by ascending origin.
    pub fn info_set(&self) -> &BTreeMap<NodeId, TaggedMessage> {
        &self.info_set
    }

    pub fn holds(&self, origin: NodeId) -> bool {
        self.info_set.contains_key(&origin)
    }

    pub fn has_sent(&self, neighbor: NodeId, origin: NodeId) -> bool {
        self.sent_to
            .get(&neighbor)
            .is_some_and(|s| s.contains(&origin))
    }

    pub fn has_received(&self, neighbor: NodeId, origin: NodeId) -> bool {
        self.received_from
            .get(&neighbor)
            .is_some_and(|s| s.contains(&origin))
    }

    /// Inserts a message as if it had been received from `from`.
    pub fn receive(&mut self, from: NodeId, msg: TaggedMessage) {
        self.received_from
            .entry(from)
            .or_default()
            .insert(msg.origin);
        self.info_set.entry(msg.origin).or_insert(msg);
    }

    pub fn mark_sent(&mut self, to: NodeId, origin: NodeId) {
        self.sent_to.entry(to).or_default().insert(origin);
    }
}

/// Undirected selection rule: the smallest-origin held message that was
/// neither sent to nor received from `neighbor`.
pub fn dsf_select_undirected(state: &DsfNodeState, neighbor: NodeId) -> Option<&TaggedMessage> {
    state
        .info_set
        .values()
        .find(|m| !state.has_sent(neighbor, m.origin) && !state.has_received(neighbor, m.origin))
}

/// Directed selection rule: the smallest-origin held message not yet sent to
/// `out_neighbor`. Receipts are ignored, so duplicates may cross a link pair.
pub fn dsf_select_directed(state: &DsfNodeState, out_neighbor: NodeId) -> Option<&TaggedMessage> {
    state
        .info_set
        .values()
        .find(|m| !state.has_sent(out_neighbor, m.origin))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum DsfMode {
    Undirected,
    Directed,
}

/// One message crossing one link in one round.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Transmission {
    pub from: NodeId,
    pub to: NodeId,
    pub origin: NodeId,
    pub scalars: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundReport {
    pub round: usize,
    pub transmissions: Vec<Transmission>,
    /// Scalars sent by each node since the start of this DSF execution.
    pub cumulative_scalars: Vec<u64>,
}

#[derive(Serialize)]
struct TransmissionLine {
    round: usize,
    edge: [NodeId; 2],
    origin: NodeId,
    scalars: usize,
    bits: u64,
    id_bits: u32,
}

impl RoundReport {
    /// One JSON object per transmission: `{round, edge:[i,j], origin,
    /// scalars, bits, id_bits}` where `bits` is the 64-bit payload size.
    pub fn to_json_lines(&self, id_bits: u32) -> String {
        let mut out = String::new();
        for t in &self.transmissions {
            let line = TransmissionLine {
                round: self.round,
                edge: [t.from, t.to],
                origin: t.origin,
                scalars: t.scalars,
                bits: t.scalars as u64 * 64,
                id_bits,
            };
            out.push_str(&serde_json::to_string(&line).expect("plain struct"));
            out.push('\n');
        }
        out
    }
}

/// Round-by-round DSF executor over a fixed graph.
#[derive(Debug, Clone)]
pub struct DsfEngine<'g> {
    graph: &'g Graph,
    mode: DsfMode,
    states: Vec<DsfNodeState>,
    round: usize,
    cumulative: Vec<u64>,
}

impl<'g> DsfEngine<'g> {
    /// Validates the topology and initializes `I_i(0) = {S_i}`. Undirected
    /// graphs must be trees; directed graphs must be strongly connected.
    pub fn new(graph: &'g Graph, payloads: Vec<TaggedMessage>) -> Result<Self, DsfError> {
        let n = graph.node_count();
        if payloads.len() != n {
            return Err(DsfError::PayloadMismatch {
                n,
                position: payloads.len().min(n),
            });
        }
        if let Some(position) = payloads.iter().enumerate().position(|(i, m)| m.origin != i) {
            return Err(DsfError::PayloadMismatch { n, position });
        }
        let mode = if graph.is_directed() {
            if !graph.is_strongly_connected() {
                let err = graph.diameter().expect_err("not strongly connected");
                return Err(DsfError::NotStronglyConnected(err));
            }
            DsfMode::Directed
        } else {
            if !graph.is_tree() {
                return Err(DsfError::NotATree {
                    n,
                    edges: graph.edge_count(),
                });
            }
            DsfMode::Undirected
        };
        Ok(Self {
            graph,
            mode,
            states: payloads.into_iter().map(DsfNodeState::new).collect(),
            round: 0,
            cumulative: vec![0; n],
        })
    }

    /// Tree-checked constructor for the undirected protocol.
    pub fn on_tree(tree: &'g SpanningTree, payloads: Vec<TaggedMessage>) -> Result<Self, DsfError> {
        Self::new(tree.graph(), payloads)
    }

    pub fn mode(&self) -> DsfMode {
        self.mode
    }

    pub fn round(&self) -> usize {
        self.round
    }

    pub fn states(&self) -> &[DsfNodeState] {
        &self.states
    }

    pub fn into_states(self) -> Vec<DsfNodeState> {
        self.states
    }

    /// Round budget guaranteeing completion: `n - 1` on trees and
    /// `n + d_G - 1` on strongly connected digraphs.
    pub fn default_budget(&self) -> usize {
        default_round_budget(self.graph).expect("validated in constructor")
    }

    pub fn is_complete(&self) -> bool {
        let n = self.graph.node_count();
        self.states.iter().all(|s| s.info_set.len() == n)
    }

    /// Executes one synchronous round. Selections are computed from the
    /// previous round's states, then all deliveries are applied.
    pub fn step(&mut self) -> RoundReport {
        self.round += 1;
        let mut transmissions = Vec::new();
        for state in &self.states {
            for &j in self.graph.out_neighbors(state.id) {
                let pick = match self.mode {
                    DsfMode::Undirected => dsf_select_undirected(state, j),
                    DsfMode::Directed => dsf_select_directed(state, j),
                };
                if let Some(msg) = pick {
                    transmissions.push((
                        Transmission {
                            from: state.id,
                            to: j,
                            origin: msg.origin,
                            scalars: msg.payload_scalars(),
                        },
                        msg.clone(),
                    ));
                }
            }
        }
        for (t, msg) in &transmissions {
            self.states[t.from].mark_sent(t.to, t.origin);
            self.cumulative[t.from] += t.scalars as u64;
            self.states[t.to].receive(t.from, msg.clone());
        }
        RoundReport {
            round: self.round,
            transmissions: transmissions.into_iter().map(|(t, _)| t).collect(),
            cumulative_scalars: self.cumulative.clone(),
        }
    }

    fn first_incomplete(&self) -> Option<(NodeId, usize)> {
        let n = self.graph.node_count();
        self.states
            .iter()
            .find(|s| s.info_set.len() < n)
            .map(|s| (s.id, s.info_set.len()))
    }
}

/// `n - 1` for undirected trees, `n + d_G - 1` for directed graphs.
pub fn default_round_budget(g: &Graph) -> Result<usize, GraphError> {
    let n = g.node_count();
    if n <= 1 {
        return Ok(0);
    }
    if g.is_directed() {
        Ok(n + g.diameter()? - 1)
    } else {
        Ok(n - 1)
    }
}

#[derive(Debug, Clone)]
pub struct DsfOutcome {
    pub states: Vec<DsfNodeState>,
    pub reports: Vec<RoundReport>,
}

/// Runs DSF for `rounds` rounds (default budget when `None`). Reaching the
/// default budget without set-consensus is reported as a protocol violation;
/// shorter explicit budgets return whatever state was reached.
pub fn run_dsf(
    g: &Graph,
    payloads: Vec<TaggedMessage>,
    rounds: Option<usize>,
) -> Result<DsfOutcome, DsfError> {
    let mut engine = DsfEngine::new(g, payloads)?;
    let budget = engine.default_budget();
    let rounds = rounds.unwrap_or(budget);
    let reports: Vec<_> = (0..rounds).map(|_| engine.step()).collect();
    if rounds >= budget {
        if let Some((node, held)) = engine.first_incomplete() {
            return Err(DsfError::ProtocolViolation {
                rounds,
                node,
                held,
                n: g.node_count(),
            });
        }
    }
    Ok(DsfOutcome {
        states: engine.into_states(),
        reports,
    })
}

/// Any set-consensus protocol on a tree needs at least `n - 1` transmissions:
/// a leaf must receive every other node's message over its single link.
pub fn min_transmissions_lower_bound(tree: &SpanningTree) -> usize {
    tree.node_count().saturating_sub(1)
}
