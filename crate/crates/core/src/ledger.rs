//! Per-node communication accounting.
//!
//! Payload scalars are 64-bit floats. Each message additionally carries a
//! `⌈log2 n⌉`-bit origin identifier; both "payload only" and "payload +
//! identifier" bit counts are kept.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsf::RoundReport;
use crate::graph::NodeId;

pub const BITS_PER_SCALAR: u64 = 64;

#[derive(Debug, Error, PartialEq)]
pub enum LedgerError {
    #[error("round {round}: link {from}->{to} carried more than one message")]
    DuplicateLinkUse { round: usize, from: NodeId, to: NodeId },
    #[error("node {0} outside ledger of {1} nodes")]
    UnknownNode(NodeId, usize),
}

/// `⌈log2 n⌉`, zero for `n <= 1`.
pub fn identifier_bits(n: usize) -> u32 {
    if n <= 1 {
        0
    } else {
        usize::BITS - (n - 1).leading_zeros()
    }
}

/// Communication spent in one optimizer iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationComm {
    pub iteration: usize,
    pub rounds: usize,
    pub scalars: Vec<u64>,
    pub messages: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeTotals {
    pub node: NodeId,
    pub sent_scalars: u64,
    pub sent_messages: u64,
    pub received_scalars: u64,
    pub received_messages: u64,
    pub payload_bits: u64,
    pub total_bits: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerSummary {
    pub nodes: usize,
    pub id_bits: u32,
    pub rounds: u64,
    pub per_node: Vec<NodeTotals>,
    pub iterations: Vec<IterationComm>,
}

#[derive(Debug, Clone)]
pub struct CommLedger {
    n: usize,
    id_bits: u32,
    sent_scalars: Vec<u64>,
    sent_messages: Vec<u64>,
    received_scalars: Vec<u64>,
    received_messages: Vec<u64>,
    link_sent: BTreeMap<(NodeId, NodeId), u64>,
    link_received: BTreeMap<(NodeId, NodeId), u64>,
    rounds: u64,
    iterations: Vec<IterationComm>,
    open: Option<IterationComm>,
}

impl CommLedger {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            id_bits: identifier_bits(n),
            sent_scalars: vec![0; n],
            sent_messages: vec![0; n],
            received_scalars: vec![0; n],
            received_messages: vec![0; n],
            link_sent: BTreeMap::new(),
            link_received: BTreeMap::new(),
            rounds: 0,
            iterations: Vec::new(),
            open: None,
        }
    }

    pub fn nodes(&self) -> usize {
        self.n
    }

    pub fn id_bits(&self) -> u32 {
        self.id_bits
    }

    pub fn rounds(&self) -> u64 {
        self.rounds
    }

    /// Starts attributing subsequent rounds to `iteration`.
    pub fn begin_iteration(&mut self, iteration: usize) {
        self.end_iteration();
        self.open = Some(IterationComm {
            iteration,
            rounds: 0,
            scalars: vec![0; self.n],
            messages: vec![0; self.n],
        });
    }

    pub fn end_iteration(&mut self) -> Option<&IterationComm> {
        if let Some(it) = self.open.take() {
            self.iterations.push(it);
            self.iterations.last()
        } else {
            None
        }
    }

    pub fn record_round(&mut self, report: &RoundReport) -> Result<(), LedgerError> {
        let mut used = BTreeMap::new();
        for t in &report.transmissions {
            if t.from >= self.n || t.to >= self.n {
                return Err(LedgerError::UnknownNode(t.from.max(t.to), self.n));
            }
            if used.insert((t.from, t.to), ()).is_some() {
                return Err(LedgerError::DuplicateLinkUse {
                    round: report.round,
                    from: t.from,
                    to: t.to,
                });
            }
        }
        self.rounds += 1;
        if let Some(it) = self.open.as_mut() {
            it.rounds += 1;
        }
        for t in &report.transmissions {
            let s = t.scalars as u64;
            self.sent_scalars[t.from] += s;
            self.sent_messages[t.from] += 1;
            *self.link_sent.entry((t.from, t.to)).or_default() += s;
            // delivery side, booked separately so conservation is checkable
            self.received_scalars[t.to] += s;
            self.received_messages[t.to] += 1;
            *self.link_received.entry((t.from, t.to)).or_default() += s;
            if let Some(it) = self.open.as_mut() {
                it.scalars[t.from] += s;
                it.messages[t.from] += 1;
            }
        }
        Ok(())
    }

    pub fn sent_scalars(&self, node: NodeId) -> u64 {
        self.sent_scalars[node]
    }

    pub fn sent_messages(&self, node: NodeId) -> u64 {
        self.sent_messages[node]
    }

    pub fn payload_bits(&self, node: NodeId) -> u64 {
        self.sent_scalars[node] * BITS_PER_SCALAR
    }

    pub fn total_bits(&self, node: NodeId) -> u64 {
        self.payload_bits(node) + self.sent_messages[node] * u64::from(self.id_bits)
    }

    pub fn mean_sent_scalars(&self) -> f64 {
        if self.n == 0 {
            return 0.0;
        }
        self.sent_scalars.iter().sum::<u64>() as f64 / self.n as f64
    }

    pub fn mean_payload_bits(&self) -> f64 {
        self.mean_sent_scalars() * BITS_PER_SCALAR as f64
    }

    /// Scalars sent over each directed link equal scalars delivered on it,
    /// and node totals agree.
    pub fn is_conserved(&self) -> bool {
        self.link_sent == self.link_received
            && self.sent_scalars.iter().sum::<u64>() == self.received_scalars.iter().sum::<u64>()
            && self.sent_messages.iter().sum::<u64>() == self.received_messages.iter().sum::<u64>()
    }

    pub fn iterations(&self) -> &[IterationComm] {
        &self.iterations
    }

    pub fn summary(&self) -> LedgerSummary {
        LedgerSummary {
            nodes: self.n,
            id_bits: self.id_bits,
            rounds: self.rounds,
            per_node: (0..self.n)
                .map(|i| NodeTotals {
                    node: i,
                    sent_scalars: self.sent_scalars[i],
                    sent_messages: self.sent_messages[i],
                    received_scalars: self.received_scalars[i],
                    received_messages: self.received_messages[i],
                    payload_bits: self.payload_bits(i),
                    total_bits: self.total_bits(i),
                })
                .collect(),
            iterations: self.iterations.clone(),
        }
    }
}
