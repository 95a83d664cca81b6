//! The shared broadcast bus between storage nodes.
//!
//! Every broadcast reaches all other participants unchanged and is metered by
//! payload length only. Two implementations share one contract: an in-memory
//! bus for deterministic simulation and a loopback TCP bus that pushes every
//! frame through real sockets.

mod frame;
mod memory;
mod socket;

use std::collections::BTreeSet;

use bytes::Bytes;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::index::NodeId;

pub use frame::{decode_frame, encode_frame, read_frame, FrameHeader, HEADER_LEN};
pub use memory::MemoryChannel;
pub use socket::SocketChannel;

/// Frame type byte on the wire.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageKind {
    Coded,
    Plain,
    Barrier,
}

impl MessageKind {
    pub fn wire(self) -> u8 {
        match self {
            MessageKind::Coded => 0x01,
            MessageKind::Plain => 0x02,
            MessageKind::Barrier => 0x03,
        }
    }

    pub fn from_wire(byte: u8) -> Option<Self> {
        match byte {
            0x01 => Some(MessageKind::Coded),
            0x02 => Some(MessageKind::Plain),
            0x03 => Some(MessageKind::Barrier),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Packet {
    pub kind: MessageKind,
    pub sender: NodeId,
    pub round: u64,
    pub payload: Bytes,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeliveryReceipt {
    pub recipients: Vec<NodeId>,
    pub payload_bytes: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogEntry {
    pub operation_id: u64,
    pub sender: NodeId,
    pub round: u64,
    pub kind: MessageKind,
    pub payload_bytes: u64,
}

/// Append-only record of every broadcast.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransmissionLog {
    entries: Vec<LogEntry>,
}

impl TransmissionLog {
    pub fn push(&mut self, entry: LogEntry) {
        self.entries.push(entry);
    }

    pub fn entries(&self) -> &[LogEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn total_bytes(&self) -> u64 {
        self.entries.iter().map(|e| e.payload_bytes).sum()
    }

    /// Entries belonging to one operation, as a log of their own.
    pub fn for_operation(&self, operation_id: u64) -> TransmissionLog {
        TransmissionLog { entries: self.entries.iter().filter(|e| e.operation_id == operation_id).copied().collect() }
    }

    /// Entries appended after the first `start`.
    pub fn since(&self, start: usize) -> TransmissionLog {
        TransmissionLog { entries: self.entries.get(start..).unwrap_or_default().to_vec() }
    }

    /// Payload bytes sent by one node.
    pub fn bytes_from(&self, sender: NodeId) -> u64 {
        self.entries.iter().filter(|e| e.sender == sender).map(|e| e.payload_bytes).sum()
    }
}

/// Broadcast bus contract.
///
/// An operation opens with [`begin_operation`](Self::begin_operation), which
/// fixes the participant set, and closes with
/// [`finish_operation`](Self::finish_operation), after which undelivered
/// packets are dropped. Within an operation, packets are grouped by a round
/// tag; [`receive`](Self::receive) returns the packets of one round that were
/// sent by nodes other than the receiver. Order is FIFO per sender only.
pub trait BroadcastChannel: Send + Sync {
    fn begin_operation(&mut self, operation_id: u64, participants: &BTreeSet<NodeId>) -> Result<()>;

    fn broadcast(&mut self, sender: NodeId, kind: MessageKind, round: u64, payload: Bytes) -> Result<DeliveryReceipt>;

    /// Blocks until `expected` packets of `round` from other senders are
    /// available at `receiver`, then hands them over.
    fn receive(&self, receiver: NodeId, round: u64, expected: usize) -> Result<Vec<Packet>>;

    fn finish_operation(&mut self) -> Result<()>;

    fn participants(&self) -> &BTreeSet<NodeId>;

    fn log(&self) -> &TransmissionLog;

    /// Cumulative payload bytes.
    fn meter(&self) -> u64 {
        self.log().total_bytes()
    }
}

/// Which bus implementation to build.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum TransportKind {
    #[default]
    Memory,
    Socket,
}

impl TransportKind {
    pub fn open(self) -> Box<dyn BroadcastChannel> {
        match self {
            TransportKind::Memory => Box::new(MemoryChannel::new()),
            TransportKind::Socket => Box::new(SocketChannel::new()),
        }
    }
}
