use std::collections::{BTreeSet, HashMap};

use bytes::Bytes;

use super::{BroadcastChannel, DeliveryReceipt, LogEntry, MessageKind, Packet, TransmissionLog};
use crate::error::{Error, Result};
use crate::index::NodeId;

/// Single shared medium: a broadcast is written once per round and every
/// other participant reads it from there.
#[derive(Debug, Default)]
pub struct MemoryChannel {
    participants: BTreeSet<NodeId>,
    operation_id: u64,
    rounds: HashMap<u64, Vec<Packet>>,
    log: TransmissionLog,
}

impl MemoryChannel {
    pub fn new() -> Self {
        Self::default()
    }
}

impl BroadcastChannel for MemoryChannel {
    fn begin_operation(&mut self, operation_id: u64, participants: &BTreeSet<NodeId>) -> Result<()> {
        self.operation_id = operation_id;
        self.participants = participants.clone();
        self.rounds.clear();
        Ok(())
    }

    fn broadcast(&mut self, sender: NodeId, kind: MessageKind, round: u64, payload: Bytes) -> Result<DeliveryReceipt> {
        if !self.participants.contains(&sender) {
            return Err(Error::Parameter(format!("node {sender} is not on the bus")));
        }
        let payload_bytes = payload.len() as u64;
        self.log.push(LogEntry { operation_id: self.operation_id, sender, round, kind, payload_bytes });
        self.rounds.entry(round).or_default().push(Packet { kind, sender, round, payload });
        Ok(DeliveryReceipt {
            recipients: self.participants.iter().copied().filter(|p| *p != sender).collect(),
            payload_bytes,
        })
    }

    fn receive(&self, receiver: NodeId, round: u64, expected: usize) -> Result<Vec<Packet>> {
        if !self.participants.contains(&receiver) {
            return Err(Error::Parameter(format!("node {receiver} is not on the bus")));
        }
        let packets: Vec<Packet> =
            self.rounds.get(&round).into_iter().flatten().filter(|p| p.sender != receiver).cloned().collect();
        if packets.len() < expected {
            return Err(Error::Transport(format!(
                "round {round} has {} packets for node {receiver}, expected {expected}",
                packets.len()
            )));
        }
        Ok(packets)
    }

    fn finish_operation(&mut self) -> Result<()> {
        self.rounds.clear();
        Ok(())
    }

    fn participants(&self) -> &BTreeSet<NodeId> {
        &self.participants
    }

    fn log(&self) -> &TransmissionLog {
        &self.log
    }
}
