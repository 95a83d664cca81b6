//! Rebalancing onto a newly arrived, empty node.
//!
//! Every subfile `W_i` is cut into `K+1` equal parts relabelled
//! `[j_1 i] .. [j_r i]` (prefixing each holder, ascending) followed by every
//! insertion of the new id into `i`. Holder `k` ships `[k i]` to the new node
//! and drops it once delivered. The result is the placement for `K+1` nodes.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::index::{NodeId, OrderedIndex};
use crate::model::{ClusterDatabase, NodeStore, Subfile};
use crate::par;
use crate::removal::check_alignment;
use crate::transport::{BroadcastChannel, MessageKind, TransmissionLog};
use crate::verify::{LoadReport, Operation, Rational};

/// The `K+1` labels a subfile is split into, in part order.
pub fn split_labels(original: &OrderedIndex, old_ids: &BTreeSet<NodeId>, new_id: NodeId) -> Vec<OrderedIndex> {
    original.absent_from(old_ids).map(|j| original.prefixed(j)).chain(original.insertions(new_id)).collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitRelabeling {
    pub original: OrderedIndex,
    /// `K+1` parts; the first `r` carry a holder's id in front.
    pub parts: Vec<Subfile>,
    replication: usize,
}

impl SplitRelabeling {
    /// Parts that holders ship to the new node.
    pub fn transfer_set(&self) -> &[Subfile] {
        &self.parts[..self.replication]
    }

    pub fn labels(&self) -> impl Iterator<Item = &OrderedIndex> {
        self.parts.iter().map(Subfile::index)
    }
}

pub fn split_and_relabel(subfile: &Subfile, db: &ClusterDatabase, new_id: NodeId) -> Result<SplitRelabeling> {
    if db.contains_node(new_id) {
        return Err(Error::Parameter(format!("node {new_id} already exists")));
    }
    if subfile.index().len() != db.index_len() {
        return Err(Error::Parameter(format!(
            "label {} has length {}, expected {}",
            subfile.index(),
            subfile.index().len(),
            db.index_len()
        )));
    }
    let old_ids = db.node_ids();
    let labels = split_labels(subfile.index(), &old_ids, new_id);
    let parts = subfile
        .split_equal(labels.len())?
        .into_iter()
        .zip(labels)
        .map(|((payload, provenance), label)| Subfile::from_parts_unchecked(label, payload, provenance))
        .collect();
    Ok(SplitRelabeling { original: subfile.index().clone(), parts, replication: db.replication() })
}

/// Points at which [`execute_addition_observed`] exposes the working state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdditionStage {
    /// Every old node has split and relabelled its subfiles.
    Split,
    /// The new node has stored everything `sender` shipped.
    Delivered { sender: NodeId },
    /// `sender` has dropped the parts it shipped.
    Deleted { sender: NodeId },
}

pub fn execute_addition(
    db: &ClusterDatabase,
    channel: &mut dyn BroadcastChannel,
) -> Result<(ClusterDatabase, LoadReport, TransmissionLog)> {
    execute_addition_observed(db, channel, &mut |_, _| {})
}

/// [`execute_addition`] with a hook called at every [`AdditionStage`]. Parts
/// are stored at the new node before the sender deletes them, so no byte ever
/// has fewer than `r` copies.
pub fn execute_addition_observed(
    db: &ClusterDatabase,
    channel: &mut dyn BroadcastChannel,
    observer: &mut dyn FnMut(AdditionStage, &ClusterDatabase),
) -> Result<(ClusterDatabase, LoadReport, TransmissionLog)> {
    let nodes = db.node_count();
    let r = db.replication();
    check_alignment(db, nodes as u64 + 1)?;

    let mut working = db.clone();
    let new_id = working.allocate_id();
    let old_ids: Vec<NodeId> = db.node_ids().into_iter().collect();

    let split_stores = par::try_map(&old_ids, |node| {
        let mut store = NodeStore::new();
        for subfile in db.nodes()[node].values() {
            for part in split_and_relabel(subfile, db, new_id)?.parts {
                store.insert(part.index().clone(), part);
            }
        }
        Ok::<_, Error>(store)
    })?;
    {
        let stores = working.nodes_mut();
        for (node, store) in old_ids.iter().zip(split_stores) {
            stores.insert(*node, store);
        }
        stores.insert(new_id, NodeStore::new());
    }
    observer(AdditionStage::Split, &working);

    let start = channel.log().len();
    channel.begin_operation(db.generation() + 1, &working.node_ids())?;
    for sender in &old_ids {
        let outgoing: Vec<Subfile> =
            working.nodes()[sender].values().filter(|s| s.index().first() == Some(*sender)).cloned().collect();
        for part in &outgoing {
            channel.broadcast(*sender, MessageKind::Plain, sender.0, part.payload().clone())?;
        }
        let received = channel.receive(new_id, sender.0, outgoing.len())?;
        if received.len() != outgoing.len() {
            return Err(Error::Protocol(format!(
                "new node got {} parts from {sender}, expected {}",
                received.len(),
                outgoing.len()
            )));
        }
        // FIFO per sender: the i-th packet is the i-th label in order.
        let delivered: Vec<Subfile> = received
            .into_iter()
            .zip(&outgoing)
            .map(|(packet, part)| {
                if packet.sender != *sender || packet.payload.len() as u64 != part.len() {
                    return Err(Error::Protocol(format!(
                        "unexpected packet for {} from {}",
                        part.index(),
                        packet.sender
                    )));
                }
                Ok(Subfile::from_parts_unchecked(part.index().clone(), packet.payload, part.provenance().to_vec()))
            })
            .collect::<Result<_>>()?;
        let stores = working.nodes_mut();
        let fresh = stores.get_mut(&new_id).expect("new node present");
        for part in delivered {
            fresh.insert(part.index().clone(), part);
        }
        observer(AdditionStage::Delivered { sender: *sender }, &working);

        let stores = working.nodes_mut();
        let own = stores.get_mut(sender).expect("sender present");
        for part in &outgoing {
            own.remove(part.index());
        }
        observer(AdditionStage::Deleted { sender: *sender }, &working);
    }
    channel.finish_operation()?;
    let log = channel.log().since(start);

    working.bump();
    let report = LoadReport::new(
        Operation::Addition { node: new_id },
        log.total_bytes(),
        working.node_bytes(new_id).unwrap_or(0),
        Rational::from_integer(1),
        nodes,
        nodes + 1,
        r,
    );
    Ok((working, report, log))
}
