//! Coded rebalancing after a node is lost.
//!
//! The lost node's subfiles `W_i` are grouped by their tail `[i_2 .. i_{K-r}]`.
//! Each group of `r` labels `[p_1 i'] .. [p_r i']` is missing exactly one
//! member at each `p_m`, so one XOR exchange round among `p_1 .. p_r` puts a
//! fresh copy of `W_[p_m i']` on `p_m`. Afterwards every survivor merges `K`
//! old subfiles into each new label of length `K-1-r`, giving the placement
//! for `K-1` nodes.

use std::collections::{BTreeMap, BTreeSet};

use bytes::Bytes;

use crate::error::{Error, Result};
use crate::exchange::{decode_from_holdings, encode_from_holdings, packets_by_position};
use crate::index::{enumerate_ordered_indices, NodeId, OrderedIndex};
use crate::model::{byte_coverage, ClusterDatabase, NodeStore, Subfile};
use crate::par;
use crate::transport::{BroadcastChannel, MessageKind, TransmissionLog};
use crate::verify::{removal_theory, LoadReport, Operation, Rational};

/// The `r` lost labels sharing one tail.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupPlan {
    /// The shared tail `i'`.
    pub key: OrderedIndex,
    /// `[p_1 i'] .. [p_r i']` with `p_1 < .. < p_r`.
    pub members: Vec<OrderedIndex>,
}

impl GroupPlan {
    /// `p_1 .. p_r`: member `m` is delivered to participant `m`.
    pub fn participants(&self) -> Vec<NodeId> {
        self.members.iter().map(|m| m.first().expect("member labels are non-empty")).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RemovalPlan {
    pub removed: NodeId,
    pub lost_indices: BTreeSet<OrderedIndex>,
    /// Lexicographic on the group key.
    pub groups: Vec<GroupPlan>,
    /// Lost label to the node receiving a new copy (its first component).
    pub targets: BTreeMap<OrderedIndex, NodeId>,
}

pub fn plan_removal(db: &ClusterDatabase, removed: NodeId) -> Result<RemovalPlan> {
    if !db.contains_node(removed) {
        return Err(Error::Parameter(format!("node {removed} is not in the database")));
    }
    let nodes = db.node_count();
    let r = db.replication();
    if nodes - 1 < r || r < 2 {
        return Err(Error::InfeasibleRemoval { nodes, replication: r });
    }
    let mut survivors = db.node_ids();
    survivors.remove(&removed);

    let keys = enumerate_ordered_indices(&survivors, nodes - 1 - r)?;
    let mut groups = Vec::with_capacity(keys.len());
    let mut lost_indices = BTreeSet::new();
    let mut targets = BTreeMap::new();
    for key in keys {
        let members: Vec<OrderedIndex> = key.absent_from(&survivors).map(|p| key.prefixed(p)).collect();
        for (member, p) in members.iter().zip(key.absent_from(&survivors)) {
            lost_indices.insert(member.clone());
            targets.insert(member.clone(), p);
        }
        groups.push(GroupPlan { key, members });
    }
    Ok(RemovalPlan { removed, lost_indices, groups, targets })
}

/// For each new label `i'` on the survivors, the `K` old labels concatenated
/// into it: `[j_1 i'] .. [j_r i']` for the survivors `j` absent from `i'`,
/// then every insertion of the removed id into `i'`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MergeMap {
    pub entries: BTreeMap<OrderedIndex, Vec<OrderedIndex>>,
}

pub fn merge_map(survivors: &BTreeSet<NodeId>, removed: NodeId, replication: usize) -> Result<MergeMap> {
    if replication > survivors.len() {
        return Err(Error::InfeasibleRemoval { nodes: survivors.len() + 1, replication });
    }
    let entries = enumerate_ordered_indices(survivors, survivors.len() - replication)?
        .into_iter()
        .map(|key| {
            let mut parts: Vec<OrderedIndex> = key.absent_from(survivors).map(|j| key.prefixed(j)).collect();
            parts.extend(key.insertions(removed));
            (key, parts)
        })
        .collect();
    Ok(MergeMap { entries })
}

pub(crate) fn check_alignment(db: &ClusterDatabase, parts: u64) -> Result<()> {
    for subfile in db.nodes().values().flat_map(|s| s.values()) {
        if subfile.len() % parts != 0 {
            return Err(Error::Alignment { len: subfile.len(), parts });
        }
    }
    Ok(())
}

fn held<'a>(db: &'a ClusterDatabase, node: NodeId, label: &OrderedIndex) -> Result<&'a Subfile> {
    db.store(node)
        .and_then(|s| s.get(label))
        .ok_or_else(|| Error::Protocol(format!("node {node} does not hold {label}")))
}

/// What participant `me` of a group holds, read from its own store.
fn group_holdings(
    db: &ClusterDatabase,
    group: &GroupPlan,
    participants: &[NodeId],
    me: usize,
) -> Result<Vec<Option<Bytes>>> {
    group
        .members
        .iter()
        .enumerate()
        .map(
            |(j, label)| {
                if j == me {
                    Ok(None)
                } else {
                    held(db, participants[me], label).map(|s| Some(s.payload().clone()))
                }
            },
        )
        .collect()
}

/// Runs one exchange round per group over `channel` and stores the decoded
/// copies on their targets. The removed node must already be gone from `db`
/// and an operation must be open on the channel for the survivors.
pub fn run_removal_exchange(
    db: &mut ClusterDatabase,
    plan: &RemovalPlan,
    channel: &mut dyn BroadcastChannel,
) -> Result<()> {
    let rounds: Vec<(u64, &GroupPlan)> = plan.groups.iter().enumerate().map(|(n, g)| (n as u64, g)).collect();
    let participants: Vec<Vec<NodeId>> = plan.groups.iter().map(GroupPlan::participants).collect();

    let snapshot: &ClusterDatabase = db;
    let packets = par::try_map(&rounds, |(round, group)| {
        let ps = &participants[*round as usize];
        (0..ps.len())
            .map(|pos| encode_from_holdings(&group_holdings(snapshot, group, ps, pos)?, pos))
            .collect::<Result<Vec<Bytes>>>()
    })?;

    // One broadcast per participant per round, ascending sender id.
    for ((round, _), coded) in rounds.iter().zip(packets) {
        for (sender, payload) in participants[*round as usize].iter().zip(coded) {
            channel.broadcast(*sender, MessageKind::Coded, *round, payload)?;
        }
    }

    let bus: &dyn BroadcastChannel = channel;
    let decoded = par::try_map(&rounds, |(round, group)| {
        let ps = &participants[*round as usize];
        let r = ps.len();
        (0..r)
            .map(|me| {
                let received = bus.receive(ps[me], *round, r - 1)?;
                let by_pos = packets_by_position(ps, received.into_iter().map(|p| (p.sender, p.payload)))?;
                let holdings = group_holdings(snapshot, group, ps, me)?;
                let payload = decode_from_holdings(&holdings, me, &by_pos)?;
                let label = &group.members[me];
                let reference = held(snapshot, ps[(me + 1) % r], label)?;
                if payload != reference.payload() {
                    return Err(Error::Protocol(format!("node {} decoded a corrupted copy of {label}", ps[me])));
                }
                Ok((ps[me], Subfile::from_parts_unchecked(label.clone(), payload, reference.provenance().to_vec())))
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let stores = db.nodes_mut();
    for (node, subfile) in decoded.into_iter().flatten() {
        let store = stores.get_mut(&node).ok_or_else(|| Error::Protocol(format!("target node {node} vanished")))?;
        store.insert(subfile.index().clone(), subfile);
    }
    Ok(())
}

/// Merges and relabels a post-exchange database onto labels over the
/// survivors. Every survivor must hold all constituents of each new label it
/// is entitled to, and nothing else.
pub fn merge_reindex(post_exchange: &ClusterDatabase, removed: NodeId) -> Result<ClusterDatabase> {
    let survivors = post_exchange.node_ids();
    if survivors.contains(&removed) {
        return Err(Error::Parameter(format!("node {removed} is still present")));
    }
    let map = merge_map(&survivors, removed, post_exchange.replication())?;
    let ids: Vec<NodeId> = survivors.iter().copied().collect();
    let stores = par::try_map(&ids, |node| {
        let old = &post_exchange.nodes()[node];
        let mut store = NodeStore::new();
        let mut consumed = 0usize;
        for (label, parts) in map.entries.iter().filter(|(label, _)| !label.contains(*node)) {
            let pieces = parts
                .iter()
                .map(|p| {
                    old.get(p).ok_or_else(|| Error::Protocol(format!("node {node} lacks {p}, needed for {label}")))
                })
                .collect::<Result<Vec<_>>>()?;
            consumed += pieces.len();
            store.insert(label.clone(), Subfile::concat(label.clone(), pieces));
        }
        if consumed != old.len() {
            return Err(Error::Protocol(format!(
                "node {node} holds {} subfiles but only {consumed} fit the merge",
                old.len()
            )));
        }
        Ok(store)
    })?;
    Ok(ClusterDatabase::from_parts(
        post_exchange.replication(),
        *post_exchange.file(),
        post_exchange.generation(),
        post_exchange.next_id().0,
        ids.into_iter().zip(stores).collect(),
    ))
}

/// The removed node is excised first and transmits nothing.
pub(crate) fn excise(db: &ClusterDatabase, removed: NodeId) -> ClusterDatabase {
    let mut working = db.clone();
    working.nodes_mut().remove(&removed);
    working
}

/// Coded removal: plan, exchange, merge. Returns the rebalanced database, its
/// load report and the broadcasts it made. `db` is left untouched, so a
/// transport failure leaves the caller with the last good state.
pub fn execute_removal(
    db: &ClusterDatabase,
    removed: NodeId,
    channel: &mut dyn BroadcastChannel,
) -> Result<(ClusterDatabase, LoadReport, TransmissionLog)> {
    let plan = plan_removal(db, removed)?;
    let r = db.replication();
    check_alignment(db, r as u64 - 1)?;

    let mut working = excise(db, removed);
    let start = channel.log().len();
    channel.begin_operation(db.generation() + 1, &working.node_ids())?;
    run_removal_exchange(&mut working, &plan, channel)?;
    channel.finish_operation()?;
    let log = channel.log().since(start);

    let mut merged = merge_reindex(&working, removed)?;
    merged.bump();
    let report = LoadReport::new(
        Operation::Removal { node: removed, coded: true },
        log.total_bytes(),
        db.node_bytes(removed).unwrap_or(0),
        removal_theory(r),
        db.node_count(),
        merged.node_count(),
        r,
    );
    Ok((merged, report, log))
}

/// Counting identities for the removed node's bytes and the matching lower
/// bound on removal traffic.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConverseReport {
    /// `counts[j]`: bytes of the removed node held by exactly `j` survivors.
    pub counts: Vec<u64>,
    /// Bytes stored on the removed node.
    pub lost_bytes: u64,
    pub count_sum: u64,
    pub weighted_sum: u64,
    /// `lost_bytes / (r - 1)`.
    pub bound: Rational,
    pub measured_bytes: u64,
    /// `measured - bound`; `None` when the bound is violated.
    pub slack: Option<Rational>,
}

impl ConverseReport {
    /// Sum over `j >= 1` of `counts[j]` equals the lost bytes.
    pub fn count_identity_holds(&self) -> bool {
        self.count_sum == self.lost_bytes && self.counts.first().copied().unwrap_or(0) == 0
    }

    pub fn weighted_identity_holds(&self, replication: usize) -> bool {
        self.weighted_sum == (replication as u64 - 1) * self.lost_bytes
    }

    pub fn bound_met(&self) -> bool {
        self.slack.is_some()
    }

    pub fn passed(&self, replication: usize) -> bool {
        self.count_identity_holds() && self.weighted_identity_holds(replication) && self.bound_met()
    }
}

/// Scans the pre-removal database byte by byte: for every byte of node
/// `removed`, how many survivors hold it. Then compares `measured_bytes` with
/// the lower bound.
pub fn converse_check(db: &ClusterDatabase, removed: NodeId, measured_bytes: u64) -> Result<ConverseReport> {
    let r = db.replication();
    if r < 2 {
        return Err(Error::InfeasibleRemoval { nodes: db.node_count(), replication: r });
    }
    let lost = byte_coverage(db, &[removed].into())?;
    let mut survivors = db.node_ids();
    survivors.remove(&removed);
    let coverage = byte_coverage(db, &survivors)?;

    let mut counts = vec![0u64; survivors.len() + 1];
    for (held, count) in lost.iter().zip(&coverage) {
        if *held > 0 {
            counts[*count as usize] += 1;
        }
    }
    let lost_bytes = lost.iter().filter(|h| **h > 0).count() as u64;
    let count_sum = counts.iter().skip(1).sum();
    let weighted_sum = counts.iter().enumerate().map(|(j, a)| j as u64 * a).sum();
    let bound = Rational::new(lost_bytes, r as u64 - 1);
    let measured = Rational::from_integer(measured_bytes);
    let slack = (measured >= bound).then(|| measured - bound);
    Ok(ConverseReport { counts, lost_bytes, count_sum, weighted_sum, bound, measured_bytes, slack })
}
