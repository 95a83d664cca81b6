//! Uncoded removal: every lost subfile is sent whole by its lowest-id
//! surviving holder. Same end state as the coded path at `r-1` times the
//! traffic.

use crate::error::{Error, Result};
use crate::model::{ClusterDatabase, Subfile};
use crate::removal::{excise, merge_reindex, plan_removal};
use crate::transport::{BroadcastChannel, MessageKind, TransmissionLog};
use crate::verify::{LoadReport, Operation, Rational};

pub fn execute_removal_uncoded(
    db: &ClusterDatabase,
    removed: crate::index::NodeId,
    channel: &mut dyn BroadcastChannel,
) -> Result<(ClusterDatabase, LoadReport, TransmissionLog)> {
    let plan = plan_removal(db, removed)?;
    let r = db.replication();
    let mut working = excise(db, removed);
    let survivors = working.node_ids();

    let start = channel.log().len();
    channel.begin_operation(db.generation() + 1, &survivors)?;
    for (round, (label, target)) in plan.targets.iter().enumerate() {
        let round = round as u64;
        let sender = label
            .absent_from(&survivors)
            .next()
            .ok_or_else(|| Error::Protocol(format!("no surviving holder of {label}")))?;
        let copy = working.nodes()[&sender]
            .get(label)
            .cloned()
            .ok_or_else(|| Error::Protocol(format!("node {sender} does not hold {label}")))?;
        channel.broadcast(sender, MessageKind::Plain, round, copy.payload().clone())?;
        let packet = channel
            .receive(*target, round, 1)?
            .into_iter()
            .find(|p| p.sender == sender)
            .ok_or_else(|| Error::Protocol(format!("node {target} missed {label}")))?;
        let delivered = Subfile::from_parts_unchecked(label.clone(), packet.payload, copy.provenance().to_vec());
        working
            .nodes_mut()
            .get_mut(target)
            .ok_or_else(|| Error::Protocol(format!("target node {target} vanished")))?
            .insert(label.clone(), delivered);
    }
    channel.finish_operation()?;
    let log = channel.log().since(start);

    let mut merged = merge_reindex(&working, removed)?;
    merged.bump();
    let report = LoadReport::new(
        Operation::Removal { node: removed, coded: false },
        log.total_bytes(),
        db.node_bytes(removed).unwrap_or(0),
        Rational::from_integer(1),
        db.node_count(),
        merged.node_count(),
        r,
    );
    Ok((merged, report, log))
}
