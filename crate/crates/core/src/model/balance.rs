use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::error::{Error, Result};
use crate::index::{falling_factorial, NodeId, OrderedIndex};
use crate::par;

use super::{ClusterDatabase, NodeStore};

/// Histogram of per-byte replication counts within a node subset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReplicationProfile {
    /// count -> number of byte positions stored on exactly that many nodes
    pub histogram: BTreeMap<u32, u64>,
}

impl ReplicationProfile {
    pub fn positions_at(&self, count: u32) -> u64 {
        self.histogram.get(&count).copied().unwrap_or(0)
    }

    pub fn total(&self) -> u64 {
        self.histogram.values().sum()
    }
}

fn node_marks(store: &NodeStore, n: usize) -> Vec<u32> {
    let mut marks = vec![0u32; n];
    for subfile in store.values() {
        for range in subfile.provenance() {
            let hi = (range.end() as usize).min(n);
            for m in &mut marks[(range.offset as usize).min(hi)..hi] {
                *m = 1;
            }
        }
    }
    marks
}

/// For every byte of the file, the number of distinct nodes of `subset`
/// holding it.
pub fn byte_coverage(db: &ClusterDatabase, subset: &BTreeSet<NodeId>) -> Result<Vec<u32>> {
    if let Some(unknown) = subset.iter().find(|id| !db.contains_node(**id)) {
        return Err(Error::Parameter(format!("node {unknown} is not in the database")));
    }
    let n = db.file().size_bytes as usize;
    let stores: Vec<&NodeStore> = subset.iter().map(|id| &db.nodes()[id]).collect();
    Ok(par::sum_counts(par::map(&stores, |s| node_marks(s, n)), n))
}

pub fn replication_profile(db: &ClusterDatabase, subset: &BTreeSet<NodeId>) -> Result<ReplicationProfile> {
    let mut histogram = BTreeMap::new();
    for count in byte_coverage(db, subset)? {
        *histogram.entry(count).or_insert(0u64) += 1;
    }
    Ok(ReplicationProfile { histogram })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    UnequalStorage { node: NodeId, bytes: u64, expected: u64 },
    MalformedSubfile { node: NodeId, index: OrderedIndex, reason: String },
    Placement { node: NodeId, index: OrderedIndex, stored: bool },
    LabelCount { expected: u64, found: u64 },
    InconsistentCopies { index: OrderedIndex, nodes: (NodeId, NodeId) },
    Partition { position: u64, count: u32 },
    Replication { position: u64, count: u32 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::UnequalStorage { node, bytes, expected } => {
                write!(f, "node {node} stores {bytes} bytes, expected {expected}")
            }
            Violation::MalformedSubfile { node, index, reason } => {
                write!(f, "node {node} subfile {index}: {reason}")
            }
            Violation::Placement { node, index, stored: true } => {
                write!(f, "node {node} stores {index} although it appears in the label")
            }
            Violation::Placement { node, index, stored: false } => write!(f, "node {node} is missing {index}"),
            Violation::LabelCount { expected, found } => {
                write!(f, "{found} distinct labels, expected {expected}")
            }
            Violation::InconsistentCopies { index, nodes } => {
                write!(f, "copies of {index} differ between nodes {} and {}", nodes.0, nodes.1)
            }
            Violation::Partition { position, count } => {
                write!(f, "byte {position} carried by {count} distinct labels")
            }
            Violation::Replication { position, count } => {
                write!(f, "byte {position} stored on {count} nodes")
            }
        }
    }
}

/// Result of [`verify_balanced`]: empty means the database is r-balanced and
/// follows the placement rule.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BalanceReport {
    pub violations: Vec<Violation>,
}

impl BalanceReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn first(&self) -> Option<&Violation> {
        self.violations.first()
    }
}

/// Checks equal storage, exact r-fold replication of every byte, that the
/// distinct labels partition the file, and the placement rule (node `k` stores
/// `W_i` iff `k` is not in `i`). Reports the first witness of each kind.
pub fn verify_balanced(db: &ClusterDatabase) -> BalanceReport {
    let mut violations = Vec::new();
    let ids = db.node_ids();
    let n = db.file().size_bytes;
    let label_len = db.index_len();

    // equal storage
    let sizes: Vec<(NodeId, u64)> = ids.iter().map(|id| (*id, db.node_bytes(*id).unwrap_or(0))).collect();
    if let Some(&(_, expected)) = sizes.first() {
        if let Some(&(node, bytes)) = sizes.iter().find(|(_, b)| *b != expected) {
            violations.push(Violation::UnequalStorage { node, bytes, expected });
        }
    }

    // subfile shape
    'shape: for (node, store) in db.nodes() {
        for (key, subfile) in store {
            let reason = if key != subfile.index() {
                Some(format!("stored under {key}"))
            } else if key.len() != label_len {
                Some(format!("label length {} but {label_len} expected", key.len()))
            } else if let Some(c) = key.components().iter().find(|c| !ids.contains(c)) {
                Some(format!("component {c} is not a current node"))
            } else if subfile.provenance().iter().map(|r| r.len).sum::<u64>() != subfile.len() {
                Some("payload length differs from provenance".to_string())
            } else {
                None
            };
            if let Some(reason) = reason {
                violations.push(Violation::MalformedSubfile { node: *node, index: key.clone(), reason });
                break 'shape;
            }
        }
    }

    // placement rule, both directions
    let mut holders: BTreeMap<&OrderedIndex, Vec<NodeId>> = BTreeMap::new();
    for (node, store) in db.nodes() {
        for key in store.keys() {
            holders.entry(key).or_default().push(*node);
        }
    }
    let mut placement = None;
    'placement: for (index, nodes) in &holders {
        if let Some(node) = nodes.iter().find(|n| index.contains(**n)) {
            placement = Some(Violation::Placement { node: *node, index: (*index).clone(), stored: true });
            break;
        }
        for node in index.absent_from(&ids) {
            if !nodes.contains(&node) {
                placement = Some(Violation::Placement { node, index: (*index).clone(), stored: false });
                break 'placement;
            }
        }
    }
    violations.extend(placement);
    if let Ok(expected) = falling_factorial(ids.len() as u64, label_len as u64) {
        let found = holders.len() as u64;
        if found != expected {
            violations.push(Violation::LabelCount { expected, found });
        }
    }

    // copies of one label must agree
    'copies: for (index, nodes) in &holders {
        let reference = &db.nodes()[&nodes[0]][*index];
        for other in &nodes[1..] {
            if &db.nodes()[other][*index] != reference {
                violations.push(Violation::InconsistentCopies { index: (*index).clone(), nodes: (nodes[0], *other) });
                break 'copies;
            }
        }
    }

    // distinct labels partition [0, N)
    let mut carried = vec![0u32; n as usize];
    for subfile in db.distinct_subfiles().values() {
        for range in subfile.provenance() {
            let hi = range.end().min(n) as usize;
            for c in &mut carried[(range.offset as usize).min(hi)..hi] {
                *c += 1;
            }
        }
    }
    if let Some(position) = carried.iter().position(|c| *c != 1) {
        violations.push(Violation::Partition { position: position as u64, count: carried[position] });
    }

    // every byte on exactly r distinct nodes
    let coverage = byte_coverage(db, &ids).expect("all ids are current");
    if let Some(position) = coverage.iter().position(|c| *c as usize != db.replication()) {
        violations.push(Violation::Replication { position: position as u64, count: coverage[position] });
    }

    BalanceReport { violations }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::index::id_range;
    use crate::model::{init_database, FileSpec};

    fn db53() -> ClusterDatabase {
        init_database(5, 3, FileSpec::new(240, 2).unwrap()).unwrap()
    }

    #[test]
    fn fresh_database_passes() {
        assert!(verify_balanced(&db53()).passed());
    }

    #[test]
    fn all_nodes_see_r_copies() {
        let db = db53();
        let profile = replication_profile(&db, &db.node_ids()).unwrap();
        assert_eq!(profile.positions_at(3), 240);
        assert_eq!(profile.total(), 240);
    }

    #[test]
    fn single_node_sees_its_share() {
        let db = db53();
        let profile = replication_profile(&db, &[NodeId(2)].into()).unwrap();
        assert_eq!(profile.positions_at(1), 144);
        assert_eq!(profile.positions_at(0), 96);
    }

    #[test]
    fn unknown_node_is_rejected() {
        assert!(replication_profile(&db53(), &[NodeId(9)].into()).is_err());
    }

    #[test]
    fn deleted_subfile_is_reported() {
        let mut db = db53();
        let victim = db.store(NodeId(1)).unwrap().keys().next().unwrap().clone();
        let gone = db.store_mut(NodeId(1)).unwrap().remove(&victim).unwrap();
        let report = verify_balanced(&db);
        assert!(!report.passed());
        let witness = report
            .violations
            .iter()
            .find_map(|v| match v {
                Violation::Replication { position, count } => Some((*position, *count)),
                _ => None,
            })
            .expect("replication violation");
        assert_eq!(witness, (gone.provenance()[0].offset, 2));
        assert!(report.violations.iter().any(|v| matches!(v, Violation::UnequalStorage { .. })));
    }

    #[test]
    fn misplaced_subfile_is_reported() {
        let mut db = db53();
        let label = OrderedIndex::from_ids(&[2, 3]).unwrap();
        let moved = db.store_mut(NodeId(1)).unwrap().remove(&label).unwrap();
        db.store_mut(NodeId(2)).unwrap().insert(label, moved);
        let report = verify_balanced(&db);
        assert!(report
            .violations
            .iter()
            .any(|v| matches!(v, Violation::Placement { node: NodeId(2), stored: true, .. })));
    }

    #[test]
    fn coverage_excluding_one_node() {
        let db = db53();
        let survivors: BTreeSet<_> = id_range(1, 4);
        let profile = replication_profile(&db, &survivors).unwrap();
        // 3/5 of the bytes lost a copy, the rest still have 3
        assert_eq!(profile.positions_at(2), 144);
        assert_eq!(profile.positions_at(3), 96);
    }
}
