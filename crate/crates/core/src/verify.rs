//! Load accounting in exact rationals, layout canonicalisation and the
//! structural-invariance check.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::index::{enumerate_ordered_indices, id_range, NodeId, OrderedIndex};
use crate::model::ClusterDatabase;

/// Exact non-negative rational, always in lowest terms.
pub type Rational = Ratio<u64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Operation {
    Removal { node: NodeId, coded: bool },
    Addition { node: NodeId },
}

impl Operation {
    pub fn node(&self) -> NodeId {
        match self {
            Operation::Removal { node, .. } | Operation::Addition { node } => *node,
        }
    }
}

/// Measured against theoretical load for one rebalancing operation.
///
/// The normaliser is the removed node's storage for a removal and the new
/// node's storage for an addition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LoadReport {
    pub operation: Operation,
    pub bytes_transmitted: u64,
    pub normalizer: u64,
    pub measured: Rational,
    pub theory: Rational,
    pub lambda_before: Rational,
    pub lambda_after: Rational,
}

impl LoadReport {
    pub(crate) fn new(
        operation: Operation,
        bytes_transmitted: u64,
        normalizer: u64,
        theory: Rational,
        nodes_before: usize,
        nodes_after: usize,
        replication: usize,
    ) -> Self {
        LoadReport {
            operation,
            bytes_transmitted,
            normalizer,
            measured: Ratio::new(bytes_transmitted, normalizer.max(1)),
            theory,
            lambda_before: Ratio::new(replication as u64, nodes_before as u64),
            lambda_after: Ratio::new(replication as u64, nodes_after as u64),
        }
    }
}

/// Coded removal load `1/(r-1)`.
pub fn removal_theory(replication: usize) -> Rational {
    Ratio::new(1, replication as u64 - 1)
}

/// `1/(r-1) + 1`, the best achievable removal-plus-addition load.
pub fn pair_theory(replication: usize) -> Rational {
    removal_theory(replication) + Ratio::from_integer(1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LoadComparison {
    Equal,
    Deviation { measured: Rational, theory: Rational },
}

impl LoadComparison {
    pub fn is_equal(&self) -> bool {
        matches!(self, LoadComparison::Equal)
    }
}

fn compare(measured: Rational, theory: Rational) -> LoadComparison {
    if measured == theory {
        LoadComparison::Equal
    } else {
        LoadComparison::Deviation { measured, theory }
    }
}

pub fn compare_load(report: &LoadReport) -> LoadComparison {
    compare(report.measured, report.theory)
}

/// Sum of a removal and an addition load against `1/(r-1) + 1`.
pub fn compare_pair(removal: &LoadReport, addition: &LoadReport, replication: usize) -> LoadComparison {
    compare(removal.measured + addition.measured, pair_theory(replication))
}

/// Node-to-labels layout after mapping the sorted node ids onto `1..=K`.
/// Payloads are not part of it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CanonicalLayout {
    /// `nodes[rank - 1]` holds the sorted labels stored at that rank.
    pub nodes: Vec<Vec<OrderedIndex>>,
}

impl fmt::Display for CanonicalLayout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (pos, labels) in self.nodes.iter().enumerate() {
            if pos > 0 {
                f.write_str("\n")?;
            }
            write!(f, "node={}:", pos + 1)?;
            for (n, label) in labels.iter().enumerate() {
                f.write_str(if n == 0 { " " } else { "," })?;
                write!(f, "{label}")?;
            }
        }
        Ok(())
    }
}

pub fn canonicalize(db: &ClusterDatabase) -> CanonicalLayout {
    let rank: BTreeMap<NodeId, NodeId> =
        db.nodes().keys().enumerate().map(|(pos, id)| (*id, NodeId(pos as u64 + 1))).collect();
    let nodes = db
        .nodes()
        .values()
        .map(|store| {
            let mut labels: Vec<OrderedIndex> =
                store.keys().map(|label| label.map_ids(|id| rank.get(&id).copied().unwrap_or(NodeId(0)))).collect();
            labels.sort();
            labels
        })
        .collect();
    CanonicalLayout { nodes }
}

/// Layout of the construction on nodes `1..=nodes`. Defined for
/// `replication <= nodes`.
pub fn reference_layout(nodes: usize, replication: usize) -> CanonicalLayout {
    let ids: BTreeSet<NodeId> = id_range(1, nodes as u64);
    let labels = enumerate_ordered_indices(&ids, nodes.saturating_sub(replication)).unwrap_or_default();
    CanonicalLayout {
        nodes: ids.iter().map(|id| labels.iter().filter(|l| !l.contains(*id)).cloned().collect()).collect(),
    }
}

/// First place where a layout departs from the reference.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayoutDiff {
    pub node_rank: u64,
    pub index: Option<OrderedIndex>,
    /// Whether the reference stores `index` at this rank.
    pub expected: bool,
}

impl fmt::Display for LayoutDiff {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (&self.index, self.expected) {
            (Some(index), true) => write!(f, "node={} lacks {index}", self.node_rank),
            (Some(index), false) => write!(f, "node={} has unexpected {index}", self.node_rank),
            (None, _) => write!(f, "node={} not expected", self.node_rank),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InvarianceReport {
    pub diff: Option<LayoutDiff>,
}

impl InvarianceReport {
    pub fn passed(&self) -> bool {
        self.diff.is_none()
    }
}

pub fn diff_layouts(actual: &CanonicalLayout, expected: &CanonicalLayout) -> Option<LayoutDiff> {
    let ranks = actual.nodes.len().max(expected.nodes.len());
    for pos in 0..ranks {
        let node_rank = pos as u64 + 1;
        let (Some(got), Some(want)) = (actual.nodes.get(pos), expected.nodes.get(pos)) else {
            let index = expected.nodes.get(pos).and_then(|w| w.first()).cloned();
            let expected = index.is_some();
            return Some(LayoutDiff { node_rank, index, expected });
        };
        let got_set: BTreeSet<&OrderedIndex> = got.iter().collect();
        let want_set: BTreeSet<&OrderedIndex> = want.iter().collect();
        let missing = want_set.difference(&got_set).next();
        let extra = got_set.difference(&want_set).next();
        match (missing, extra) {
            (Some(m), Some(e)) if e < m => {
                return Some(LayoutDiff { node_rank, index: Some((*e).clone()), expected: false })
            }
            (Some(m), _) => return Some(LayoutDiff { node_rank, index: Some((*m).clone()), expected: true }),
            (None, Some(e)) => return Some(LayoutDiff { node_rank, index: Some((*e).clone()), expected: false }),
            (None, None) if got.len() != want.len() => {
                return Some(LayoutDiff { node_rank, index: got.first().cloned(), expected: false })
            }
            (None, None) => {}
        }
    }
    None
}

/// Passes iff the canonical layout equals the construction's layout for the
/// current node count.
pub fn check_structural_invariance(db: &ClusterDatabase) -> InvarianceReport {
    let expected = reference_layout(db.node_count(), db.replication());
    InvarianceReport { diff: diff_layouts(&canonicalize(db), &expected) }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_database, FileSpec};

    #[test]
    fn fresh_layout_is_canonical() {
        let db = init_database(4, 2, FileSpec::new(60, 0).unwrap()).unwrap();
        let layout = canonicalize(&db);
        assert_eq!(layout, reference_layout(4, 2));
        assert!(check_structural_invariance(&db).passed());
        assert_eq!(layout.to_string().lines().next().unwrap(), "node=1: [2 3],[2 4],[3 2],[3 4],[4 2],[4 3]");
    }

    #[test]
    fn swapped_subfiles_fail() {
        let mut db = init_database(4, 2, FileSpec::new(60, 0).unwrap()).unwrap();
        let a = OrderedIndex::from_ids(&[2, 3]).unwrap();
        let b = OrderedIndex::from_ids(&[1, 3]).unwrap();
        let sa = db.store_mut(NodeId(1)).unwrap().remove(&a).unwrap();
        let sb = db.store_mut(NodeId(2)).unwrap().remove(&b).unwrap();
        db.store_mut(NodeId(1)).unwrap().insert(b.clone(), sb);
        db.store_mut(NodeId(2)).unwrap().insert(a, sa);
        let report = check_structural_invariance(&db);
        assert_eq!(report.diff, Some(LayoutDiff { node_rank: 1, index: Some(b), expected: false }));
    }

    #[test]
    fn load_comparisons() {
        let half = Ratio::new(1, 2);
        let removal = LoadReport::new(Operation::Removal { node: NodeId(5), coded: true }, 72, 144, half, 5, 4, 3);
        assert_eq!(removal.measured, half);
        assert!(compare_load(&removal).is_equal());
        let addition =
            LoadReport::new(Operation::Addition { node: NodeId(6) }, 120, 120, Ratio::from_integer(1), 5, 6, 3);
        assert!(compare_load(&addition).is_equal());
        assert_eq!(pair_theory(3), Ratio::new(3, 2));
        assert!(compare_pair(&removal, &addition, 3).is_equal());
        let off = LoadReport::new(Operation::Removal { node: NodeId(5), coded: true }, 144, 144, half, 5, 4, 3);
        assert_eq!(compare_load(&off), LoadComparison::Deviation { measured: Ratio::from_integer(1), theory: half });
    }

    #[test]
    fn empty_labels_render() {
        // r == K: every node stores the single empty label
        assert_eq!(reference_layout(2, 2).to_string(), "node=1: []\nnode=2: []");
    }
}
