//! Node ids, ordered subfile labels and the counting machinery around them.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::error::{Error, Result};

/// Largest node count for which falling factorials are guaranteed to fit.
pub const MAX_NODES: u64 = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u64);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

impl From<u64> for NodeId {
    fn from(id: u64) -> Self {
        NodeId(id)
    }
}

/// An ordered tuple of distinct node ids labelling a subfile.
///
/// Order is significant: `[1 2 5]` and `[5 2 1]` are different labels. The
/// derived `Ord` is lexicographic on the component sequence.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct OrderedIndex(SmallVec<[NodeId; 8]>);

impl OrderedIndex {
    /// Builds an index, rejecting repeated components.
    pub fn new(components: impl IntoIterator<Item = NodeId>) -> Result<Self> {
        let components: SmallVec<[NodeId; 8]> = components.into_iter().collect();
        for (pos, id) in components.iter().enumerate() {
            if components[..pos].contains(id) {
                return Err(Error::Parameter(format!("node {id} repeated in index")));
            }
        }
        Ok(OrderedIndex(components))
    }

    pub fn from_ids(ids: &[u64]) -> Result<Self> {
        Self::new(ids.iter().copied().map(NodeId))
    }

    pub fn empty() -> Self {
        OrderedIndex(SmallVec::new())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn components(&self) -> &[NodeId] {
        &self.0
    }

    pub fn contains(&self, id: NodeId) -> bool {
        self.0.contains(&id)
    }

    pub fn first(&self) -> Option<NodeId> {
        self.0.first().copied()
    }

    /// Everything after the first component.
    pub fn tail(&self) -> OrderedIndex {
        OrderedIndex(self.0.iter().skip(1).copied().collect())
    }

    /// `[id, self...]`. The caller guarantees `id` is not already present.
    pub fn prefixed(&self, id: NodeId) -> OrderedIndex {
        debug_assert!(!self.contains(id));
        let mut out = SmallVec::with_capacity(self.len() + 1);
        out.push(id);
        out.extend_from_slice(&self.0);
        OrderedIndex(out)
    }

    /// `id` inserted before position `pos` (`pos == len` appends).
    pub fn inserted(&self, pos: usize, id: NodeId) -> OrderedIndex {
        debug_assert!(!self.contains(id));
        let mut out = self.0.clone();
        out.insert(pos, id);
        OrderedIndex(out)
    }

    /// All `len + 1` insertions of `id`, in insertion-position order.
    pub fn insertions(&self, id: NodeId) -> impl Iterator<Item = OrderedIndex> + '_ {
        (0..=self.len()).map(move |pos| self.inserted(pos, id))
    }

    /// Copy with every occurrence of `id` dropped.
    pub fn without(&self, id: NodeId) -> OrderedIndex {
        OrderedIndex(self.0.iter().copied().filter(|c| *c != id).collect())
    }

    /// Ids of `universe` that do not appear in this index, ascending.
    pub fn absent_from<'a>(&'a self, universe: &'a BTreeSet<NodeId>) -> impl Iterator<Item = NodeId> + 'a {
        universe.iter().copied().filter(move |id| !self.contains(*id))
    }

    /// Rewrites every component through `f`.
    pub fn map_ids(&self, mut f: impl FnMut(NodeId) -> NodeId) -> OrderedIndex {
        OrderedIndex(self.0.iter().map(|id| f(*id)).collect())
    }
}

impl fmt::Display for OrderedIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("[")?;
        for (pos, id) in self.0.iter().enumerate() {
            if pos > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{id}")?;
        }
        f.write_str("]")
    }
}

impl fmt::Debug for OrderedIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl Serialize for OrderedIndex {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_seq(self.0.iter())
    }
}

impl<'de> Deserialize<'de> for OrderedIndex {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let ids = Vec::<NodeId>::deserialize(deserializer)?;
        OrderedIndex::new(ids).map_err(serde::de::Error::custom)
    }
}

/// `P(n, l) = n (n-1) ... (n-l+1)`.
pub fn falling_factorial(n: u64, l: u64) -> Result<u64> {
    if l > n {
        return Err(Error::Domain(format!("P({n}, {l}) needs l <= n")));
    }
    (n - l + 1..=n)
        .try_fold(1u64, |acc, f| acc.checked_mul(f).ok_or_else(|| Error::Domain(format!("P({n}, {l}) overflows u64"))))
}

/// Every ordered `l`-tuple of distinct elements of `ids`, lexicographically.
pub fn enumerate_ordered_indices(ids: &BTreeSet<NodeId>, l: usize) -> Result<Vec<OrderedIndex>> {
    if l > ids.len() {
        return Err(Error::Domain(format!("cannot draw {l} distinct components from {} ids", ids.len())));
    }
    let pool: Vec<NodeId> = ids.iter().copied().collect();
    let count = falling_factorial(pool.len() as u64, l as u64)?;
    let mut out = Vec::with_capacity(count as usize);
    let mut used = vec![false; pool.len()];
    let mut current = SmallVec::<[NodeId; 8]>::new();
    extend_tuples(&pool, l, &mut used, &mut current, &mut out);
    Ok(out)
}

fn extend_tuples(
    pool: &[NodeId],
    l: usize,
    used: &mut [bool],
    current: &mut SmallVec<[NodeId; 8]>,
    out: &mut Vec<OrderedIndex>,
) {
    if current.len() == l {
        out.push(OrderedIndex(current.clone()));
        return;
    }
    for pos in 0..pool.len() {
        if used[pos] {
            continue;
        }
        used[pos] = true;
        current.push(pool[pos]);
        extend_tuples(pool, l, used, current, out);
        current.pop();
        used[pos] = false;
    }
}

pub(crate) fn id_range(lo: u64, hi: u64) -> BTreeSet<NodeId> {
    (lo..=hi).map(NodeId).collect()
}
