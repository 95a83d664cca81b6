//! File, subfile and database model plus the placement construction.

mod balance;

use std::collections::{BTreeMap, BTreeSet};

use bytes::{Bytes, BytesMut};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::index::{enumerate_ordered_indices, falling_factorial, id_range, NodeId, OrderedIndex, MAX_NODES};
use crate::par;

pub use balance::{byte_coverage, replication_profile, verify_balanced, BalanceReport, ReplicationProfile, Violation};

/// The file `W`: a size and the seed its pseudorandom content is drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FileSpec {
    pub size_bytes: u64,
    pub seed: u64,
}

impl FileSpec {
    pub fn new(size_bytes: u64, seed: u64) -> Result<Self> {
        if size_bytes == 0 {
            return Err(Error::Parameter("file size must be at least one byte".into()));
        }
        Ok(FileSpec { size_bytes, seed })
    }

    /// Regenerates the file content. Same seed, same bytes.
    pub fn content(&self) -> Vec<u8> {
        let mut buf = vec![0u8; self.size_bytes as usize];
        ChaCha8Rng::seed_from_u64(self.seed).fill_bytes(&mut buf);
        buf
    }
}

/// A half-open byte range `[offset, offset + len)` of the original file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ByteRange {
    pub offset: u64,
    pub len: u64,
}

impl ByteRange {
    pub fn end(&self) -> u64 {
        self.offset + self.len
    }
}

/// A labelled payload together with the file ranges it carries, in payload
/// order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Subfile {
    index: OrderedIndex,
    payload: Bytes,
    provenance: Vec<ByteRange>,
}

impl Subfile {
    pub fn new(index: OrderedIndex, payload: Bytes, provenance: Vec<ByteRange>) -> Result<Self> {
        let carried: u64 = provenance.iter().map(|r| r.len).sum();
        if carried != payload.len() as u64 {
            return Err(Error::Parameter(format!(
                "subfile {index}: payload is {} bytes but provenance covers {carried}",
                payload.len()
            )));
        }
        let mut sorted = provenance.clone();
        sorted.sort();
        if sorted.windows(2).any(|w| w[0].end() > w[1].offset) {
            return Err(Error::Parameter(format!("subfile {index}: overlapping provenance ranges")));
        }
        Ok(Subfile { index, payload, provenance: coalesce(provenance) })
    }

    pub(crate) fn from_parts_unchecked(index: OrderedIndex, payload: Bytes, provenance: Vec<ByteRange>) -> Self {
        Subfile { index, payload, provenance }
    }

    pub fn index(&self) -> &OrderedIndex {
        &self.index
    }

    pub fn payload(&self) -> &Bytes {
        &self.payload
    }

    pub fn provenance(&self) -> &[ByteRange] {
        &self.provenance
    }

    pub fn len(&self) -> u64 {
        self.payload.len() as u64
    }

    pub fn is_empty(&self) -> bool {
        self.payload.is_empty()
    }

    /// Same payload and provenance under a different label.
    pub fn relabelled(&self, index: OrderedIndex) -> Subfile {
        Subfile { index, payload: self.payload.clone(), provenance: self.provenance.clone() }
    }

    /// Cuts the payload into `parts` equal contiguous slices, carrying the
    /// provenance along. Slices share the underlying buffer.
    pub fn split_equal(&self, parts: usize) -> Result<Vec<(Bytes, Vec<ByteRange>)>> {
        let len = self.len();
        if parts == 0 || !len.is_multiple_of(parts as u64) {
            return Err(Error::Alignment { len, parts: parts as u64 });
        }
        let step = len / parts as u64;
        Ok((0..parts as u64)
            .map(|p| {
                let start = p * step;
                (
                    self.payload.slice(start as usize..(start + step) as usize),
                    slice_provenance(&self.provenance, start, step),
                )
            })
            .collect())
    }

    /// Concatenates payloads and provenance in the given order.
    pub fn concat<'a>(index: OrderedIndex, parts: impl IntoIterator<Item = &'a Subfile>) -> Subfile {
        let mut payload = BytesMut::new();
        let mut provenance = Vec::new();
        for part in parts {
            payload.extend_from_slice(&part.payload);
            provenance.extend_from_slice(&part.provenance);
        }
        Subfile { index, payload: payload.freeze(), provenance: coalesce(provenance) }
    }
}

/// The provenance of payload bytes `[start, start + len)`.
pub(crate) fn slice_provenance(ranges: &[ByteRange], start: u64, len: u64) -> Vec<ByteRange> {
    let end = start + len;
    let mut out = Vec::new();
    let mut cursor = 0u64;
    for range in ranges {
        let (lo, hi) = (cursor, cursor + range.len);
        cursor = hi;
        if hi <= start {
            continue;
        }
        if lo >= end {
            break;
        }
        let take_lo = start.max(lo);
        let take_hi = end.min(hi);
        out.push(ByteRange { offset: range.offset + (take_lo - lo), len: take_hi - take_lo });
    }
    out
}

/// Merges ranges that abut in payload order.
fn coalesce(ranges: Vec<ByteRange>) -> Vec<ByteRange> {
    let mut out: Vec<ByteRange> = Vec::with_capacity(ranges.len());
    for range in ranges.into_iter().filter(|r| r.len > 0) {
        match out.last_mut() {
            Some(last) if last.end() == range.offset => last.len += range.len,
            _ => out.push(range),
        }
    }
    out
}

/// What one node stores, keyed by subfile label.
pub type NodeStore = BTreeMap<OrderedIndex, Subfile>;

/// The full cluster state: per-node stores, replication factor, the file and
/// an operation counter.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterDatabase {
    replication: usize,
    file: FileSpec,
    generation: u64,
    next_id: u64,
    nodes: BTreeMap<NodeId, NodeStore>,
}

impl ClusterDatabase {
    pub(crate) fn from_parts(
        replication: usize,
        file: FileSpec,
        generation: u64,
        next_id: u64,
        nodes: BTreeMap<NodeId, NodeStore>,
    ) -> Self {
        ClusterDatabase { replication, file, generation, next_id, nodes }
    }

    pub fn replication(&self) -> usize {
        self.replication
    }

    pub fn file(&self) -> &FileSpec {
        &self.file
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    /// The id the next added node will receive. Ids are never reused.
    pub fn next_id(&self) -> NodeId {
        NodeId(self.next_id)
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn node_ids(&self) -> BTreeSet<NodeId> {
        self.nodes.keys().copied().collect()
    }

    pub fn contains_node(&self, id: NodeId) -> bool {
        self.nodes.contains_key(&id)
    }

    pub fn nodes(&self) -> &BTreeMap<NodeId, NodeStore> {
        &self.nodes
    }

    pub fn store(&self, id: NodeId) -> Option<&NodeStore> {
        self.nodes.get(&id)
    }

    /// Direct mutable access to a node's store. Nothing is re-checked; meant
    /// for fault injection in tests and tools.
    pub fn store_mut(&mut self, id: NodeId) -> Option<&mut NodeStore> {
        self.nodes.get_mut(&id)
    }

    pub(crate) fn nodes_mut(&mut self) -> &mut BTreeMap<NodeId, NodeStore> {
        &mut self.nodes
    }

    pub(crate) fn bump(&mut self) {
        self.generation += 1;
    }

    pub(crate) fn allocate_id(&mut self) -> NodeId {
        let id = NodeId(self.next_id);
        self.next_id += 1;
        id
    }

    /// Label length of the placement for the current node count, `K - r`.
    pub fn index_len(&self) -> usize {
        self.nodes.len().saturating_sub(self.replication)
    }

    /// Payload bytes held by one node.
    pub fn node_bytes(&self, id: NodeId) -> Option<u64> {
        self.nodes.get(&id).map(|s| s.values().map(Subfile::len).sum())
    }

    /// Distinct subfile labels present anywhere, each with the copy held by
    /// the lowest-id holder.
    pub fn distinct_subfiles(&self) -> BTreeMap<&OrderedIndex, &Subfile> {
        let mut out = BTreeMap::new();
        for store in self.nodes.values() {
            for (index, subfile) in store {
                out.entry(index).or_insert(subfile);
            }
        }
        out
    }

    /// Length shared by every subfile, if they all agree.
    pub fn uniform_subfile_len(&self) -> Option<u64> {
        let mut lens = self.nodes.values().flat_map(|s| s.values().map(Subfile::len));
        let first = lens.next()?;
        lens.all(|l| l == first).then_some(first)
    }

    /// Writes every distinct subfile back through its provenance. Fails unless
    /// the labels partition the file exactly.
    pub fn reconstruct_file(&self) -> Result<Vec<u8>> {
        let n = self.file.size_bytes as usize;
        let mut out = vec![0u8; n];
        let mut written = vec![false; n];
        for subfile in self.distinct_subfiles().values() {
            let mut cursor = 0usize;
            for range in subfile.provenance() {
                let (lo, hi) = (range.offset as usize, range.end() as usize);
                if hi > n {
                    return Err(Error::Protocol(format!("subfile {} points past the file end", subfile.index())));
                }
                if let Some(pos) = (lo..hi).find(|p| written[*p]) {
                    return Err(Error::Protocol(format!("byte {pos} carried by more than one subfile")));
                }
                out[lo..hi].copy_from_slice(&subfile.payload()[cursor..cursor + range.len as usize]);
                written[lo..hi].iter_mut().for_each(|w| *w = true);
                cursor += range.len as usize;
            }
        }
        if let Some(pos) = written.iter().position(|w| !w) {
            return Err(Error::Protocol(format!("byte {pos} is not carried by any subfile")));
        }
        Ok(out)
    }
}

/// Smallest file size the construction accepts for up to `max_nodes` nodes:
/// `(r - 1) P(max_nodes + 1, max_nodes + 1 - r)`.
pub fn required_multiple(max_nodes: usize, replication: usize) -> Result<u64> {
    let k = max_nodes as u64 + 1;
    let r = replication as u64;
    if r > k {
        return Err(Error::Parameter(format!("replication {r} exceeds {k}")));
    }
    let p = falling_factorial(k, k - r)?;
    p.checked_mul(r - 1).ok_or_else(|| Error::Domain("divisibility requirement overflows u64".into()))
}

fn check_replication(nodes: usize, replication: usize) -> Result<()> {
    if replication < 2 {
        return Err(Error::Parameter(format!("replication must be at least 2, got {replication}")));
    }
    if replication + 1 > nodes {
        return Err(Error::Parameter(format!(
            "replication {replication} needs at least {} nodes, got {nodes}",
            replication + 1
        )));
    }
    if nodes as u64 > MAX_NODES {
        return Err(Error::Parameter(format!("at most {MAX_NODES} nodes are supported, got {nodes}")));
    }
    Ok(())
}

/// Builds the placement for nodes `1..=nodes`: the file is cut into
/// `P(K, K-r)` equal subfiles labelled by `S([K], K-r)` in lexicographic order,
/// and node `k` stores `W_i` iff `k` is not in `i`.
///
/// `N` must be a multiple of `(r-1) P(K+1, K+1-r)`, which covers one removal
/// or one addition from here.
pub fn init_database(nodes: usize, replication: usize, file: FileSpec) -> Result<ClusterDatabase> {
    init_database_with_capacity(nodes, replication, file, nodes)
}

/// Like [`init_database`] but checks divisibility for every node count up to
/// `max_nodes`, so any add/remove sequence staying within that bound is
/// aligned.
pub fn init_database_with_capacity(
    nodes: usize,
    replication: usize,
    file: FileSpec,
    max_nodes: usize,
) -> Result<ClusterDatabase> {
    check_replication(nodes, replication)?;
    if max_nodes < nodes {
        return Err(Error::Parameter(format!("max nodes {max_nodes} is below the initial {nodes}")));
    }
    let required = required_multiple(max_nodes, replication)?;
    if !file.size_bytes.is_multiple_of(required) {
        return Err(Error::Divisibility { size: file.size_bytes, required });
    }
    Ok(build_placement(&id_range(1, nodes as u64), replication, file, &Bytes::from(file.content())))
}

pub(crate) fn build_placement(
    ids: &BTreeSet<NodeId>,
    replication: usize,
    file: FileSpec,
    content: &Bytes,
) -> ClusterDatabase {
    let labels = enumerate_ordered_indices(ids, ids.len() - replication).expect("label length within node count");
    let size = file.size_bytes / labels.len() as u64;
    let subfiles: Vec<Subfile> = labels
        .into_iter()
        .enumerate()
        .map(|(ordinal, index)| {
            let offset = ordinal as u64 * size;
            Subfile {
                index,
                payload: content.slice(offset as usize..(offset + size) as usize),
                provenance: vec![ByteRange { offset, len: size }],
            }
        })
        .collect();
    let id_list: Vec<NodeId> = ids.iter().copied().collect();
    let stores = par::map(&id_list, |id| {
        subfiles.iter().filter(|s| !s.index.contains(*id)).map(|s| (s.index.clone(), s.clone())).collect::<NodeStore>()
    });
    let next_id = ids.iter().next_back().map_or(1, |id| id.0 + 1);
    ClusterDatabase { replication, file, generation: 0, next_id, nodes: id_list.into_iter().zip(stores).collect() }
}
