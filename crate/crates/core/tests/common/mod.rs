//! Independent reference computations for the integration tests. Nothing
//! here calls into the library's combinatorics or protocol code.

#![allow(dead_code)]

use itertools::Itertools;

/// `n! / (n - l)!` through u128 factorials.
pub fn ordered_count(n: u64, l: u64) -> u64 {
    let fact = |m: u64| (1..=m as u128).product::<u128>();
    (fact(n) / fact(n - l)) as u64
}

/// Ordered `l`-tuples over `1..=n`, sorted.
pub fn ordered_tuples(n: u64, l: usize) -> Vec<Vec<u64>> {
    let mut out: Vec<Vec<u64>> = if l == 0 { vec![vec![]] } else { (1..=n).permutations(l).collect() };
    out.sort();
    out
}

/// Per-byte count of `subset` nodes holding each byte of a freshly built
/// database, derived from the placement rule alone.
pub fn fresh_coverage(k: u64, r: u64, n: u64, subset: &[u64]) -> Vec<u32> {
    let labels = ordered_tuples(k, (k - r) as usize);
    let size = n / labels.len() as u64;
    (0..n)
        .map(|pos| {
            let label = &labels[(pos / size) as usize];
            subset.iter().filter(|node| !label.contains(node)).count() as u32
        })
        .collect()
}

/// Straight-line simulation of the XOR exchange among `files.len()` nodes,
/// node `m` lacking `files[m]`. Returns what each node decodes and the total
/// number of bytes broadcast.
pub fn simulate_exchange(files: &[Vec<u8>]) -> (Vec<Vec<u8>>, usize) {
    let r = files.len();
    let part = files[0].len() / (r - 1);
    // chunk of file j reserved for node i
    let chunk = |j: usize, i: usize| -> &[u8] {
        let slot = (0..r).filter(|x| *x != j).position(|x| x == i).unwrap();
        &files[j][slot * part..(slot + 1) * part]
    };
    let mut sent = 0;
    let mut packets = vec![vec![0u8; part]; r];
    for (i, packet) in packets.iter_mut().enumerate() {
        for j in (0..r).filter(|j| *j != i) {
            for (p, c) in packet.iter_mut().zip(chunk(j, i)) {
                *p ^= c;
            }
        }
        sent += part;
    }
    let decoded = (0..r)
        .map(|m| {
            let mut out = Vec::new();
            for i in (0..r).filter(|i| *i != m) {
                let mut piece = packets[i].clone();
                for j in (0..r).filter(|j| *j != m && *j != i) {
                    for (p, c) in piece.iter_mut().zip(chunk(j, i)) {
                        *p ^= c;
                    }
                }
                out.extend(piece);
            }
            out
        })
        .collect();
    (decoded, sent)
}

/// Smallest file size valid for one operation from `k` nodes.
pub fn minimal_bytes(k: u64, r: u64) -> u64 {
    (r - 1) * ordered_count(k + 1, k + 1 - r)
}

use std::collections::BTreeSet;

use bytes::Bytes;
use coded_rebalance::transport::{DeliveryReceipt, MessageKind, Packet};
use coded_rebalance::{BroadcastChannel, MemoryChannel, NodeId, TransmissionLog};

/// Memory bus that also keeps every payload broadcast through it.
#[derive(Default)]
pub struct Recorder {
    inner: MemoryChannel,
    pub sent: Vec<(NodeId, u64, Bytes)>,
}

impl BroadcastChannel for Recorder {
    fn begin_operation(&mut self, operation_id: u64, participants: &BTreeSet<NodeId>) -> coded_rebalance::Result<()> {
        self.inner.begin_operation(operation_id, participants)
    }

    fn broadcast(
        &mut self,
        sender: NodeId,
        kind: MessageKind,
        round: u64,
        payload: Bytes,
    ) -> coded_rebalance::Result<DeliveryReceipt> {
        self.sent.push((sender, round, payload.clone()));
        self.inner.broadcast(sender, kind, round, payload)
    }

    fn receive(&self, receiver: NodeId, round: u64, expected: usize) -> coded_rebalance::Result<Vec<Packet>> {
        self.inner.receive(receiver, round, expected)
    }

    fn finish_operation(&mut self) -> coded_rebalance::Result<()> {
        self.inner.finish_operation()
    }

    fn participants(&self) -> &BTreeSet<NodeId> {
        self.inner.participants()
    }

    fn log(&self) -> &TransmissionLog {
        self.inner.log()
    }
}

/// XOR of equal-length slices.
pub fn xor(a: &[u8], b: &[u8]) -> Vec<u8> {
    a.iter().zip(b).map(|(x, y)| x ^ y).collect()
}

use std::collections::BTreeMap;

use coded_rebalance::ClusterDatabase;

fn render(label: &[u64]) -> String {
    format!("[{}]", label.iter().map(u64::to_string).collect::<Vec<_>>().join(" "))
}

fn render_layout(nodes: Vec<Vec<Vec<u64>>>) -> String {
    nodes
        .into_iter()
        .enumerate()
        .map(|(rank, mut labels)| {
            labels.sort();
            let body: Vec<String> = labels.iter().map(|l| render(l)).collect();
            format!("node={}: {}", rank + 1, body.join(","))
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Serialized layout of a fresh `k`-node, `r`-replica placement.
pub fn layout_text(k: u64, r: u64) -> String {
    let labels = ordered_tuples(k, (k - r) as usize);
    render_layout((1..=k).map(|node| labels.iter().filter(|l| !l.contains(&node)).cloned().collect()).collect())
}

/// Serialized layout of `db` with node ids replaced by their rank.
pub fn canonical_text(db: &ClusterDatabase) -> String {
    let rank: BTreeMap<u64, u64> = db.nodes().keys().enumerate().map(|(n, id)| (id.0, n as u64 + 1)).collect();
    render_layout(
        db.nodes()
            .values()
            .map(|store| store.keys().map(|l| l.components().iter().map(|c| rank[&c.0]).collect()).collect())
            .collect(),
    )
}

/// How many nodes hold each file byte, from provenance alone.
pub fn provenance_coverage(db: &ClusterDatabase) -> Vec<u32> {
    let mut counts = vec![0u32; db.file().size_bytes as usize];
    for store in db.nodes().values() {
        for subfile in store.values() {
            for range in subfile.provenance() {
                for pos in range.offset..range.offset + range.len {
                    counts[pos as usize] += 1;
                }
            }
        }
    }
    counts
}

/// Places every stored byte at its provenance offset; `None` if two copies
/// disagree or a byte is missing.
pub fn reassemble(db: &ClusterDatabase) -> Option<Vec<u8>> {
    let mut out: Vec<Option<u8>> = vec![None; db.file().size_bytes as usize];
    for store in db.nodes().values() {
        for subfile in store.values() {
            let mut cursor = 0usize;
            for range in subfile.provenance() {
                for pos in range.offset..range.offset + range.len {
                    let byte = subfile.payload()[cursor];
                    cursor += 1;
                    match out[pos as usize] {
                        Some(seen) if seen != byte => return None,
                        _ => out[pos as usize] = Some(byte),
                    }
                }
            }
        }
    }
    out.into_iter().collect()
}
