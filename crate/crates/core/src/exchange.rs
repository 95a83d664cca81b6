//! XOR data exchange among `r` nodes that each miss exactly one of `r`
//! equal-length files.
//!
//! File `B_j` is cut into `r-1` contiguous parts, one per co-participant in
//! ascending position order. Participant `i` broadcasts the XOR of the parts
//! keyed to it from every file it holds. Participant `m` recovers part
//! `B_{m,i}` from `E_i` by cancelling the other terms with its own files. The
//! `r` packets of `l/(r-1)` bytes each total `l r/(r-1)`.

use std::collections::BTreeMap;

use bytes::{Bytes, BytesMut};

use crate::error::{Error, Result};
use crate::index::NodeId;
use crate::transport::{BroadcastChannel, MessageKind};

/// One exchange round: `files[m]` is the file participant `m` lacks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExchangeGroup {
    participants: Vec<NodeId>,
    files: Vec<Bytes>,
    round: u64,
}

impl ExchangeGroup {
    /// Participants must be distinct; they are put in ascending order together
    /// with their missing files.
    pub fn new(participants: Vec<NodeId>, files: Vec<Bytes>, round: u64) -> Result<Self> {
        let r = participants.len();
        if r < 2 {
            return Err(Error::Parameter(format!("an exchange needs at least 2 participants, got {r}")));
        }
        if files.len() != r {
            return Err(Error::Parameter(format!("{r} participants but {} files", files.len())));
        }
        let mut pairs: Vec<(NodeId, Bytes)> = participants.into_iter().zip(files).collect();
        pairs.sort_by_key(|(id, _)| *id);
        if pairs.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::Parameter("exchange participants must be distinct".into()));
        }
        let len = pairs[0].1.len();
        if pairs.iter().any(|(_, f)| f.len() != len) {
            return Err(Error::Parameter("exchange files must have equal length".into()));
        }
        if !len.is_multiple_of(r - 1) {
            return Err(Error::Alignment { len: len as u64, parts: (r - 1) as u64 });
        }
        let (participants, files) = pairs.into_iter().unzip();
        Ok(ExchangeGroup { participants, files, round })
    }

    pub fn participants(&self) -> &[NodeId] {
        &self.participants
    }

    pub fn files(&self) -> &[Bytes] {
        &self.files
    }

    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn size(&self) -> usize {
        self.participants.len()
    }

    pub fn file_len(&self) -> usize {
        self.files[0].len()
    }

    pub fn part_len(&self) -> usize {
        self.file_len() / (self.size() - 1)
    }

    /// What participant `position` holds: every file but its own.
    pub fn holdings(&self, position: usize) -> Vec<Option<Bytes>> {
        self.files.iter().enumerate().map(|(j, f)| (j != position).then(|| f.clone())).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodedPacket {
    pub sender: NodeId,
    pub round: u64,
    pub payload: Bytes,
}

/// Slot of the part of `B_owner` keyed to co-participant `co`.
fn part_slot(owner: usize, co: usize) -> usize {
    debug_assert_ne!(owner, co);
    if co < owner {
        co
    } else {
        co - 1
    }
}

fn part(file: &Bytes, owner: usize, co: usize, part_len: usize) -> Bytes {
    let start = part_slot(owner, co) * part_len;
    file.slice(start..start + part_len)
}

/// Cuts `file` (owned by position `owner` in a group of `r`) into `r-1`
/// contiguous parts, keyed by the co-participant positions in ascending
/// order.
pub fn split_for_exchange(file: &Bytes, owner: usize, r: usize) -> Result<Vec<(usize, Bytes)>> {
    if r < 2 || owner >= r {
        return Err(Error::Parameter(format!("position {owner} in a group of {r}")));
    }
    if !file.len().is_multiple_of(r - 1) {
        return Err(Error::Alignment { len: file.len() as u64, parts: (r - 1) as u64 });
    }
    let part_len = file.len() / (r - 1);
    Ok((0..r).filter(|co| *co != owner).map(|co| (co, part(file, owner, co, part_len))).collect())
}

pub(crate) fn xor_into(acc: &mut [u8], src: &[u8]) {
    debug_assert_eq!(acc.len(), src.len());
    for (a, s) in acc.iter_mut().zip(src) {
        *a ^= s;
    }
}

fn file_len(holdings: &[Option<Bytes>]) -> Result<usize> {
    holdings.iter().flatten().map(Bytes::len).next().ok_or_else(|| Error::Protocol("participant holds no files".into()))
}

fn held(holdings: &[Option<Bytes>], j: usize) -> Result<&Bytes> {
    holdings[j].as_ref().ok_or_else(|| Error::Protocol(format!("participant is missing file {j} it should hold")))
}

/// `E_i`: XOR of the parts keyed to `sender` over every file the sender
/// holds. `holdings[sender]` is ignored.
pub fn encode_from_holdings(holdings: &[Option<Bytes>], sender: usize) -> Result<Bytes> {
    let r = holdings.len();
    if r < 2 || sender >= r {
        return Err(Error::Parameter(format!("sender position {sender} in a group of {r}")));
    }
    let part_len = file_len(holdings)? / (r - 1);
    let mut acc = BytesMut::zeroed(part_len);
    for j in (0..r).filter(|j| *j != sender) {
        xor_into(&mut acc, &part(held(holdings, j)?, j, sender, part_len));
    }
    Ok(acc.freeze())
}

/// Recovers `B_me` from the packets of the other participants, keyed by their
/// positions.
pub fn decode_from_holdings(holdings: &[Option<Bytes>], me: usize, packets: &BTreeMap<usize, Bytes>) -> Result<Bytes> {
    let r = holdings.len();
    if r < 2 || me >= r {
        return Err(Error::Parameter(format!("position {me} in a group of {r}")));
    }
    let part_len = file_len(holdings)? / (r - 1);
    let mut out = BytesMut::with_capacity(part_len * (r - 1));
    for i in (0..r).filter(|i| *i != me) {
        let packet = packets.get(&i).ok_or_else(|| Error::Protocol(format!("no packet from position {i}")))?;
        if packet.len() != part_len {
            return Err(Error::Protocol(format!(
                "packet from position {i} has {} bytes, expected {part_len}",
                packet.len()
            )));
        }
        let mut recovered = packet.to_vec();
        for j in (0..r).filter(|j| *j != me && *j != i) {
            xor_into(&mut recovered, &part(held(holdings, j)?, j, i, part_len));
        }
        out.extend_from_slice(&recovered);
    }
    Ok(out.freeze())
}

pub fn encode_packet(group: &ExchangeGroup, sender_position: usize) -> Result<CodedPacket> {
    if sender_position >= group.size() {
        return Err(Error::Parameter(format!(
            "sender position {sender_position} out of range for {} participants",
            group.size()
        )));
    }
    Ok(CodedPacket {
        sender: group.participants[sender_position],
        round: group.round,
        payload: encode_from_holdings(&group.holdings(sender_position), sender_position)?,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExchangeOutcome {
    /// `(participant, recovered file)` in participant order.
    pub delivered: Vec<(NodeId, Bytes)>,
    /// Payload bytes metered on the channel for this round.
    pub bytes_transmitted: u64,
}

/// Sorts the packets of one round by sender position.
pub(crate) fn packets_by_position(
    participants: &[NodeId],
    packets: impl IntoIterator<Item = (NodeId, Bytes)>,
) -> Result<BTreeMap<usize, Bytes>> {
    let mut out = BTreeMap::new();
    for (sender, payload) in packets {
        let pos = participants
            .iter()
            .position(|p| *p == sender)
            .ok_or_else(|| Error::Protocol(format!("packet from non-member {sender}")))?;
        if out.insert(pos, payload).is_some() {
            return Err(Error::Protocol(format!("duplicate packet from {sender}")));
        }
    }
    Ok(out)
}

/// Runs one round over `channel`, which must already have an operation open
/// that includes every participant. Each participant broadcasts once, in
/// ascending id order, then every participant decodes its file; a decode that
/// differs from the reference file is a protocol violation.
pub fn run_exchange(group: &ExchangeGroup, channel: &mut dyn BroadcastChannel) -> Result<ExchangeOutcome> {
    let before = channel.meter();
    for position in 0..group.size() {
        let packet = encode_packet(group, position)?;
        channel.broadcast(packet.sender, MessageKind::Coded, packet.round, packet.payload)?;
    }
    let mut delivered = Vec::with_capacity(group.size());
    for (me, node) in group.participants.iter().enumerate() {
        let received = channel.receive(*node, group.round, group.size() - 1)?;
        let packets = packets_by_position(&group.participants, received.into_iter().map(|p| (p.sender, p.payload)))?;
        let file = decode_from_holdings(&group.holdings(me), me, &packets)?;
        if file != group.files[me] {
            return Err(Error::Protocol(format!("node {node} decoded a corrupted file in round {}", group.round)));
        }
        delivered.push((*node, file));
    }
    Ok(ExchangeOutcome { delivered, bytes_transmitted: channel.meter() - before })
}
