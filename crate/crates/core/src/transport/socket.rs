use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{BufReader, Write};
use std::net::{Shutdown, TcpListener, TcpStream};
use std::sync::{Arc, Condvar, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use bytes::Bytes;

use super::frame::{encode_frame, read_frame};
use super::{BroadcastChannel, DeliveryReceipt, LogEntry, MessageKind, Packet, TransmissionLog};
use crate::error::{Error, Result};
use crate::index::NodeId;

/// Sender id stamped on barrier frames; never a storage node.
const COORDINATOR: NodeId = NodeId(u64::MAX);

#[derive(Default)]
struct InboxState {
    rounds: HashMap<u64, Vec<Packet>>,
    barriers: u64,
    failure: Option<String>,
    closed: bool,
}

#[derive(Default)]
struct Inbox {
    state: Mutex<InboxState>,
    ready: Condvar,
}

struct Link {
    writer: TcpStream,
    inbox: Arc<Inbox>,
    reader: Option<JoinHandle<()>>,
    barriers_sent: u64,
}

impl Link {
    fn open(node: NodeId) -> Result<Link> {
        let listener = TcpListener::bind(("127.0.0.1", 0))?;
        let writer = TcpStream::connect(listener.local_addr()?)?;
        writer.set_nodelay(true)?;
        let (stream, _) = listener.accept()?;
        let inbox = Arc::new(Inbox::default());
        let sink = Arc::clone(&inbox);
        let reader = thread::Builder::new().name(format!("bus-node-{node}")).spawn(move || pump(stream, &sink))?;
        Ok(Link { writer, inbox, reader: Some(reader), barriers_sent: 0 })
    }

    fn close(&mut self) {
        let _ = self.writer.shutdown(Shutdown::Write);
        if let Some(reader) = self.reader.take() {
            let _ = reader.join();
        }
    }
}

fn pump(stream: TcpStream, inbox: &Inbox) {
    let mut reader = BufReader::new(stream);
    loop {
        let next = read_frame(&mut reader);
        let mut state = inbox.state.lock().unwrap();
        match next {
            Ok(Some(packet)) if packet.kind == MessageKind::Barrier => state.barriers += 1,
            Ok(Some(packet)) => state.rounds.entry(packet.round).or_default().push(packet),
            Ok(None) => state.closed = true,
            Err(e) => state.failure = Some(e.to_string()),
        }
        let done = state.closed || state.failure.is_some();
        drop(state);
        inbox.ready.notify_all();
        if done {
            return;
        }
    }
}

/// Loopback TCP bus. Each participant owns an inbound connection drained by a
/// reader thread; a broadcast writes the same frame to every other
/// participant's connection.
pub struct SocketChannel {
    participants: BTreeSet<NodeId>,
    operation_id: u64,
    links: BTreeMap<NodeId, Link>,
    log: TransmissionLog,
    timeout: Duration,
}

impl Default for SocketChannel {
    fn default() -> Self {
        Self::new()
    }
}

impl SocketChannel {
    pub fn new() -> Self {
        Self::with_timeout(Duration::from_secs(30))
    }

    /// `timeout` bounds every blocking receive.
    pub fn with_timeout(timeout: Duration) -> Self {
        SocketChannel {
            participants: BTreeSet::new(),
            operation_id: 0,
            links: BTreeMap::new(),
            log: TransmissionLog::default(),
            timeout,
        }
    }

    fn close_links(&mut self) {
        for link in self.links.values_mut() {
            link.close();
        }
        self.links.clear();
    }

    fn wait<T>(&self, inbox: &Inbox, what: &str, mut ready: impl FnMut(&mut InboxState) -> Option<T>) -> Result<T> {
        let deadline = Instant::now() + self.timeout;
        let mut state = inbox.state.lock().unwrap();
        loop {
            if let Some(out) = ready(&mut state) {
                return Ok(out);
            }
            if let Some(failure) = &state.failure {
                return Err(Error::Transport(failure.clone()));
            }
            if state.closed {
                return Err(Error::Transport(format!("connection closed while waiting for {what}")));
            }
            let now = Instant::now();
            if now >= deadline {
                return Err(Error::Transport(format!("timed out waiting for {what}")));
            }
            state = inbox.ready.wait_timeout(state, deadline - now).unwrap().0;
        }
    }
}

impl Drop for SocketChannel {
    fn drop(&mut self) {
        self.close_links();
    }
}

impl BroadcastChannel for SocketChannel {
    fn begin_operation(&mut self, operation_id: u64, participants: &BTreeSet<NodeId>) -> Result<()> {
        self.close_links();
        for node in participants {
            self.links.insert(*node, Link::open(*node)?);
        }
        self.participants = participants.clone();
        self.operation_id = operation_id;
        Ok(())
    }

    fn broadcast(&mut self, sender: NodeId, kind: MessageKind, round: u64, payload: Bytes) -> Result<DeliveryReceipt> {
        if !self.participants.contains(&sender) {
            return Err(Error::Parameter(format!("node {sender} is not on the bus")));
        }
        let payload_bytes = payload.len() as u64;
        let frame = encode_frame(&Packet { kind, sender, round, payload })?;
        let mut recipients = Vec::with_capacity(self.links.len());
        for (node, link) in self.links.iter_mut().filter(|(n, _)| **n != sender) {
            link.writer
                .write_all(&frame)
                .map_err(|e| Error::Transport(format!("delivery to node {node} failed: {e}")))?;
            recipients.push(*node);
        }
        self.log.push(LogEntry { operation_id: self.operation_id, sender, round, kind, payload_bytes });
        Ok(DeliveryReceipt { recipients, payload_bytes })
    }

    fn receive(&self, receiver: NodeId, round: u64, expected: usize) -> Result<Vec<Packet>> {
        let link =
            self.links.get(&receiver).ok_or_else(|| Error::Parameter(format!("node {receiver} is not on the bus")))?;
        self.wait(&link.inbox, &format!("round {round} at node {receiver}"), |state| {
            let have = state.rounds.get(&round).map_or(0, Vec::len);
            (have >= expected).then(|| state.rounds.remove(&round).unwrap_or_default())
        })
    }

    fn finish_operation(&mut self) -> Result<()> {
        let barrier = encode_frame(&Packet {
            kind: MessageKind::Barrier,
            sender: COORDINATOR,
            round: self.operation_id,
            payload: Bytes::new(),
        })?;
        for (node, link) in self.links.iter_mut() {
            link.writer
                .write_all(&barrier)
                .map_err(|e| Error::Transport(format!("barrier to node {node} failed: {e}")))?;
            link.barriers_sent += 1;
        }
        for (node, link) in &self.links {
            let target = link.barriers_sent;
            self.wait(&link.inbox, &format!("barrier at node {node}"), |state| {
                (state.barriers >= target).then(|| state.rounds.clear())
            })?;
        }
        Ok(())
    }

    fn participants(&self) -> &BTreeSet<NodeId> {
        &self.participants
    }

    fn log(&self) -> &TransmissionLog {
        &self.log
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::index::id_range;

    #[test]
    fn round_trip_over_loopback() {
        let mut bus = SocketChannel::with_timeout(Duration::from_secs(5));
        bus.begin_operation(3, &id_range(1, 3)).unwrap();
        let receipt = bus.broadcast(NodeId(1), MessageKind::Coded, 9, Bytes::from(vec![5u8; 10])).unwrap();
        assert_eq!(receipt.recipients, [NodeId(2), NodeId(3)]);
        bus.broadcast(NodeId(3), MessageKind::Coded, 9, Bytes::from_static(b"abc")).unwrap();
        let at_two = bus.receive(NodeId(2), 9, 2).unwrap();
        assert_eq!(at_two.len(), 2);
        let at_one = bus.receive(NodeId(1), 9, 1).unwrap();
        assert_eq!(at_one[0].payload.as_ref(), b"abc");
        assert_eq!(bus.meter(), 13);
        bus.finish_operation().unwrap();
        assert!(bus.log().entries().iter().all(|e| e.operation_id == 3));
    }

    #[test]
    fn missing_packets_time_out() {
        let mut bus = SocketChannel::with_timeout(Duration::from_millis(50));
        bus.begin_operation(1, &id_range(1, 2)).unwrap();
        assert!(matches!(bus.receive(NodeId(1), 0, 1), Err(Error::Transport(_))));
    }

    #[test]
    fn participant_set_can_change() {
        let mut bus = SocketChannel::new();
        bus.begin_operation(1, &id_range(1, 3)).unwrap();
        bus.finish_operation().unwrap();
        bus.begin_operation(2, &id_range(2, 4)).unwrap();
        assert!(bus.broadcast(NodeId(1), MessageKind::Plain, 0, Bytes::new()).is_err());
        bus.broadcast(NodeId(4), MessageKind::Plain, 0, Bytes::new()).unwrap();
        assert_eq!(bus.receive(NodeId(2), 0, 1).unwrap().len(), 1);
        bus.finish_operation().unwrap();
    }
}
