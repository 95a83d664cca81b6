//! Wire framing: `len:u32be | type:u8 | sender:u64be | round:u64be | payload`.
//! `len` counts payload bytes only.

use std::io::{self, Read};

use bytes::{BufMut, Bytes, BytesMut};

use super::{MessageKind, Packet};
use crate::error::{Error, Result};
use crate::index::NodeId;

pub const HEADER_LEN: usize = 4 + 1 + 8 + 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameHeader {
    pub payload_len: u32,
    pub kind: MessageKind,
    pub sender: NodeId,
    pub round: u64,
}

impl FrameHeader {
    pub fn parse(buf: &[u8; HEADER_LEN]) -> Result<Self> {
        let payload_len = u32::from_be_bytes(buf[0..4].try_into().unwrap());
        let kind = MessageKind::from_wire(buf[4])
            .ok_or_else(|| Error::Transport(format!("unknown frame type {:#04x}", buf[4])))?;
        let sender = NodeId(u64::from_be_bytes(buf[5..13].try_into().unwrap()));
        let round = u64::from_be_bytes(buf[13..21].try_into().unwrap());
        Ok(FrameHeader { payload_len, kind, sender, round })
    }
}

pub fn encode_frame(packet: &Packet) -> Result<Bytes> {
    let len = u32::try_from(packet.payload.len())
        .map_err(|_| Error::Transport(format!("payload of {} bytes does not fit a frame", packet.payload.len())))?;
    let mut buf = BytesMut::with_capacity(HEADER_LEN + packet.payload.len());
    buf.put_u32(len);
    buf.put_u8(packet.kind.wire());
    buf.put_u64(packet.sender.0);
    buf.put_u64(packet.round);
    buf.put_slice(&packet.payload);
    Ok(buf.freeze())
}

/// Parses one complete frame. Trailing bytes are an error.
pub fn decode_frame(frame: &[u8]) -> Result<Packet> {
    if frame.len() < HEADER_LEN {
        return Err(Error::Transport(format!("short frame of {} bytes", frame.len())));
    }
    let header = FrameHeader::parse(frame[..HEADER_LEN].try_into().unwrap())?;
    let body = &frame[HEADER_LEN..];
    if body.len() != header.payload_len as usize {
        return Err(Error::Transport(format!(
            "frame announces {} payload bytes, carries {}",
            header.payload_len,
            body.len()
        )));
    }
    Ok(Packet { kind: header.kind, sender: header.sender, round: header.round, payload: Bytes::copy_from_slice(body) })
}

/// Reads one frame from a stream. `Ok(None)` on a clean end of stream.
pub fn read_frame(reader: &mut impl Read) -> Result<Option<Packet>> {
    let mut header = [0u8; HEADER_LEN];
    match reader.read_exact(&mut header) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e.into()),
    }
    let header = FrameHeader::parse(&header)?;
    let mut payload = vec![0u8; header.payload_len as usize];
    reader.read_exact(&mut payload)?;
    Ok(Some(Packet { kind: header.kind, sender: header.sender, round: header.round, payload: payload.into() }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bit_exact_layout() {
        let packet = Packet {
            kind: MessageKind::Coded,
            sender: NodeId(0x0102030405060708),
            round: 0x1112131415161718,
            payload: Bytes::from_static(&[0xaa, 0xbb, 0xcc]),
        };
        let frame = encode_frame(&packet).unwrap();
        assert_eq!(
            frame.as_ref(),
            &[
                0, 0, 0, 3,    // length
                0x01, // type
                1, 2, 3, 4, 5, 6, 7, 8, // sender
                0x11, 0x12, 0x13, 0x14, 0x15, 0x16, 0x17, 0x18, // round
                0xaa, 0xbb, 0xcc,
            ]
        );
        assert_eq!(decode_frame(&frame).unwrap(), packet);
    }

    #[test]
    fn type_bytes() {
        assert_eq!(MessageKind::Plain.wire(), 0x02);
        assert_eq!(MessageKind::Barrier.wire(), 0x03);
        assert_eq!(MessageKind::from_wire(0x04), None);
    }

    #[test]
    fn rejects_bad_frames() {
        assert!(decode_frame(&[0, 0, 0]).is_err());
        let mut frame = encode_frame(&Packet {
            kind: MessageKind::Plain,
            sender: NodeId(1),
            round: 0,
            payload: Bytes::from_static(b"xy"),
        })
        .unwrap()
        .to_vec();
        frame.pop();
        assert!(decode_frame(&frame).is_err());
        frame[4] = 0x09;
        assert!(decode_frame(&frame).is_err());
    }

    #[test]
    fn stream_read() {
        let a = Packet { kind: MessageKind::Plain, sender: NodeId(3), round: 7, payload: Bytes::new() };
        let b = Packet { kind: MessageKind::Coded, sender: NodeId(4), round: 8, payload: Bytes::from_static(b"hi") };
        let mut wire = encode_frame(&a).unwrap().to_vec();
        wire.extend_from_slice(&encode_frame(&b).unwrap());
        let mut cursor = io::Cursor::new(wire);
        assert_eq!(read_frame(&mut cursor).unwrap(), Some(a));
        assert_eq!(read_frame(&mut cursor).unwrap(), Some(b));
        assert_eq!(read_frame(&mut cursor).unwrap(), None);
    }
}
