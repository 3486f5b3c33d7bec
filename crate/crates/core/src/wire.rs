//! Binary framing shared by peer exchange and coordinator control traffic.
//!
//! ```text
//! +--------+---------+----------+-----------------+---------------+-----------+
//! | "SAPS" | version | msg_type | payload_len u32 | body          | crc32 u32 |
//! | 4 B    | u8 = 1  | u8       | (body bytes)    | payload_len B | over body |
//! +--------+---------+----------+-----------------+---------------+-----------+
//! ```
//!
//! Everything is little-endian. The CRC is CRC-32/ISO-HDLC over the body.

use alloc::vec::Vec;

use crate::error::{ProtocolError, Result};
use crate::sparsify::SparsePayload;

pub const MAGIC: [u8; 4] = *b"SAPS";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 10;
pub const CRC_LEN: usize = 4;
/// Bytes in a MODEL_VALUES frame besides the `8·count` values.
pub const MODEL_VALUES_OVERHEAD: usize = HEADER_LEN + 16 + CRC_LEN;
/// Bytes in a MODEL_FULL frame besides the `8·count` values.
pub const MODEL_FULL_OVERHEAD: usize = HEADER_LEN + 4 + CRC_LEN;
pub const MAX_PAYLOAD_LEN: usize = 1 << 30;
/// `peer_id` meaning "no peer this round".
pub const NO_PEER: u32 = u32::MAX;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum MessageType {
    RoundStart = 1,
    ModelValues = 2,
    RoundEnd = 3,
    ModelFull = 4,
    BandwidthReport = 5,
    Hello = 6,
    ModelRequest = 7,
    Shutdown = 8,
}

impl MessageType {
    pub fn from_u8(v: u8) -> Result<Self, ProtocolError> {
        Ok(match v {
            1 => Self::RoundStart,
            2 => Self::ModelValues,
            3 => Self::RoundEnd,
            4 => Self::ModelFull,
            5 => Self::BandwidthReport,
            6 => Self::Hello,
            7 => Self::ModelRequest,
            8 => Self::Shutdown,
            other => return Err(ProtocolError::UnknownMessageType(other)),
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::RoundStart => "ROUND_START",
            Self::ModelValues => "MODEL_VALUES",
            Self::RoundEnd => "ROUND_END",
            Self::ModelFull => "MODEL_FULL",
            Self::BandwidthReport => "BANDWIDTH_REPORT",
            Self::Hello => "HELLO",
            Self::ModelRequest => "MODEL_REQUEST",
            Self::Shutdown => "SHUTDOWN",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RoundStart {
    pub round: u64,
    pub seed: u64,
    /// [`NO_PEER`] for a self-loop round.
    pub peer_id: u32,
    pub flags: u8,
}

impl RoundStart {
    pub fn peer(&self) -> Option<usize> {
        (self.peer_id != NO_PEER).then_some(self.peer_id as usize)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RoundEnd {
    pub round: u64,
    pub worker_id: u32,
    pub local_loss: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Message {
    RoundStart(RoundStart),
    ModelValues(SparsePayload),
    RoundEnd(RoundEnd),
    ModelFull(Vec<f64>),
    BandwidthReport(Vec<(u32, f64)>),
    Hello { worker_id: u32 },
    ModelRequest,
    Shutdown,
}

impl Message {
    pub fn message_type(&self) -> MessageType {
        match self {
            Message::RoundStart(_) => MessageType::RoundStart,
            Message::ModelValues(_) => MessageType::ModelValues,
            Message::RoundEnd(_) => MessageType::RoundEnd,
            Message::ModelFull(_) => MessageType::ModelFull,
            Message::BandwidthReport(_) => MessageType::BandwidthReport,
            Message::Hello { .. } => MessageType::Hello,
            Message::ModelRequest => MessageType::ModelRequest,
            Message::Shutdown => MessageType::Shutdown,
        }
    }

    pub fn name(&self) -> &'static str {
        self.message_type().name()
    }
}

fn put_u16(buf: &mut Vec<u8>, v: u16) {
    buf.extend_from_slice(&v.to_le_bytes());
}
fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}
fn put_u64(buf: &mut Vec<u8>, v: u64) {
    buf.extend_from_slice(&v.to_le_bytes());
}
fn put_f64(buf: &mut Vec<u8>, v: f64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn count_u32(len: usize, what: &'static str) -> u32 {
    u32::try_from(len).unwrap_or_else(|_| panic!("{what} too long for a u32 count"))
}

pub fn encode(msg: &Message) -> Vec<u8> {
    let mut body = Vec::new();
    match msg {
        Message::RoundStart(rs) => {
            put_u64(&mut body, rs.round);
            put_u64(&mut body, rs.seed);
            put_u32(&mut body, rs.peer_id);
            body.push(rs.flags);
        }
        Message::ModelValues(p) => {
            body.reserve(16 + 8 * p.values.len());
            put_u64(&mut body, p.round);
            put_u32(&mut body, p.sender);
            put_u32(&mut body, count_u32(p.values.len(), "payload"));
            for &v in &p.values {
                put_f64(&mut body, v);
            }
        }
        Message::RoundEnd(re) => {
            put_u64(&mut body, re.round);
            put_u32(&mut body, re.worker_id);
            put_f64(&mut body, re.local_loss);
        }
        Message::ModelFull(values) => {
            body.reserve(4 + 8 * values.len());
            put_u32(&mut body, count_u32(values.len(), "model"));
            for &v in values {
                put_f64(&mut body, v);
            }
        }
        Message::BandwidthReport(entries) => {
            let n = u16::try_from(entries.len()).expect("bandwidth report has more than 65535 entries");
            put_u16(&mut body, n);
            for &(peer, bps) in entries {
                put_u32(&mut body, peer);
                put_f64(&mut body, bps);
            }
        }
        Message::Hello { worker_id } => put_u32(&mut body, *worker_id),
        Message::ModelRequest | Message::Shutdown => {}
    }

    let mut frame = Vec::with_capacity(HEADER_LEN + body.len() + CRC_LEN);
    frame.extend_from_slice(&MAGIC);
    frame.push(VERSION);
    frame.push(msg.message_type() as u8);
    put_u32(&mut frame, count_u32(body.len(), "frame body"));
    frame.extend_from_slice(&body);
    put_u32(&mut frame, crc32fast::hash(&body));
    frame
}

/// Validates the fixed header and returns the message type plus the number of
/// bytes that follow it (body and CRC). Stream readers use this to size the
/// second read.
pub fn parse_header(header: &[u8]) -> Result<(MessageType, usize), ProtocolError> {
    if header.len() < HEADER_LEN {
        return Err(ProtocolError::Truncated {
            needed: HEADER_LEN,
            available: header.len(),
        });
    }
    let magic: [u8; 4] = header[0..4].try_into().expect("slice of 4");
    if magic != MAGIC {
        return Err(ProtocolError::BadMagic(magic));
    }
    if header[4] != VERSION {
        return Err(ProtocolError::BadVersion(header[4]));
    }
    let ty = MessageType::from_u8(header[5])?;
    let payload_len = u32::from_le_bytes(header[6..10].try_into().expect("slice of 4")) as usize;
    if payload_len > MAX_PAYLOAD_LEN {
        return Err(ProtocolError::FrameTooLarge(payload_len));
    }
    Ok((ty, payload_len + CRC_LEN))
}

struct Reader<'a> {
    buf: &'a [u8],
    what: &'static str,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ProtocolError> {
        if self.buf.len() < n {
            return Err(ProtocolError::Malformed { what: self.what });
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }
    fn u8(&mut self) -> Result<u8, ProtocolError> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16, ProtocolError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2")))
    }
    fn u32(&mut self) -> Result<u32, ProtocolError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4")))
    }
    fn u64(&mut self) -> Result<u64, ProtocolError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8")))
    }
    fn f64(&mut self) -> Result<f64, ProtocolError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8")))
    }
    fn f64s(&mut self, count: usize) -> Result<Vec<f64>, ProtocolError> {
        let raw = self.take(count.checked_mul(8).ok_or(ProtocolError::Malformed { what: self.what })?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8")))
            .collect())
    }
    fn finish(self) -> Result<(), ProtocolError> {
        if self.buf.is_empty() {
            Ok(())
        } else {
            Err(ProtocolError::Malformed { what: self.what })
        }
    }
}

/// Decodes exactly one frame; trailing bytes are rejected.
pub fn decode(frame: &[u8]) -> Result<Message, ProtocolError> {
    let (ty, rest_len) = parse_header(frame)?;
    let total = HEADER_LEN + rest_len;
    if frame.len() < total {
        return Err(ProtocolError::Truncated {
            needed: total,
            available: frame.len(),
        });
    }
    if frame.len() > total {
        return Err(ProtocolError::Malformed { what: "frame (trailing bytes)" });
    }
    let body = &frame[HEADER_LEN..total - CRC_LEN];
    let expected = u32::from_le_bytes(frame[total - CRC_LEN..total].try_into().expect("4"));
    let actual = crc32fast::hash(body);
    if expected != actual {
        return Err(ProtocolError::CrcMismatch { expected, actual });
    }

    let mut r = Reader { buf: body, what: ty.name() };
    let msg = match ty {
        MessageType::RoundStart => Message::RoundStart(RoundStart {
            round: r.u64()?,
            seed: r.u64()?,
            peer_id: r.u32()?,
            flags: r.u8()?,
        }),
        MessageType::ModelValues => {
            let round = r.u64()?;
            let sender = r.u32()?;
            let count = r.u32()? as usize;
            let values = r.f64s(count)?;
            Message::ModelValues(SparsePayload { round, sender, values })
        }
        MessageType::RoundEnd => Message::RoundEnd(RoundEnd {
            round: r.u64()?,
            worker_id: r.u32()?,
            local_loss: r.f64()?,
        }),
        MessageType::ModelFull => {
            let count = r.u32()? as usize;
            Message::ModelFull(r.f64s(count)?)
        }
        MessageType::BandwidthReport => {
            let n = r.u16()? as usize;
            let mut entries = Vec::with_capacity(n);
            for _ in 0..n {
                entries.push((r.u32()?, r.f64()?));
            }
            Message::BandwidthReport(entries)
        }
        MessageType::Hello => Message::Hello { worker_id: r.u32()? },
        MessageType::ModelRequest => Message::ModelRequest,
        MessageType::Shutdown => Message::Shutdown,
    };
    r.finish()?;
    Ok(msg)
}

pub fn encode_payload(p: &SparsePayload) -> Vec<u8> {
    encode(&Message::ModelValues(p.clone()))
}

pub fn decode_payload(bytes: &[u8]) -> Result<SparsePayload> {
    match decode(bytes)? {
        Message::ModelValues(p) => Ok(p),
        other => Err(ProtocolError::UnexpectedMessage {
            expected: MessageType::ModelValues.name(),
            got: other.name(),
        }
        .into()),
    }
}
