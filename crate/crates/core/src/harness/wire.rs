//! Binary message encoding.
//!
//! Frame: `u32` big-endian payload length, then the payload:
//!
//! ```text
//! u8 kind | u32 LE round | u32 LE client id | fields...
//! field = u8 tag | u32 LE element count | count x f64 LE
//! ```
//!
//! Kinds 0 and 1 carry the strategy messages; 2-4 are session control used
//! by the TCP transport. Fields are written in ascending tag order.

use std::io::{self, Read, Write};

use thiserror::Error;

use crate::model::{DiagCurvature, ParamVector};
use crate::strategy::{ClientMsg, GlobalMsg};

pub const SERVER_ID: u32 = 0xFFFF_FFFF;
/// Largest accepted payload (256 MiB).
pub const MAX_PAYLOAD: usize = 256 << 20;

pub const KIND_GLOBAL: u8 = 0;
pub const KIND_CLIENT: u8 = 1;
pub const KIND_HELLO: u8 = 2;
pub const KIND_BEGIN: u8 = 3;
pub const KIND_FINISH: u8 = 4;

pub const TAG_W: u8 = 1;
pub const TAG_PRECISION: u8 = 2;
pub const TAG_V: u8 = 3;
pub const TAG_SOFT_LABELS: u8 = 4;
pub const TAG_N_K: u8 = 5;
pub const TAG_SEED: u8 = 6;

/// Bytes of frame length, kind, round and client id.
pub const HEADER_BYTES: usize = 4 + 1 + 4 + 4;
/// Bytes of tag and count preceding each field's values.
pub const FIELD_OVERHEAD: usize = 1 + 4;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum WireError {
    #[error("truncated message: needed {needed} bytes, {available} available")]
    Truncated { needed: usize, available: usize },
    #[error("unknown message kind {0}")]
    UnknownKind(u8),
    #[error("unknown field tag {0}")]
    UnknownTag(u8),
    #[error("field tag {0} appears twice")]
    DuplicateTag(u8),
    #[error("message lacks required field {0}")]
    MissingField(&'static str),
    #[error("length {0} exceeds the limit")]
    LengthOverflow(usize),
    #[error("{0} trailing bytes after message")]
    TrailingBytes(usize),
    #[error("field {tag} has {count} values, expected {expected}")]
    BadCount { tag: u8, count: usize, expected: usize },
}

/// Every message that crosses the wire.
#[derive(Clone, Debug, PartialEq)]
pub enum WireMsg {
    Global(GlobalMsg),
    Client(ClientMsg),
    /// Client registration with its shard size.
    Hello { client_id: u32, n_k: u64 },
    /// Start of a run for `seeds[seed_index]`.
    Begin { seed_index: u32 },
    /// End of the current run.
    Finish,
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn new(kind: u8, round: u32, client: u32) -> Self {
        let mut buf = Vec::with_capacity(64);
        buf.extend_from_slice(&[0; 4]);
        buf.push(kind);
        buf.extend_from_slice(&round.to_le_bytes());
        buf.extend_from_slice(&client.to_le_bytes());
        Writer { buf }
    }

    fn field(&mut self, tag: u8, values: Option<&[f64]>) {
        let Some(values) = values else { return };
        self.buf.push(tag);
        self.buf.extend_from_slice(&(values.len() as u32).to_le_bytes());
        for v in values {
            self.buf.extend_from_slice(&v.to_le_bytes());
        }
    }

    fn finish(mut self) -> Vec<u8> {
        let len = (self.buf.len() - 4) as u32;
        self.buf[..4].copy_from_slice(&len.to_be_bytes());
        self.buf
    }
}

/// Encodes a message as one frame (length prefix included).
pub fn encode_msg(msg: &WireMsg) -> Vec<u8> {
    match msg {
        WireMsg::Global(g) => {
            let mut w = Writer::new(KIND_GLOBAL, g.round, SERVER_ID);
            w.field(TAG_W, Some(&g.w_g));
            w.field(TAG_PRECISION, g.s_g.as_deref());
            w.field(TAG_SOFT_LABELS, g.soft_labels.as_deref());
            w.finish()
        }
        WireMsg::Client(c) => {
            let mut w = Writer::new(KIND_CLIENT, c.round, c.client_id);
            w.field(TAG_W, c.w.as_deref());
            w.field(TAG_PRECISION, c.precision.as_deref());
            w.field(TAG_V, c.v.as_deref());
            w.field(TAG_SOFT_LABELS, c.soft_labels.as_deref());
            w.finish()
        }
        WireMsg::Hello { client_id, n_k } => {
            let mut w = Writer::new(KIND_HELLO, 0, *client_id);
            w.field(TAG_N_K, Some(&[*n_k as f64]));
            w.finish()
        }
        WireMsg::Begin { seed_index } => {
            let mut w = Writer::new(KIND_BEGIN, 0, SERVER_ID);
            w.field(TAG_SEED, Some(&[f64::from(*seed_index)]));
            w.finish()
        }
        WireMsg::Finish => Writer::new(KIND_FINISH, 0, SERVER_ID).finish(),
    }
}

fn take<'a>(bytes: &'a [u8], at: &mut usize, n: usize) -> Result<&'a [u8], WireError> {
    let end = at.checked_add(n).ok_or(WireError::LengthOverflow(n))?;
    let s = bytes.get(*at..end).ok_or(WireError::Truncated {
        needed: end,
        available: bytes.len(),
    })?;
    *at = end;
    Ok(s)
}

fn read_u32_le(bytes: &[u8], at: &mut usize) -> Result<u32, WireError> {
    let s = take(bytes, at, 4)?;
    Ok(u32::from_le_bytes([s[0], s[1], s[2], s[3]]))
}

/// Decodes one complete frame (length prefix included).
pub fn decode_msg(frame: &[u8]) -> Result<WireMsg, WireError> {
    let mut at = 0;
    let len_bytes = take(frame, &mut at, 4)?;
    let len = u32::from_be_bytes([len_bytes[0], len_bytes[1], len_bytes[2], len_bytes[3]]) as usize;
    if len > MAX_PAYLOAD {
        return Err(WireError::LengthOverflow(len));
    }
    let available = frame.len() - 4;
    if available < len {
        return Err(WireError::Truncated {
            needed: len + 4,
            available: frame.len(),
        });
    }
    if available > len {
        return Err(WireError::TrailingBytes(available - len));
    }
    decode_payload(&frame[4..])
}

/// Decodes a payload without its length prefix.
pub fn decode_payload(p: &[u8]) -> Result<WireMsg, WireError> {
    let mut at = 0;
    let kind = take(p, &mut at, 1)?[0];
    let round = read_u32_le(p, &mut at)?;
    let client = read_u32_le(p, &mut at)?;
    let mut fields: [Option<Vec<f64>>; 7] = Default::default();
    while at < p.len() {
        let tag = take(p, &mut at, 1)?[0];
        let count = read_u32_le(p, &mut at)? as usize;
        let nbytes = count.checked_mul(8).ok_or(WireError::LengthOverflow(count))?;
        if nbytes > p.len() - at {
            return Err(WireError::Truncated {
                needed: at + nbytes,
                available: p.len(),
            });
        }
        let raw = take(p, &mut at, nbytes)?;
        let values = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        let slot = fields
            .get_mut(usize::from(tag))
            .filter(|_| (TAG_W..=TAG_SEED).contains(&tag))
            .ok_or(WireError::UnknownTag(tag))?;
        if slot.replace(values).is_some() {
            return Err(WireError::DuplicateTag(tag));
        }
    }
    let allow = |allowed: &[u8], fields: &[Option<Vec<f64>>; 7]| -> Result<(), WireError> {
        match (1..7u8).find(|t| fields[usize::from(*t)].is_some() && !allowed.contains(t)) {
            Some(t) => Err(WireError::UnknownTag(t)),
            None => Ok(()),
        }
    };
    let scalar = |v: Option<Vec<f64>>, tag: u8, name: &'static str| -> Result<f64, WireError> {
        let v = v.ok_or(WireError::MissingField(name))?;
        match v.as_slice() {
            [x] => Ok(*x),
            _ => Err(WireError::BadCount {
                tag,
                count: v.len(),
                expected: 1,
            }),
        }
    };
    match kind {
        KIND_GLOBAL => {
            allow(&[TAG_W, TAG_PRECISION, TAG_SOFT_LABELS], &fields)?;
            let [_, w, s, _, soft, _, _] = fields;
            Ok(WireMsg::Global(GlobalMsg {
                round,
                w_g: ParamVector(w.ok_or(WireError::MissingField("w"))?),
                s_g: s.map(DiagCurvature),
                soft_labels: soft,
            }))
        }
        KIND_CLIENT => {
            allow(&[TAG_W, TAG_PRECISION, TAG_V, TAG_SOFT_LABELS], &fields)?;
            let [_, w, s, v, soft, _, _] = fields;
            Ok(WireMsg::Client(ClientMsg {
                client_id: client,
                round,
                v: v.map(ParamVector),
                precision: s.map(DiagCurvature),
                soft_labels: soft,
                w: w.map(ParamVector),
            }))
        }
        KIND_HELLO => {
            allow(&[TAG_N_K], &fields)?;
            let [_, _, _, _, _, n, _] = fields;
            Ok(WireMsg::Hello {
                client_id: client,
                n_k: scalar(n, TAG_N_K, "n_k")? as u64,
            })
        }
        KIND_BEGIN => {
            allow(&[TAG_SEED], &fields)?;
            let [_, _, _, _, _, _, s] = fields;
            Ok(WireMsg::Begin {
                seed_index: scalar(s, TAG_SEED, "seed")? as u32,
            })
        }
        KIND_FINISH => {
            allow(&[], &fields)?;
            Ok(WireMsg::Finish)
        }
        other => Err(WireError::UnknownKind(other)),
    }
}

/// Writes one framed message.
pub fn write_msg<W: Write>(w: &mut W, msg: &WireMsg) -> io::Result<()> {
    w.write_all(&encode_msg(msg))?;
    w.flush()
}

/// Reads one framed message. `Ok(None)` on a clean end of stream.
pub fn read_msg<R: Read>(r: &mut R) -> crate::Result<Option<WireMsg>> {
    let mut len = [0u8; 4];
    match r.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e.into()),
    }
    let n = u32::from_be_bytes(len) as usize;
    if n > MAX_PAYLOAD {
        return Err(WireError::LengthOverflow(n).into());
    }
    let mut payload = vec![0u8; n];
    r.read_exact(&mut payload)?;
    Ok(Some(decode_payload(&payload)?))
}

/// Encoded size of a frame with fields of the given lengths.
pub fn frame_len(field_lengths: &[usize]) -> usize {
    HEADER_BYTES + field_lengths.iter().map(|n| FIELD_OVERHEAD + 8 * n).sum::<usize>()
}
