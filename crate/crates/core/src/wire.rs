//! Framing for the external predictor protocol.
//!
//! Every frame is `length u32 | type u8 | body`, where `length` counts the
//! type byte and the body. All integers are little-endian.
//!
//! | type | frame          | body                                                      |
//! |------|----------------|-----------------------------------------------------------|
//! | 0    | handshake      | `"HNLP"`, version u16, identity (37 bytes), grid_k u8, vocab u32 |
//! | 1    | request        | id u32, count u32, count x u32 context token ids          |
//! | 2    | response       | id u32, vocab x i32 scaled logits                         |
//! | 3    | error          | code u16, UTF-8 message (rest of frame)                   |
//! | 4    | tokenize       | id u32, raw bytes (rest of frame)                         |
//! | 5    | tokens         | id u32, accepted u8, count u32, count x u32               |
//! | 6    | detokenize     | id u32, count u32, count x u32                            |
//! | 7    | bytes          | id u32, raw bytes (rest of frame)                         |
//!
//! The client opens with a handshake carrying its grid precision (identity
//! zeroed, vocab 0); the server answers with its own handshake or an error.

use std::io::{self, Read, Write};

use crate::error::{Error, Result};
use crate::predictor::{PredictorIdentity, PredictorKind};

pub const WIRE_MAGIC: [u8; 4] = *b"HNLP";
pub const WIRE_VERSION: u16 = 1;
/// Refuse frames larger than this.
pub const MAX_FRAME: u32 = 1 << 28;

pub const ERR_GRID_MISMATCH: u16 = 1;
pub const ERR_CONTEXT_TOO_LONG: u16 = 2;
pub const ERR_MALFORMED: u16 = 3;
pub const ERR_UNSUPPORTED: u16 = 4;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Handshake {
    pub version: u16,
    pub identity: PredictorIdentity,
    pub grid_k: u8,
    pub vocab_size: u32,
}

impl Handshake {
    /// Opening frame sent by the primary.
    pub fn client(grid_k: u8) -> Self {
        Self {
            version: WIRE_VERSION,
            identity: PredictorIdentity { kind: PredictorKind::External, param_hash: [0; 32], vocab_size: 0 },
            grid_k,
            vocab_size: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Frame {
    Handshake(Handshake),
    Request { id: u32, context: Vec<u32> },
    Response { id: u32, logits: Vec<i32> },
    Error { code: u16, message: String },
    Tokenize { id: u32, bytes: Vec<u8> },
    Tokens { id: u32, tokens: Option<Vec<u32>> },
    Detokenize { id: u32, tokens: Vec<u32> },
    Bytes { id: u32, bytes: Vec<u8> },
}

fn put_u32s(out: &mut Vec<u8>, v: &[u32]) {
    out.extend_from_slice(&(v.len() as u32).to_le_bytes());
    for x in v {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

impl Frame {
    pub fn type_byte(&self) -> u8 {
        match self {
            Frame::Handshake(_) => 0,
            Frame::Request { .. } => 1,
            Frame::Response { .. } => 2,
            Frame::Error { .. } => 3,
            Frame::Tokenize { .. } => 4,
            Frame::Tokens { .. } => 5,
            Frame::Detokenize { .. } => 6,
            Frame::Bytes { .. } => 7,
        }
    }

    /// Full frame including the length prefix.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = vec![0, 0, 0, 0, self.type_byte()];
        match self {
            Frame::Handshake(h) => {
                out.extend_from_slice(&WIRE_MAGIC);
                out.extend_from_slice(&h.version.to_le_bytes());
                out.extend_from_slice(&h.identity.to_bytes());
                out.push(h.grid_k);
                out.extend_from_slice(&h.vocab_size.to_le_bytes());
            }
            Frame::Request { id, context } => {
                out.extend_from_slice(&id.to_le_bytes());
                put_u32s(&mut out, context);
            }
            Frame::Response { id, logits } => {
                out.extend_from_slice(&id.to_le_bytes());
                for v in logits {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
            Frame::Error { code, message } => {
                out.extend_from_slice(&code.to_le_bytes());
                out.extend_from_slice(message.as_bytes());
            }
            Frame::Tokenize { id, bytes } | Frame::Bytes { id, bytes } => {
                out.extend_from_slice(&id.to_le_bytes());
                out.extend_from_slice(bytes);
            }
            Frame::Tokens { id, tokens } => {
                out.extend_from_slice(&id.to_le_bytes());
                out.push(tokens.is_some() as u8);
                put_u32s(&mut out, tokens.as_deref().unwrap_or(&[]));
            }
            Frame::Detokenize { id, tokens } => {
                out.extend_from_slice(&id.to_le_bytes());
                put_u32s(&mut out, tokens);
            }
        }
        let len = (out.len() - 4) as u32;
        out[..4].copy_from_slice(&len.to_le_bytes());
        out
    }

    /// Parses a frame from its type byte and body.
    pub fn decode(kind: u8, body: &[u8]) -> Result<Self> {
        let mut c = Cursor { buf: body };
        let frame = match kind {
            0 => {
                if c.take(4)? != WIRE_MAGIC {
                    return Err(Error::Wire("bad handshake magic".into()));
                }
                let version = c.u16()?;
                let id: [u8; PredictorIdentity::ENCODED_LEN] =
                    c.take(PredictorIdentity::ENCODED_LEN)?.try_into().unwrap();
                let identity =
                    PredictorIdentity::decode(&id).ok_or_else(|| Error::Wire("unknown predictor kind".into()))?;
                let grid_k = c.take(1)?[0];
                let vocab_size = c.u32()?;
                Frame::Handshake(Handshake { version, identity, grid_k, vocab_size })
            }
            1 => Frame::Request { id: c.u32()?, context: c.u32s()? },
            2 => {
                let id = c.u32()?;
                if c.buf.len() & 3 != 0 {
                    return Err(Error::Wire("response length not a multiple of 4".into()));
                }
                let logits = c.rest().chunks_exact(4).map(|b| i32::from_le_bytes(b.try_into().unwrap())).collect();
                Frame::Response { id, logits }
            }
            3 => {
                let code = c.u16()?;
                Frame::Error { code, message: String::from_utf8_lossy(c.rest()).into_owned() }
            }
            4 => Frame::Tokenize { id: c.u32()?, bytes: c.rest().to_vec() },
            5 => {
                let id = c.u32()?;
                let accepted = c.take(1)?[0];
                let tokens = c.u32s()?;
                Frame::Tokens { id, tokens: (accepted != 0).then_some(tokens) }
            }
            6 => Frame::Detokenize { id: c.u32()?, tokens: c.u32s()? },
            7 => Frame::Bytes { id: c.u32()?, bytes: c.rest().to_vec() },
            k => return Err(Error::Wire(format!("unknown frame type {k}"))),
        };
        if !c.buf.is_empty() {
            return Err(Error::Wire("trailing bytes in frame".into()));
        }
        Ok(frame)
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() < n {
            return Err(Error::Wire("frame body too short".into()));
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u32s(&mut self) -> Result<Vec<u32>> {
        let n = self.u32()? as usize;
        if !matches!(n.checked_mul(4), Some(b) if b <= self.buf.len()) {
            return Err(Error::Wire("token count exceeds frame".into()));
        }
        Ok(self.take(4 * n)?.chunks_exact(4).map(|b| u32::from_le_bytes(b.try_into().unwrap())).collect())
    }

    fn rest(&mut self) -> &'a [u8] {
        std::mem::take(&mut self.buf)
    }
}

pub fn write_frame<W: Write>(w: &mut W, frame: &Frame) -> io::Result<()> {
    w.write_all(&frame.encode())?;
    w.flush()
}

/// Reads one frame; `Ok(None)` on clean end of stream before a frame starts.
pub fn read_frame<R: Read>(r: &mut R) -> Result<Option<Frame>> {
    let mut len = [0u8; 4];
    match r.read_exact(&mut len[..1]) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e.into()),
    }
    r.read_exact(&mut len[1..]).map_err(|_| Error::Wire("truncated frame length".into()))?;
    let len = u32::from_le_bytes(len);
    if len == 0 || len > MAX_FRAME {
        return Err(Error::Wire(format!("frame length {len} out of range")));
    }
    let mut buf = vec![0u8; len as usize];
    r.read_exact(&mut buf).map_err(|_| Error::Wire("truncated frame body".into()))?;
    Frame::decode(buf[0], &buf[1..]).map(Some)
}
