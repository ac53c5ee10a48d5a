//! Client for an out-of-process predictor speaking the wire protocol.

use std::io::{BufReader, BufWriter, Read, Write};
use std::net::TcpStream;
use std::path::PathBuf;
use std::process::{Child, Command, Stdio};
use std::str::FromStr;
use std::sync::{Arc, Mutex};

use super::{FixtureRecorder, ModelParams, Predictor, PredictorIdentity, PredictorSession, TokenWindow};
use crate::coder::CodingDistribution;
use crate::error::{Error, Result};
use crate::quant::{distribution_from_quantized, QuantizedLogits};
use crate::wire::{read_frame, write_frame, Frame, Handshake, WIRE_VERSION};

/// Fallback endpoint when `external` is given without an address.
pub const ENDPOINT_ENV: &str = "HNLC_EXTERNAL_ENDPOINT";
/// Shell command spawned for the `stdio` endpoint.
pub const ADAPTER_CMD_ENV: &str = "HNLC_ADAPTER_CMD";

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Endpoint {
    Tcp(String),
    Unix(PathBuf),
    Stdio,
}

impl FromStr for Endpoint {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.split_once(':') {
            Some(("tcp", addr)) if !addr.is_empty() => Ok(Self::Tcp(addr.to_string())),
            Some(("unix", path)) if !path.is_empty() => Ok(Self::Unix(PathBuf::from(path))),
            None if s == "stdio" => Ok(Self::Stdio),
            _ => Err(Error::InvalidConfig(format!("endpoint {s:?} is not unix:PATH, tcp:HOST:PORT or stdio"))),
        }
    }
}

fn unavailable(e: impl std::fmt::Display) -> Error {
    Error::ExternalPredictorUnavailable(e.to_string())
}

struct Connection {
    reader: Box<dyn Read + Send>,
    writer: Box<dyn Write + Send>,
    child: Option<Child>,
    next_id: u32,
}

impl Connection {
    fn open(endpoint: &Endpoint) -> Result<Self> {
        let (reader, writer, child): (Box<dyn Read + Send>, Box<dyn Write + Send>, _) = match endpoint {
            Endpoint::Tcp(addr) => {
                let s = TcpStream::connect(addr).map_err(|e| unavailable(format!("tcp:{addr}: {e}")))?;
                s.set_nodelay(true).ok();
                let r = s.try_clone().map_err(unavailable)?;
                (Box::new(BufReader::new(r)), Box::new(BufWriter::new(s)), None)
            }
            #[cfg(unix)]
            Endpoint::Unix(path) => {
                let s = std::os::unix::net::UnixStream::connect(path)
                    .map_err(|e| unavailable(format!("unix:{}: {e}", path.display())))?;
                let r = s.try_clone().map_err(unavailable)?;
                (Box::new(BufReader::new(r)), Box::new(BufWriter::new(s)), None)
            }
            #[cfg(not(unix))]
            Endpoint::Unix(_) => return Err(unavailable("unix sockets unsupported on this platform")),
            Endpoint::Stdio => {
                let cmd = std::env::var(ADAPTER_CMD_ENV)
                    .map_err(|_| unavailable(format!("stdio endpoint needs {ADAPTER_CMD_ENV}")))?;
                let mut child = Command::new("sh")
                    .arg("-c")
                    .arg(&cmd)
                    .stdin(Stdio::piped())
                    .stdout(Stdio::piped())
                    .spawn()
                    .map_err(|e| unavailable(format!("spawning {cmd:?}: {e}")))?;
                let stdin = child.stdin.take().unwrap();
                let stdout = child.stdout.take().unwrap();
                (Box::new(BufReader::new(stdout)), Box::new(BufWriter::new(stdin)), Some(child))
            }
        };
        Ok(Self { reader, writer, child, next_id: 0 })
    }

    fn send(&mut self, frame: &Frame) -> Result<()> {
        write_frame(&mut self.writer, frame).map_err(unavailable)
    }

    fn recv(&mut self) -> Result<Frame> {
        match read_frame(&mut self.reader) {
            Ok(Some(Frame::Error { code, message })) => Err(Error::AdapterError { code, message }),
            Ok(Some(f)) => Ok(f),
            Ok(None) => Err(unavailable("adapter closed the connection")),
            Err(Error::Io(e)) => Err(unavailable(e)),
            Err(e) => Err(e),
        }
    }

    fn handshake(&mut self, grid_k: u8) -> Result<Handshake> {
        self.send(&Frame::Handshake(Handshake::client(grid_k)))?;
        match self.recv()? {
            Frame::Handshake(h) if h.version != WIRE_VERSION => {
                Err(Error::Wire(format!("adapter speaks version {}, expected {WIRE_VERSION}", h.version)))
            }
            Frame::Handshake(h) if h.grid_k != grid_k => {
                Err(Error::Wire(format!("adapter grid_k {} differs from {grid_k}", h.grid_k)))
            }
            Frame::Handshake(h) if h.vocab_size < 2 || h.identity.vocab_size != h.vocab_size => {
                Err(Error::Wire(format!("adapter reports inconsistent vocabulary {}", h.vocab_size)))
            }
            Frame::Handshake(h) => Ok(h),
            other => Err(Error::Wire(format!("expected handshake, got frame type {}", other.type_byte()))),
        }
    }

    fn call(&mut self, frame: impl FnOnce(u32) -> Frame) -> Result<Frame> {
        let id = self.next_id;
        self.next_id = self.next_id.wrapping_add(1);
        self.send(&frame(id))?;
        let reply = self.recv()?;
        let reply_id = match &reply {
            Frame::Response { id, .. } | Frame::Tokens { id, .. } | Frame::Bytes { id, .. } => *id,
            other => return Err(Error::Wire(format!("unexpected frame type {}", other.type_byte()))),
        };
        if reply_id != id {
            return Err(Error::Wire(format!("reply id {reply_id} for request {id}")));
        }
        Ok(reply)
    }
}

impl Drop for Connection {
    fn drop(&mut self) {
        if let Some(mut child) = self.child.take() {
            self.writer = Box::new(std::io::sink());
            child.kill().ok();
            child.wait().ok();
        }
    }
}

/// Pooled connections to one adapter; sessions check a connection out for
/// their lifetime so each worker holds its own.
pub struct ExternalPredictor {
    endpoint: Endpoint,
    handshake: Handshake,
    window: usize,
    total_mass: u64,
    recorder: Option<Arc<FixtureRecorder>>,
    pool: Mutex<Vec<Connection>>,
}

impl ExternalPredictor {
    pub fn connect(endpoint: Endpoint, params: &ModelParams) -> Result<Self> {
        let mut conn = Connection::open(&endpoint)?;
        let handshake = conn.handshake(params.grid_k)?;
        Ok(Self {
            endpoint,
            handshake,
            window: params.window as usize,
            total_mass: params.total_mass,
            recorder: params.recorder.clone(),
            pool: Mutex::new(vec![conn]),
        })
    }

    pub fn handshake(&self) -> &Handshake {
        &self.handshake
    }

    fn checkout(&self) -> Result<Connection> {
        if let Some(c) = self.pool.lock().unwrap().pop() {
            return Ok(c);
        }
        let mut conn = Connection::open(&self.endpoint)?;
        let h = conn.handshake(self.handshake.grid_k)?;
        if h.identity != self.handshake.identity {
            return Err(Error::IdentityMismatch {
                expected: self.handshake.identity.to_string(),
                found: h.identity.to_string(),
            });
        }
        Ok(conn)
    }

    fn checkin(&self, conn: Connection) {
        self.pool.lock().unwrap().push(conn);
    }

    fn with_connection<T>(&self, f: impl FnOnce(&mut Connection) -> Result<T>) -> Result<T> {
        let mut conn = self.checkout()?;
        let out = f(&mut conn);
        if !matches!(out, Err(Error::ExternalPredictorUnavailable(_)) | Err(Error::Wire(_))) {
            self.checkin(conn);
        }
        out
    }
}

impl Predictor for ExternalPredictor {
    fn identity(&self) -> PredictorIdentity {
        self.handshake.identity
    }

    fn session(&self, segment: u32) -> Result<Box<dyn PredictorSession + '_>> {
        Ok(Box::new(ExternalSession {
            model: self,
            conn: Some(self.checkout()?),
            segment,
            position: 0,
            context: TokenWindow::new(self.window),
        }))
    }

    fn byte_tokens(&self) -> bool {
        false
    }

    fn tokenize(&self, bytes: &[u8]) -> Result<Option<Vec<u32>>> {
        self.with_connection(|c| match c.call(|id| Frame::Tokenize { id, bytes: bytes.to_vec() })? {
            Frame::Tokens { tokens, .. } => Ok(tokens),
            other => Err(Error::Wire(format!("expected tokens, got frame type {}", other.type_byte()))),
        })
    }

    fn detokenize(&self, tokens: &[u32]) -> Result<Vec<u8>> {
        self.with_connection(|c| match c.call(|id| Frame::Detokenize { id, tokens: tokens.to_vec() })? {
            Frame::Bytes { bytes, .. } => Ok(bytes),
            other => Err(Error::Wire(format!("expected bytes, got frame type {}", other.type_byte()))),
        })
    }
}

struct ExternalSession<'a> {
    model: &'a ExternalPredictor,
    conn: Option<Connection>,
    segment: u32,
    position: u32,
    context: TokenWindow,
}

impl PredictorSession for ExternalSession<'_> {
    fn next_distribution(&mut self) -> Result<CodingDistribution> {
        let m = self.model;
        let conn = self.conn.as_mut().ok_or_else(|| unavailable("connection lost"))?;
        let context = self.context.tail(m.window);
        let reply = conn.call(|id| Frame::Request { id, context });
        let logits = match reply {
            Ok(Frame::Response { logits, .. }) => logits,
            Ok(other) => return Err(Error::Wire(format!("expected response, got frame type {}", other.type_byte()))),
            Err(e) => {
                if !matches!(e, Error::AdapterError { .. }) {
                    self.conn = None;
                }
                return Err(e);
            }
        };
        if logits.len() != m.handshake.vocab_size as usize {
            return Err(Error::Wire(format!(
                "response carries {} logits for vocabulary {}",
                logits.len(),
                m.handshake.vocab_size
            )));
        }
        if let Some(rec) = &m.recorder {
            rec.record(self.segment, self.position, logits.clone());
        }
        self.position += 1;
        let q = QuantizedLogits::from_scaled(logits, m.handshake.grid_k)?;
        distribution_from_quantized(&q, m.total_mass)
    }

    fn observe(&mut self, token: u32) -> Result<()> {
        if token >= self.model.handshake.vocab_size {
            return Err(Error::SymbolOutOfRange {
                symbol: token as usize,
                vocab: self.model.handshake.vocab_size as usize,
            });
        }
        self.context.push(token);
        Ok(())
    }

    fn state_bytes(&self) -> usize {
        std::mem::size_of::<Self>() + self.context.heap_bytes()
    }
}

impl Drop for ExternalSession<'_> {
    fn drop(&mut self) {
        if let Some(c) = self.conn.take() {
            self.model.checkin(c);
        }
    }
}
