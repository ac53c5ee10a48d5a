//! Probability models that feed the range coder.
//!
//! A [`Predictor`] is an immutable, shareable model description; it hands out
//! one [`PredictorSession`] per coded segment. Sessions see the graft tokens
//! and every coded token through [`PredictorSession::observe`] and produce the
//! distribution for the next token on demand.

mod adaptive;
mod external;
mod replay;
mod synthetic;

use std::fmt;
use std::io::{Read, Write};
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::Arc;

use sha2::{Digest, Sha256};

use crate::coder::CodingDistribution;
use crate::error::{Error, Result};

pub use adaptive::{AdaptiveBytePredictor, BLEND_WEIGHTS};
pub use external::{Endpoint, ExternalPredictor, ADAPTER_CMD_ENV, ENDPOINT_ENV};
pub use replay::{Fixture, FixtureRecorder, ReplayPredictor, FIXTURE_MAGIC, FIXTURE_VERSION};
pub use synthetic::{synthetic_logits, SyntheticLogitPredictor, SyntheticParams, BOOST, SYNTHETIC_CONTEXT};

/// Vocabulary of the byte-level built-in models.
pub const BYTE_VOCAB: u32 = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum PredictorKind {
    AdaptiveByte = 1,
    SyntheticLogit = 2,
    Replay = 3,
    External = 4,
}

impl PredictorKind {
    pub fn from_u8(v: u8) -> Option<Self> {
        Some(match v {
            1 => Self::AdaptiveByte,
            2 => Self::SyntheticLogit,
            3 => Self::Replay,
            4 => Self::External,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::AdaptiveByte => "adaptive-byte",
            Self::SyntheticLogit => "synthetic-logit",
            Self::Replay => "replay",
            Self::External => "external",
        }
    }
}

/// Binds an archive to the exact model needed to decode it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct PredictorIdentity {
    pub kind: PredictorKind,
    pub param_hash: [u8; 32],
    pub vocab_size: u32,
}

impl PredictorIdentity {
    pub const ENCODED_LEN: usize = 1 + 32 + 4;

    /// Identity whose hash is SHA-256 over `params`.
    pub fn hashed(kind: PredictorKind, vocab_size: u32, params: &[u8]) -> Self {
        let mut h = Sha256::new();
        h.update(params);
        Self { kind, param_hash: h.finalize().into(), vocab_size }
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        w.write_all(&[self.kind as u8])?;
        w.write_all(&self.param_hash)?;
        w.write_all(&self.vocab_size.to_le_bytes())
    }

    pub fn read_from<R: Read>(r: &mut R) -> std::io::Result<Self> {
        let mut buf = [0u8; Self::ENCODED_LEN];
        r.read_exact(&mut buf)?;
        Self::decode(&buf)
            .ok_or_else(|| std::io::Error::new(std::io::ErrorKind::InvalidData, "unknown predictor kind"))
    }

    pub fn decode(buf: &[u8; Self::ENCODED_LEN]) -> Option<Self> {
        let kind = PredictorKind::from_u8(buf[0])?;
        let mut param_hash = [0u8; 32];
        param_hash.copy_from_slice(&buf[1..33]);
        let vocab_size = u32::from_le_bytes(buf[33..37].try_into().unwrap());
        Some(Self { kind, param_hash, vocab_size })
    }

    pub fn to_bytes(&self) -> [u8; Self::ENCODED_LEN] {
        let mut out = [0u8; Self::ENCODED_LEN];
        out[0] = self.kind as u8;
        out[1..33].copy_from_slice(&self.param_hash);
        out[33..].copy_from_slice(&self.vocab_size.to_le_bytes());
        out
    }
}

impl fmt::Display for PredictorIdentity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/", self.kind.name())?;
        for b in &self.param_hash[..8] {
            write!(f, "{b:02x}")?;
        }
        write!(f, "/V={}", self.vocab_size)
    }
}

/// Per-segment conditional model.
pub trait PredictorSession {
    /// Distribution of the next token given everything observed so far.
    fn next_distribution(&mut self) -> Result<CodingDistribution>;

    fn observe(&mut self, token: u32) -> Result<()>;

    /// Heap plus inline bytes currently held by the session.
    fn state_bytes(&self) -> usize;
}

pub trait Predictor: Send + Sync {
    fn identity(&self) -> PredictorIdentity;

    /// Fresh session for the neural segment with ordinal `segment`.
    fn session(&self, segment: u32) -> Result<Box<dyn PredictorSession + '_>>;

    /// Token ids for `bytes`, or `None` when the bytes cannot be tokenized
    /// losslessly. Byte-level models map each byte to its value.
    fn tokenize(&self, bytes: &[u8]) -> Result<Option<Vec<u32>>> {
        Ok(Some(bytes.iter().map(|&b| b as u32).collect()))
    }

    /// True when token `i` is exactly the byte `i`, so segment byte spans
    /// follow from token counts.
    fn byte_tokens(&self) -> bool {
        true
    }

    fn detokenize(&self, tokens: &[u32]) -> Result<Vec<u8>> {
        tokens
            .iter()
            .map(|&t| u8::try_from(t).map_err(|_| Error::SymbolOutOfRange { symbol: t as usize, vocab: 256 }))
            .collect()
    }
}

/// Simulated accelerator drift added to logits before quantization.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Drift {
    pub epsilon: f64,
    pub seed: u64,
}

/// Settings shared by all predictors, mostly echoed in the archive header.
#[derive(Clone, Debug)]
pub struct ModelParams {
    pub window: u32,
    pub grid_k: u8,
    pub total_mass: u64,
    pub quantize: bool,
    /// Not part of any identity: encode and decode may drift differently.
    pub drift: Option<Drift>,
    pub recorder: Option<Arc<FixtureRecorder>>,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self {
            window: 2048,
            grid_k: 3,
            total_mass: crate::coder::DEFAULT_TOTAL_MASS,
            quantize: true,
            drift: None,
            recorder: None,
        }
    }
}

/// Textual predictor selection: `builtin`, `synthetic:SEED[:grid]`,
/// `replay:PATH`, `external:ENDPOINT` or bare `external`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum PredictorSpec {
    Builtin,
    Synthetic { seed: u64, on_grid: bool },
    Replay(PathBuf),
    External(Option<String>),
}

impl FromStr for PredictorSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidConfig(format!("unrecognized predictor spec {s:?}"));
        let (head, rest) = match s.split_once(':') {
            Some((h, r)) => (h, Some(r)),
            None => (s, None),
        };
        match (head, rest) {
            ("builtin", None) => Ok(Self::Builtin),
            ("synthetic", None) => Ok(Self::Synthetic { seed: 0, on_grid: false }),
            ("synthetic", Some(r)) => {
                let (seed, on_grid) = match r.strip_suffix(":grid") {
                    Some(seed) => (seed, true),
                    None => (r, false),
                };
                Ok(Self::Synthetic { seed: seed.parse().map_err(|_| bad())?, on_grid })
            }
            ("replay", Some(p)) if !p.is_empty() => Ok(Self::Replay(PathBuf::from(p))),
            ("external", None) => Ok(Self::External(None)),
            ("external", Some(e)) => Ok(Self::External(Some(e.to_string()))),
            _ => Err(bad()),
        }
    }
}

impl fmt::Display for PredictorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Builtin => write!(f, "builtin"),
            Self::Synthetic { seed, on_grid: false } => write!(f, "synthetic:{seed}"),
            Self::Synthetic { seed, on_grid: true } => write!(f, "synthetic:{seed}:grid"),
            Self::Replay(p) => write!(f, "replay:{}", p.display()),
            Self::External(Some(e)) => write!(f, "external:{e}"),
            Self::External(None) => write!(f, "external"),
        }
    }
}

impl PredictorSpec {
    pub fn build(&self, params: &ModelParams) -> Result<Arc<dyn Predictor>> {
        Ok(match self {
            Self::Builtin => Arc::new(AdaptiveBytePredictor::new(params.window, params.total_mass)),
            Self::Synthetic { seed, on_grid } => Arc::new(SyntheticLogitPredictor::new(
                SyntheticParams { seed: *seed, on_grid: *on_grid },
                params,
            )?),
            Self::Replay(path) => Arc::new(ReplayPredictor::open(path, params.total_mass)?),
            Self::External(endpoint) => {
                let endpoint = match endpoint {
                    Some(e) => e.clone(),
                    None => std::env::var(ENDPOINT_ENV).map_err(|_| {
                        Error::ExternalPredictorUnavailable(format!("no endpoint given and {ENDPOINT_ENV} unset"))
                    })?,
                };
                Arc::new(ExternalPredictor::connect(endpoint.parse()?, params)?)
            }
        })
    }
}

/// Ring of the most recent tokens, capped at the model window.
#[derive(Clone, Debug)]
pub(crate) struct TokenWindow {
    tokens: std::collections::VecDeque<u32>,
    capacity: usize,
}

impl TokenWindow {
    pub(crate) fn new(capacity: usize) -> Self {
        Self { tokens: std::collections::VecDeque::with_capacity(capacity.min(1 << 16)), capacity }
    }

    pub(crate) fn push(&mut self, token: u32) {
        if self.capacity == 0 {
            return;
        }
        if self.tokens.len() == self.capacity {
            self.tokens.pop_front();
        }
        self.tokens.push_back(token);
    }

    /// The last `n` tokens (fewer if not yet seen), oldest first.
    pub(crate) fn tail(&self, n: usize) -> Vec<u32> {
        let skip = self.tokens.len().saturating_sub(n);
        self.tokens.iter().skip(skip).copied().collect()
    }

    pub(crate) fn heap_bytes(&self) -> usize {
        self.tokens.capacity() * std::mem::size_of::<u32>()
    }
}
