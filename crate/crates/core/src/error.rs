use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("bitstream exhausted: {requested} symbols requested, {encoded} encoded")]
    BitstreamExhausted { requested: u64, encoded: u64 },

    #[error("encoder already finalized")]
    AlreadyFinalized,

    #[error("invalid coding distribution: {0}")]
    InvalidDistribution(String),

    #[error("symbol {symbol} outside vocabulary of {vocab}")]
    SymbolOutOfRange { symbol: usize, vocab: usize },

    #[error("non-finite logit at index {index}")]
    NonFiniteLogit { index: usize },

    #[error("quantized logit {value} at index {index} exceeds the magnitude bound {bound}")]
    LogitOutOfRange { index: usize, value: i64, bound: i64 },

    #[error("grid precision k={0} outside supported range 1..=6")]
    InvalidGrid(u8),

    #[error("vocabulary of {vocab} symbols too large for total mass {total_mass}")]
    VocabTooLarge { vocab: usize, total_mass: u64 },

    #[error("external predictor unavailable: {0}")]
    ExternalPredictorUnavailable(String),

    #[error("fixture exhausted: no record for block {block}, token {position}")]
    FixtureExhausted { block: u32, position: u32 },

    #[error("malformed fixture file: {0}")]
    BadFixture(String),

    #[error("predictor identity mismatch: archive expects {expected}, available predictor is {found}")]
    IdentityMismatch { expected: String, found: String },

    #[error("checksum mismatch in {location}")]
    ChecksumMismatch { location: String },

    #[error("truncated archive: {0}")]
    TruncatedArchive(String),

    #[error("bad archive magic")]
    BadMagic,

    #[error("unsupported archive version {0}")]
    UnsupportedVersion(u16),

    #[error("archive table inconsistent: {0}")]
    TableInconsistent(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("legacy codec: {0}")]
    Legacy(String),

    #[error("wire protocol: {0}")]
    Wire(String),

    #[error("adapter returned error {code}: {message}")]
    AdapterError { code: u16, message: String },

    #[error(transparent)]
    Io(#[from] io::Error),
}
