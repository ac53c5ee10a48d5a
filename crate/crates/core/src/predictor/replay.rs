//! Recorded-logit playback.
//!
//! Fixture layout, all integers little-endian:
//!
//! ```text
//! "HNLF" | version u16 | identity (kind u8, hash [u8; 32], vocab u32)
//!        | grid_k u8 | vocab_size u32
//! then until EOF: block u32 | position u32 | vocab_size x i32 scaled logits
//! ```
//!
//! `block` is the ordinal of the neural segment within the archive and
//! `position` the index of the target token inside that segment.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;
use std::sync::Mutex;

use super::{Predictor, PredictorIdentity, PredictorSession, BYTE_VOCAB};
use crate::coder::CodingDistribution;
use crate::error::{Error, Result};
use crate::quant::{distribution_from_quantized, QuantizedLogits};

pub const FIXTURE_MAGIC: [u8; 4] = *b"HNLF";
pub const FIXTURE_VERSION: u16 = 1;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Fixture {
    pub identity: PredictorIdentity,
    pub grid_k: u8,
    pub vocab_size: u32,
    pub records: BTreeMap<(u32, u32), Vec<i32>>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::BadFixture(msg.into())
}

impl Fixture {
    pub fn new(identity: PredictorIdentity, grid_k: u8) -> Self {
        Self { identity, grid_k, vocab_size: identity.vocab_size, records: BTreeMap::new() }
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(&mut BufReader::new(File::open(path)?))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(&FIXTURE_MAGIC)?;
        w.write_all(&FIXTURE_VERSION.to_le_bytes())?;
        self.identity.write_to(w)?;
        w.write_all(&[self.grid_k])?;
        w.write_all(&self.vocab_size.to_le_bytes())?;
        for (&(block, position), logits) in &self.records {
            if logits.len() != self.vocab_size as usize {
                return Err(bad(format!("record ({block}, {position}) has {} logits", logits.len())));
            }
            w.write_all(&block.to_le_bytes())?;
            w.write_all(&position.to_le_bytes())?;
            for v in logits {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut header = [0u8; 4 + 2 + PredictorIdentity::ENCODED_LEN + 1 + 4];
        r.read_exact(&mut header).map_err(|_| bad("truncated header"))?;
        if header[..4] != FIXTURE_MAGIC {
            return Err(bad("bad magic"));
        }
        let version = u16::from_le_bytes([header[4], header[5]]);
        if version != FIXTURE_VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let id_bytes: &[u8; PredictorIdentity::ENCODED_LEN] = header[6..43].try_into().unwrap();
        let identity = PredictorIdentity::decode(id_bytes).ok_or_else(|| bad("unknown predictor kind"))?;
        let grid_k = header[43];
        let vocab_size = u32::from_le_bytes(header[44..48].try_into().unwrap());
        if vocab_size != identity.vocab_size || vocab_size < 2 {
            return Err(bad(format!("vocabulary {vocab_size} disagrees with identity {}", identity.vocab_size)));
        }
        let mut records = BTreeMap::new();
        let mut record = vec![0u8; 8 + 4 * vocab_size as usize];
        loop {
            match read_record(r, &mut record)? {
                0 => break,
                n if n < record.len() => return Err(bad("truncated record")),
                _ => {}
            }
            let block = u32::from_le_bytes(record[0..4].try_into().unwrap());
            let position = u32::from_le_bytes(record[4..8].try_into().unwrap());
            let logits: Vec<i32> =
                record[8..].chunks_exact(4).map(|c| i32::from_le_bytes(c.try_into().unwrap())).collect();
            QuantizedLogits::from_scaled(logits.clone(), grid_k)?;
            if records.insert((block, position), logits).is_some() {
                return Err(bad(format!("duplicate record ({block}, {position})")));
            }
        }
        Ok(Self { identity, grid_k, vocab_size, records })
    }
}

/// Fills `buf` as far as the stream allows; returns the bytes read.
fn read_record<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    Ok(filled)
}

/// Collects scaled logits from a live predictor, keyed like a fixture.
#[derive(Debug, Default)]
pub struct FixtureRecorder {
    records: Mutex<BTreeMap<(u32, u32), Vec<i32>>>,
}

impl FixtureRecorder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&self, block: u32, position: u32, scaled: Vec<i32>) {
        self.records.lock().unwrap().insert((block, position), scaled);
    }

    pub fn len(&self) -> usize {
        self.records.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_fixture(&self, identity: PredictorIdentity, grid_k: u8) -> Fixture {
        Fixture { records: self.records.lock().unwrap().clone(), ..Fixture::new(identity, grid_k) }
    }
}

/// Plays back a fixture, presenting the identity of the recorded model.
pub struct ReplayPredictor {
    fixture: Fixture,
    total_mass: u64,
}

impl ReplayPredictor {
    pub fn open(path: &Path, total_mass: u64) -> Result<Self> {
        Self::from_fixture(Fixture::load(path)?, total_mass)
    }

    pub fn from_fixture(fixture: Fixture, total_mass: u64) -> Result<Self> {
        if fixture.vocab_size != BYTE_VOCAB {
            return Err(bad(format!(
                "replay needs a byte-level vocabulary, fixture has {} symbols",
                fixture.vocab_size
            )));
        }
        Ok(Self { fixture, total_mass })
    }

    pub fn fixture(&self) -> &Fixture {
        &self.fixture
    }
}

impl Predictor for ReplayPredictor {
    fn identity(&self) -> PredictorIdentity {
        self.fixture.identity
    }

    fn session(&self, segment: u32) -> Result<Box<dyn PredictorSession + '_>> {
        Ok(Box::new(ReplaySession { model: self, segment, position: 0 }))
    }
}

struct ReplaySession<'a> {
    model: &'a ReplayPredictor,
    segment: u32,
    position: u32,
}

impl PredictorSession for ReplaySession<'_> {
    fn next_distribution(&mut self) -> Result<CodingDistribution> {
        let f = &self.model.fixture;
        let scaled = f
            .records
            .get(&(self.segment, self.position))
            .ok_or(Error::FixtureExhausted { block: self.segment, position: self.position })?;
        self.position += 1;
        let q = QuantizedLogits::from_scaled(scaled.clone(), f.grid_k)?;
        distribution_from_quantized(&q, self.model.total_mass)
    }

    fn observe(&mut self, token: u32) -> Result<()> {
        if token >= self.model.fixture.vocab_size {
            return Err(Error::SymbolOutOfRange { symbol: token as usize, vocab: self.model.fixture.vocab_size as usize });
        }
        Ok(())
    }

    fn state_bytes(&self) -> usize {
        std::mem::size_of::<Self>()
    }
}
