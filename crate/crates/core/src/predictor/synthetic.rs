//! Hash-based stand-in for neural logits.
//!
//! For context digest `h` (FNV-1a over the last 16 tokens) and seed `s`:
//!
//! ```text
//! logit_i = 4 * unit(prf3(s, h, i)) - 2
//!         + 6 if i = argmin_j prf3(s ^ BOOST_SALT, h, j)   (lowest j on ties)
//! ```
//!
//! which gives one dominant symbol over a long flat tail.

use std::sync::Arc;

use super::{
    Drift, FixtureRecorder, ModelParams, Predictor, PredictorIdentity, PredictorKind, PredictorSession, TokenWindow,
    BYTE_VOCAB,
};
use crate::coder::CodingDistribution;
use crate::error::{Error, Result};
use crate::prf::{fnv1a_tokens, prf3, prf3_key, prf3_keyed, unit_f64};
use crate::quant::{distribution_for, grid_snap, inject_drift, RawLogits};

/// Tokens hashed into the context digest.
pub const SYNTHETIC_CONTEXT: usize = 16;
pub const BOOST: f64 = 6.0;
const BOOST_SALT: u64 = 0xd1b5_4a32_d192_ed03;

pub fn synthetic_logits(context_digest: u64, vocab_size: usize, seed: u64) -> RawLogits {
    let base = prf3_key(seed, context_digest);
    let boost = prf3_key(seed ^ BOOST_SALT, context_digest);
    let mut logits = Vec::with_capacity(vocab_size);
    let mut best = (u64::MAX, 0usize);
    for i in 0..vocab_size {
        logits.push(4.0 * unit_f64(prf3_keyed(base, i as u64)) - 2.0);
        let h = prf3_keyed(boost, i as u64);
        if h < best.0 {
            best = (h, i);
        }
    }
    if vocab_size > 0 {
        logits[best.1] += BOOST;
    }
    RawLogits(logits)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SyntheticParams {
    pub seed: u64,
    /// Snap base logits onto the decimal grid before any drift is added.
    pub on_grid: bool,
}

pub struct SyntheticLogitPredictor {
    params: SyntheticParams,
    window: usize,
    grid_k: u8,
    total_mass: u64,
    quantize: bool,
    drift: Option<Drift>,
    recorder: Option<Arc<FixtureRecorder>>,
    identity: PredictorIdentity,
}

impl SyntheticLogitPredictor {
    pub fn new(params: SyntheticParams, model: &ModelParams) -> Result<Self> {
        if !(crate::quant::MIN_GRID_K..=crate::quant::MAX_GRID_K).contains(&model.grid_k) {
            return Err(Error::InvalidGrid(model.grid_k));
        }
        if model.recorder.is_some() && !model.quantize {
            return Err(Error::InvalidConfig("recording fixtures requires quantization".into()));
        }
        let window = (model.window as usize).min(SYNTHETIC_CONTEXT);
        let mut bytes = b"hnlc/synthetic-logit/v1".to_vec();
        bytes.extend_from_slice(&params.seed.to_le_bytes());
        bytes.push(params.on_grid as u8);
        bytes.extend_from_slice(&(window as u32).to_le_bytes());
        bytes.push(model.grid_k);
        bytes.push(model.quantize as u8);
        bytes.extend_from_slice(&model.total_mass.to_le_bytes());
        bytes.extend_from_slice(&BYTE_VOCAB.to_le_bytes());
        Ok(Self {
            params,
            window,
            grid_k: model.grid_k,
            total_mass: model.total_mass,
            quantize: model.quantize,
            drift: model.drift,
            recorder: model.recorder.clone(),
            identity: PredictorIdentity::hashed(PredictorKind::SyntheticLogit, BYTE_VOCAB, &bytes),
        })
    }

    pub fn params(&self) -> SyntheticParams {
        self.params
    }
}

impl Predictor for SyntheticLogitPredictor {
    fn identity(&self) -> PredictorIdentity {
        self.identity
    }

    fn session(&self, segment: u32) -> Result<Box<dyn PredictorSession + '_>> {
        Ok(Box::new(SyntheticSession { model: self, segment, position: 0, context: TokenWindow::new(self.window) }))
    }
}

struct SyntheticSession<'a> {
    model: &'a SyntheticLogitPredictor,
    segment: u32,
    position: u32,
    context: TokenWindow,
}

impl PredictorSession for SyntheticSession<'_> {
    fn next_distribution(&mut self) -> Result<CodingDistribution> {
        let m = self.model;
        let digest = fnv1a_tokens(&self.context.tail(SYNTHETIC_CONTEXT));
        let mut logits = synthetic_logits(digest, BYTE_VOCAB as usize, m.params.seed);
        if m.params.on_grid {
            logits = grid_snap(&logits, m.grid_k)?.to_raw();
        }
        if let Some(d) = m.drift {
            logits = inject_drift(&logits, d.epsilon, prf3(d.seed, self.segment as u64, self.position as u64));
        }
        if let Some(rec) = &m.recorder {
            rec.record(self.segment, self.position, grid_snap(&logits, m.grid_k)?.scaled().to_vec());
        }
        self.position += 1;
        distribution_for(&logits, m.grid_k, m.total_mass, m.quantize)
    }

    fn observe(&mut self, token: u32) -> Result<()> {
        if token >= BYTE_VOCAB {
            return Err(Error::SymbolOutOfRange { symbol: token as usize, vocab: BYTE_VOCAB as usize });
        }
        self.context.push(token);
        Ok(())
    }

    fn state_bytes(&self) -> usize {
        std::mem::size_of::<Self>() + self.context.heap_bytes()
    }
}
