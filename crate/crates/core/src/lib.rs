pub mod coder;
pub mod container;
pub mod error;
pub mod predictor;
pub mod prf;
pub mod pipeline;
pub mod quant;
pub mod router;
pub mod wire;

pub use coder::{Bitstream, CodingDistribution, RangeDecoder, RangeEncoder, DEFAULT_TOTAL_MASS};
pub use error::{Error, Result};
pub use predictor::{
    Drift, ModelParams, Predictor, PredictorIdentity, PredictorKind, PredictorSession, PredictorSpec,
};
