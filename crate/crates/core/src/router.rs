//! Scout-ratio band-pass routing and the legacy codec.
//!
//! A block goes to the neural coder iff `tau_min < R <= tau_max`, where `R` is
//! its length over its zstd level-1 size. Thresholds are held in micro-units
//! so the decision on integer sizes is exact:
//! `tau_min * c < n * 10^6 <= tau_max * c`.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Blocks shorter than this skip the scout and are stored raw.
pub const MIN_SCOUT_BLOCK: usize = 256;
pub const SCOUT_LEVEL: i32 = 1;
pub const LEGACY_LEVEL: i32 = 19;
pub const DEFAULT_TAU_MIN: f64 = 1.05;
pub const DEFAULT_TAU_MAX: f64 = 3.0;
/// Codec id recorded in archive headers.
pub const LEGACY_CODEC_ZSTD: u8 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum Route {
    Stored = 0,
    Legacy = 1,
    Neural = 2,
}

impl Route {
    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(Self::Stored),
            1 => Some(Self::Legacy),
            2 => Some(Self::Neural),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Stored => "stored",
            Self::Legacy => "legacy",
            Self::Neural => "neural",
        }
    }
}

impl fmt::Display for Route {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// How routes are assigned across a file.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum RouteMode {
    /// Scout every block independently.
    PerBlock = 0,
    /// Scout the whole input once and apply the result to every block.
    PerFile = 1,
    LegacyOnly = 2,
    StoredOnly = 3,
}

impl RouteMode {
    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(Self::PerBlock),
            1 => Some(Self::PerFile),
            2 => Some(Self::LegacyOnly),
            3 => Some(Self::StoredOnly),
            _ => None,
        }
    }
}

impl FromStr for RouteMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "block" => Ok(Self::PerBlock),
            "file" => Ok(Self::PerFile),
            "legacy" => Ok(Self::LegacyOnly),
            "stored" => Ok(Self::StoredOnly),
            _ => Err(Error::InvalidConfig(format!("route mode {s:?} is not block, file, legacy or stored"))),
        }
    }
}

impl fmt::Display for RouteMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::PerBlock => "block",
            Self::PerFile => "file",
            Self::LegacyOnly => "legacy",
            Self::StoredOnly => "stored",
        })
    }
}

/// Band-pass thresholds in millionths.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Thresholds {
    pub tau_min_micro: u32,
    pub tau_max_micro: u32,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self { tau_min_micro: 1_050_000, tau_max_micro: 3_000_000 }
    }
}

pub fn to_micro(tau: f64) -> Result<u32> {
    let m = (tau * 1e6).round();
    if !m.is_finite() || m < 0.0 || m > u32::MAX as f64 {
        return Err(Error::InvalidConfig(format!("threshold {tau} not representable in micro-units")));
    }
    Ok(m as u32)
}

impl Thresholds {
    pub fn new(tau_min_micro: u32, tau_max_micro: u32) -> Result<Self> {
        if tau_min_micro < 1_000_000 || tau_min_micro >= tau_max_micro {
            return Err(Error::InvalidConfig(format!(
                "thresholds must satisfy 1 <= tau_min < tau_max, got {} and {}",
                tau_min_micro as f64 / 1e6,
                tau_max_micro as f64 / 1e6
            )));
        }
        Ok(Self { tau_min_micro, tau_max_micro })
    }

    pub fn from_f64(tau_min: f64, tau_max: f64) -> Result<Self> {
        Self::new(to_micro(tau_min)?, to_micro(tau_max)?)
    }

    pub fn tau_min(&self) -> f64 {
        self.tau_min_micro as f64 / 1e6
    }

    pub fn tau_max(&self) -> f64 {
        self.tau_max_micro as f64 / 1e6
    }

    pub fn route_for_ratio(&self, ratio: f64) -> Route {
        if self.tau_min() < ratio && ratio <= self.tau_max() {
            Route::Neural
        } else {
            Route::Legacy
        }
    }

    /// Exact band-pass test on `original / compressed`.
    pub fn route_for_sizes(&self, original: usize, compressed: usize) -> Route {
        let n = original as u128 * 1_000_000;
        let c = compressed.max(1) as u128;
        if self.tau_min_micro as u128 * c < n && n <= self.tau_max_micro as u128 * c {
            Route::Neural
        } else {
            Route::Legacy
        }
    }
}

pub fn scout_size(block: &[u8]) -> Result<usize> {
    zstd::bulk::compress(block, SCOUT_LEVEL).map(|v| v.len()).map_err(|e| Error::Legacy(e.to_string()))
}

/// `len / zstd_level_1_len`.
pub fn scout_ratio(block: &[u8]) -> Result<f64> {
    Ok(block.len() as f64 / scout_size(block)? as f64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RouteDecision {
    pub route: Route,
    pub offset: usize,
    pub len: usize,
    /// Scout output size; zero when the scout was skipped.
    pub scout_len: usize,
}

impl RouteDecision {
    pub fn scout_ratio(&self) -> Option<f64> {
        (self.scout_len > 0).then(|| self.len as f64 / self.scout_len as f64)
    }
}

pub fn block_spans(len: usize, block_bytes: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..len).step_by(block_bytes.max(1)).map(move |o| (o, block_bytes.min(len - o)))
}

/// Route for one block under the band-pass rule.
pub fn route_block(block: &[u8], thresholds: &Thresholds) -> Result<(Route, usize)> {
    if block.len() < MIN_SCOUT_BLOCK {
        return Ok((Route::Stored, 0));
    }
    let c = scout_size(block)?;
    Ok((thresholds.route_for_sizes(block.len(), c), c))
}

/// Initial routes for every block. Legacy blocks may still degrade to
/// Stored once their legacy output is known.
pub fn route_blocks(
    data: &[u8],
    block_bytes: usize,
    thresholds: &Thresholds,
    mode: RouteMode,
) -> Result<Vec<RouteDecision>> {
    let file_route = match mode {
        RouteMode::PerFile if data.len() >= MIN_SCOUT_BLOCK => Some(route_block(data, thresholds)?.0),
        _ => None,
    };
    block_spans(data.len(), block_bytes)
        .map(|(offset, len)| {
            let block = &data[offset..offset + len];
            let (route, scout_len) = match mode {
                _ if len < MIN_SCOUT_BLOCK => (Route::Stored, 0),
                RouteMode::PerBlock => route_block(block, thresholds)?,
                RouteMode::PerFile => (file_route.unwrap_or(Route::Stored), 0),
                RouteMode::LegacyOnly => (Route::Legacy, 0),
                RouteMode::StoredOnly => (Route::Stored, 0),
            };
            Ok(RouteDecision { route, offset, len, scout_len })
        })
        .collect()
}

/// High-effort legacy compression; `None` when it would not shrink the block.
pub fn legacy_compress(block: &[u8]) -> Result<Option<Vec<u8>>> {
    let out = zstd::bulk::compress(block, LEGACY_LEVEL).map_err(|e| Error::Legacy(e.to_string()))?;
    Ok((out.len() < block.len()).then_some(out))
}

pub fn legacy_decompress(payload: &[u8], original_len: usize) -> Result<Vec<u8>> {
    let out = zstd::bulk::decompress(payload, original_len).map_err(|e| Error::Legacy(e.to_string()))?;
    if out.len() != original_len {
        return Err(Error::Legacy(format!("decoded {} bytes, expected {original_len}", out.len())));
    }
    Ok(out)
}

pub fn legacy_version() -> String {
    format!("zstd {}", zstd::zstd_safe::version_string())
}
