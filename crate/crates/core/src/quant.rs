//! Deterministic conversion of model logits into coding distributions.
//!
//! Logits are snapped to a decimal grid of `10^-k` and carried as scaled
//! integers. The softmax is evaluated on the host in double precision from
//! those integers, and the resulting probabilities are turned into an
//! integer frequency table with exact integer arithmetic. Drift smaller than
//! half a grid step applied to on-grid logits cannot change any output byte.

use crate::coder::CodingDistribution;
use crate::error::{Error, Result};
use crate::prf;
use std::sync::OnceLock;

pub const MIN_GRID_K: u8 = 1;
pub const MAX_GRID_K: u8 = 6;

const POW10: [i64; 10] = [
    1,
    10,
    100,
    1_000,
    10_000,
    100_000,
    1_000_000,
    10_000_000,
    100_000_000,
    1_000_000_000,
];

fn check_grid(grid_k: u8) -> Result<()> {
    if (MIN_GRID_K..=MAX_GRID_K).contains(&grid_k) {
        Ok(())
    } else {
        Err(Error::InvalidGrid(grid_k))
    }
}

/// Scale factor `10^k` for a validated grid.
pub fn grid_scale(grid_k: u8) -> f64 {
    POW10[grid_k as usize] as f64
}

/// Largest admissible scaled magnitude, `10^(k+3)`.
pub fn scaled_bound(grid_k: u8) -> i64 {
    POW10[grid_k as usize + 3]
}

/// Model outputs, one per vocabulary symbol.
#[derive(Clone, Debug, PartialEq)]
pub struct RawLogits(pub Vec<f64>);

impl RawLogits {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.0.iter().position(|v| !v.is_finite()) {
            Some(index) => Err(Error::NonFiniteLogit { index }),
            None => Ok(()),
        }
    }
}

/// Logits on the `10^-k` grid, stored as `round(z * 10^k)`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct QuantizedLogits {
    scaled: Vec<i32>,
    grid_k: u8,
}

impl QuantizedLogits {
    /// Wraps scaled integers received from outside (wire, fixtures).
    pub fn from_scaled(scaled: Vec<i32>, grid_k: u8) -> Result<Self> {
        check_grid(grid_k)?;
        let bound = scaled_bound(grid_k);
        if let Some((index, &v)) = scaled.iter().enumerate().find(|(_, v)| (**v as i64).abs() > bound) {
            return Err(Error::LogitOutOfRange { index, value: v as i64, bound });
        }
        Ok(Self { scaled, grid_k })
    }

    pub fn scaled(&self) -> &[i32] {
        &self.scaled
    }

    pub fn grid_k(&self) -> u8 {
        self.grid_k
    }

    pub fn len(&self) -> usize {
        self.scaled.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scaled.is_empty()
    }

    /// Grid values as doubles, `scaled / 10^k`.
    pub fn to_raw(&self) -> RawLogits {
        let scale = grid_scale(self.grid_k);
        RawLogits(self.scaled.iter().map(|&s| s as f64 / scale).collect())
    }
}

/// Strictly positive probabilities summing to one within `1e-9`.
#[derive(Clone, Debug, PartialEq)]
pub struct HostProbabilities(Vec<f64>);

impl HostProbabilities {
    pub const SUM_TOLERANCE: f64 = 1e-9;

    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidDistribution("empty probability vector".into()));
        }
        if let Some(i) = probs.iter().position(|p| !(p.is_finite() && *p > 0.0)) {
            return Err(Error::InvalidDistribution(format!("probability {i} is {}", probs[i])));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > Self::SUM_TOLERANCE {
            return Err(Error::InvalidDistribution(format!("probabilities sum to {sum}")));
        }
        Ok(Self(probs))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Rounds each logit to the nearest multiple of `10^-k`, ties to even.
///
/// The product `z * 10^k` is formed in double precision and then rounded, so
/// a decimal literal that is not exactly representable rounds according to
/// its binary value.
pub fn grid_snap(logits: &RawLogits, grid_k: u8) -> Result<QuantizedLogits> {
    check_grid(grid_k)?;
    logits.check_finite()?;
    let scale = grid_scale(grid_k);
    let bound = scaled_bound(grid_k);
    let snapped: Vec<f64> = logits.0.iter().map(|&z| round_even(z * scale)).collect();
    if let Some(index) = snapped.iter().position(|v| v.abs() > bound as f64) {
        return Err(Error::LogitOutOfRange { index, value: snapped[index] as i64, bound });
    }
    Ok(QuantizedLogits { scaled: snapped.into_iter().map(|v| v as i32).collect(), grid_k })
}

/// Round half to even. Below 2^51 in magnitude, adding and removing
/// 1.5 * 2^52 leaves no fraction bits, so the sum itself does the rounding.
fn round_even(v: f64) -> f64 {
    const SHIFT: f64 = 6755399441055744.0;
    if v.abs() < 2251799813685248.0 {
        ((v + SHIFT) - SHIFT).copysign(v)
    } else {
        v.round_ties_even()
    }
}

/// Softmax of grid logits in double precision with max subtraction.
pub fn host_softmax(q: &QuantizedLogits) -> HostProbabilities {
    let max = q.scaled.iter().copied().max().unwrap_or(0) as i64;
    let scale = grid_scale(q.grid_k);
    let table = exp_table(q.grid_k);
    let exps: Vec<f64> = q
        .scaled
        .iter()
        .map(|&s| {
            let d = s as i64 - max;
            match table.get(d.unsigned_abs() as usize) {
                Some(&e) => e,
                None => (d as f64 / scale).exp(),
            }
        })
        .collect();
    normalize(exps)
}

const EXP_TABLE_LEN: usize = 1 << 14;

/// `exp(-j / 10^k)` for small `j`, evaluated with the same expression as the
/// direct path so lookups are bit-identical to it.
fn exp_table(grid_k: u8) -> &'static [f64] {
    #[allow(clippy::declare_interior_mutable_const)]
    const EMPTY: OnceLock<Vec<f64>> = OnceLock::new();
    static TABLES: [OnceLock<Vec<f64>>; MAX_GRID_K as usize] = [EMPTY; MAX_GRID_K as usize];
    TABLES[grid_k as usize - 1].get_or_init(|| {
        let scale = grid_scale(grid_k);
        (0..EXP_TABLE_LEN as i64).map(|j| (-j as f64 / scale).exp()).collect()
    })
}

/// Softmax of unquantized logits. Only used to reproduce the failure mode
/// that grid snapping removes.
pub fn raw_softmax(logits: &RawLogits) -> Result<HostProbabilities> {
    logits.check_finite()?;
    let max = logits.0.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.0.iter().map(|&z| (z - max).exp()).collect();
    Ok(normalize(exps))
}

fn normalize(exps: Vec<f64>) -> HostProbabilities {
    let sum: f64 = exps.iter().sum();
    // Entries that underflow are lifted to the smallest normal double; the
    // integerizer floors them to one unit of mass either way.
    HostProbabilities(exps.into_iter().map(|e| (e / sum).max(f64::MIN_POSITIVE)).collect())
}

/// `floor(p * budget)` computed exactly from the binary expansion of `p`.
fn floor_scaled(p: f64, budget: u64) -> u64 {
    // A correctly rounded product can only reach past the true value onto an
    // integer, so a fractional product already has the right floor.
    let x = p * budget as i64 as f64;
    let q = x as i64;
    if x < 9.0e15 && q as f64 != x {
        return q as u64;
    }
    floor_scaled_exact(p, budget)
}

fn floor_scaled_exact(p: f64, budget: u64) -> u64 {
    let bits = p.to_bits();
    let exp = ((bits >> 52) & 0x7ff) as i32;
    let frac = bits & ((1u64 << 52) - 1);
    let (mantissa, e) = if exp == 0 { (frac, -1074) } else { (frac | 1 << 52, exp - 1075) };
    let prod = mantissa as u128 * budget as u128;
    let v = if e >= 0 {
        prod << e
    } else if -e >= 128 {
        0
    } else {
        prod >> -e
    };
    v.min(u64::MAX as u128) as u64
}

/// Integer frequencies summing exactly to `total_mass`.
///
/// Each symbol gets `max(1, floor(p * (M - V)))`. The remainder is handed out
/// one unit at a time, cycling in order of descending probability then
/// ascending index, to the symbols whose floor was at least one; symbols held
/// up only by the one-unit minimum keep exactly one unit.
pub fn integerize(p: &HostProbabilities, total_mass: u64) -> Result<CodingDistribution> {
    let probs = p.as_slice();
    let vocab = probs.len();
    if vocab as u64 >= total_mass / 2 {
        return Err(Error::VocabTooLarge { vocab, total_mass });
    }
    let budget = total_mass - vocab as u64;
    let mut cum = vec![0u64; vocab + 1];
    for (slot, &pi) in cum[1..].iter_mut().zip(probs) {
        *slot = floor_scaled(pi, budget);
    }
    // Positive doubles order like their bit patterns.
    let keys: Vec<u64> = probs.iter().map(|p| p.to_bits()).collect();
    spread_remainder(cum, &keys, total_mass)
}

/// Integer frequencies for the exact rational distribution `w_i / sum(w)`.
///
/// Same rounding rule as [`integerize`]: floors of `w_i * (M - V) / sum(w)`
/// computed exactly, a one-unit minimum, and the remainder cycled over
/// symbols with a nonzero floor by descending weight then ascending index.
/// The weight total must lie in `1..2^62`.
pub fn integerize_weights(weights: &[u64], total_mass: u64) -> Result<CodingDistribution> {
    let vocab = weights.len();
    if vocab as u64 >= total_mass / 2 {
        return Err(Error::VocabTooLarge { vocab, total_mass });
    }
    let total = weights.iter().try_fold(0u64, |acc, &w| acc.checked_add(w)).filter(|&t| t < 1 << 62);
    let Some(total) = total.filter(|&t| t > 0) else {
        return Err(Error::InvalidDistribution("weight total must lie in 1..2^62".into()));
    };
    let budget = total_mass - vocab as u64;
    let ratio = budget as f64 / total as f64;
    let mut cum = vec![0u64; vocab + 1];
    for (slot, &w) in cum[1..].iter_mut().zip(weights) {
        // The float estimate is within one of the true quotient; the
        // remainder w*b - q*T lies in (-T, 2T) and is exact modulo 2^64.
        let q = (w as i64 as f64 * ratio) as i64 as u64;
        let r = w.wrapping_mul(budget).wrapping_sub(q.wrapping_mul(total)) as i64;
        *slot = q.wrapping_add((r >= total as i64) as u64).wrapping_sub((r < 0) as u64);
    }
    spread_remainder(cum, weights, total_mass)
}

/// Turns floors held in `cum[1..]` into a distribution of exactly
/// `total_mass`: zero floors are lifted to one, and the remainder is cycled
/// over symbols with a nonzero floor by descending key, ties to the lower
/// index. A deficit, which only arises from floating-point excess in
/// probabilities, is taken one unit at a time from the other end of that
/// order without dropping a symbol below one.
fn spread_remainder(mut cum: Vec<u64>, keys: &[u64], total_mass: u64) -> Result<CodingDistribution> {
    let floors = &mut cum[1..];
    // Keys of the symbols with a nonzero floor, packed to the front.
    let mut ks = vec![0u64; floors.len()];
    let mut eligible = 0usize;
    let mut assigned = 0u64;
    for (&q, &k) in floors.iter().zip(keys) {
        ks[eligible] = k;
        eligible += (q > 0) as usize;
        assigned = assigned.saturating_add(q.max(1));
    }
    if assigned > total_mass {
        let mut freqs: Vec<u64> = floors.iter().map(|&q| q.max(1)).collect();
        take_deficit(&mut freqs, assigned - total_mass, keys);
        return CodingDistribution::from_frequencies(&freqs);
    }
    let remainder = total_mass - assigned;
    let (rounds, extra) = if remainder == 0 {
        (0, 0)
    } else {
        assert!(eligible > 0, "no symbol can take the remainder");
        (remainder / eligible as u64, remainder % eligible as u64)
    };
    // Symbols keyed above `cut` take an extra unit, as do the first `ties`
    // keyed exactly `cut` in index order.
    let (cut, mut ties) = if extra == 0 {
        (u64::MAX, 0)
    } else {
        let ks = &mut ks[..eligible];
        let cut = *ks.select_nth_unstable(eligible - extra as usize).1;
        let above = ks.iter().filter(|&&k| k > cut).count() as u64;
        (cut, extra - above)
    };
    // Floors never decrease with the key, so every zero floor ranks below
    // the cut and no bonus reaches a lifted symbol.
    let mut acc = 0u64;
    for (slot, &k) in floors.iter_mut().zip(keys) {
        let q = *slot;
        let tie = k == cut && ties > 0;
        ties -= tie as u64;
        acc += q.max(1) + (q > 0) as u64 * rounds + (k > cut || tie) as u64;
        *slot = acc;
    }
    debug_assert_eq!(acc, total_mass);
    Ok(CodingDistribution::from_cumulative_unchecked(cum))
}

fn take_deficit(freqs: &mut [u64], mut deficit: u64, keys: &[u64]) {
    // Ascending priority: lowest key first, higher index first among ties.
    let mut order: Vec<usize> = (0..freqs.len()).collect();
    order.sort_unstable_by(|&a, &b| keys[a].cmp(&keys[b]).then(b.cmp(&a)));
    while deficit > 0 {
        let before = deficit;
        for &i in &order {
            if deficit == 0 {
                break;
            }
            if freqs[i] > 1 {
                freqs[i] -= 1;
                deficit -= 1;
            }
        }
        assert!(deficit < before, "vocabulary cannot absorb the deficit");
    }
}

/// Adds uniform noise in `[-epsilon, epsilon]` to every logit. The noise for
/// entry `i` is a pure function of `(seed, i)`.
pub fn inject_drift(logits: &RawLogits, epsilon: f64, seed: u64) -> RawLogits {
    if epsilon == 0.0 {
        return logits.clone();
    }
    RawLogits(
        logits
            .0
            .iter()
            .enumerate()
            .map(|(i, &z)| z + (2.0 * prf::unit_f64(prf::prf2(seed, i as u64)) - 1.0) * epsilon)
            .collect(),
    )
}

/// Full logits-to-table pipeline. With `quantize` off the grid snap is
/// skipped, which is only meaningful for drift experiments.
pub fn distribution_for(
    logits: &RawLogits,
    grid_k: u8,
    total_mass: u64,
    quantize: bool,
) -> Result<CodingDistribution> {
    let probs = if quantize {
        host_softmax(&grid_snap(logits, grid_k)?)
    } else {
        check_grid(grid_k)?;
        raw_softmax(logits)?
    };
    integerize(&probs, total_mass)
}

/// Scaled logits straight to a coding distribution.
pub fn distribution_from_quantized(q: &QuantizedLogits, total_mass: u64) -> Result<CodingDistribution> {
    integerize(&host_softmax(q), total_mass)
}
