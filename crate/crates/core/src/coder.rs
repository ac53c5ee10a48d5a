//! Integer range coder driven by explicit frequency tables.
//!
//! The coder keeps a 64-bit `low`/`range` pair and emits whole bytes. The
//! range is kept at or above 2^32 between symbols, so any total mass up to
//! 2^32 leaves at least one unit of range per unit of mass. There is no carry
//! propagation: when the interval straddles a byte boundary and the range has
//! collapsed below 2^32, the interval top is clamped to that boundary.

use crate::error::{Error, Result};

/// Total mass used by every distribution the pipeline produces.
pub const DEFAULT_TOTAL_MASS: u64 = 1 << 30;

/// Largest total mass the coder accepts.
pub const MAX_TOTAL_MASS: u64 = 1 << 32;

const TOP: u64 = 1 << 56;
const BOT: u64 = 1 << 32;

/// Integer frequency table with every symbol holding at least one unit of
/// mass. Stored as prefix sums: `cumulative[i]` is the mass of all symbols
/// below `i`, and the final entry is the total mass.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct CodingDistribution {
    cumulative: Vec<u64>,
}

impl CodingDistribution {
    pub fn from_frequencies(frequencies: &[u64]) -> Result<Self> {
        if frequencies.is_empty() {
            return Err(Error::InvalidDistribution("empty vocabulary".into()));
        }
        let mut cumulative = Vec::with_capacity(frequencies.len() + 1);
        let mut total = 0u64;
        cumulative.push(0);
        for (i, &f) in frequencies.iter().enumerate() {
            if f == 0 {
                return Err(Error::InvalidDistribution(format!("symbol {i} has zero mass")));
            }
            total = total
                .checked_add(f)
                .filter(|&t| t <= MAX_TOTAL_MASS)
                .ok_or_else(|| Error::InvalidDistribution("total mass exceeds 2^32".into()))?;
            cumulative.push(total);
        }
        Ok(Self { cumulative })
    }

    /// Builds from prefix sums that the caller guarantees are valid.
    pub(crate) fn from_cumulative_unchecked(cumulative: Vec<u64>) -> Self {
        debug_assert!(cumulative.len() >= 2);
        debug_assert!(cumulative.windows(2).all(|w| w[1] > w[0]));
        debug_assert!(*cumulative.last().unwrap() <= MAX_TOTAL_MASS);
        Self { cumulative }
    }

    /// Uniform distribution; `total_mass` must be a multiple of `vocab_size`.
    pub fn uniform(vocab_size: usize, total_mass: u64) -> Result<Self> {
        if vocab_size == 0 || total_mass / vocab_size as u64 * vocab_size as u64 != total_mass {
            return Err(Error::InvalidDistribution(format!(
                "{total_mass} is not divisible into {vocab_size} equal parts"
            )));
        }
        Self::from_frequencies(&vec![total_mass / vocab_size as u64; vocab_size])
    }

    pub fn vocab_size(&self) -> usize {
        self.cumulative.len() - 1
    }

    pub fn total_mass(&self) -> u64 {
        self.cumulative[self.vocab_size()]
    }

    pub fn frequency(&self, symbol: usize) -> u64 {
        self.cumulative[symbol + 1] - self.cumulative[symbol]
    }

    /// Mass of all symbols strictly below `symbol`.
    pub fn cumulative(&self, symbol: usize) -> u64 {
        self.cumulative[symbol]
    }

    pub fn frequencies(&self) -> impl ExactSizeIterator<Item = u64> + '_ {
        self.cumulative.windows(2).map(|w| w[1] - w[0])
    }

    /// Symbol whose cumulative slice contains `target`.
    pub fn symbol_for(&self, target: u64) -> usize {
        debug_assert!(target < self.total_mass());
        self.cumulative.partition_point(|&c| c <= target) - 1
    }

    /// Ideal code length of `symbol` in bits, `-log2(f / M)`.
    pub fn code_length(&self, symbol: usize) -> f64 {
        -(self.frequency(symbol) as f64 / self.total_mass() as f64).log2()
    }

    /// Canonical little-endian serialization of the frequency vector, used
    /// to compare distributions across runs byte for byte.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        self.frequencies().flat_map(u64::to_le_bytes).collect()
    }

    pub fn heap_bytes(&self) -> usize {
        self.cumulative.capacity() * std::mem::size_of::<u64>()
    }
}

/// Finalized coder output.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Bitstream {
    pub payload: Vec<u8>,
    /// Number of symbols encoded into `payload`.
    pub symbols: u64,
}

impl Bitstream {
    pub fn bit_length(&self) -> u64 {
        self.payload.len() as u64 * 8
    }
}

#[derive(Debug)]
pub struct RangeEncoder {
    low: u64,
    range: u64,
    out: Vec<u8>,
    symbols: u64,
    finalized: bool,
}

impl Default for RangeEncoder {
    fn default() -> Self {
        Self::new()
    }
}

impl RangeEncoder {
    pub fn new() -> Self {
        Self { low: 0, range: u64::MAX, out: Vec::new(), symbols: 0, finalized: false }
    }

    pub fn encode(&mut self, dist: &CodingDistribution, symbol: usize) -> Result<()> {
        if self.finalized {
            return Err(Error::AlreadyFinalized);
        }
        if symbol >= dist.vocab_size() {
            return Err(Error::SymbolOutOfRange { symbol, vocab: dist.vocab_size() });
        }
        let r = self.range / dist.total_mass();
        self.low += r * dist.cumulative(symbol);
        self.range = r * dist.frequency(symbol);
        self.symbols += 1;
        self.normalize();
        Ok(())
    }

    fn normalize(&mut self) {
        loop {
            if (self.low ^ self.low.wrapping_add(self.range)) >= TOP {
                if self.range >= BOT {
                    break;
                }
                self.range = BOT - (self.low & (BOT - 1));
            }
            self.out.push((self.low >> 56) as u8);
            self.low <<= 8;
            self.range <<= 8;
        }
    }

    /// Flushes the shortest byte string that identifies a point inside the
    /// final interval. Trailing zero bytes are dropped; the decoder reads
    /// zeros past the end of its input.
    pub fn finalize(&mut self) -> Result<Bitstream> {
        if self.finalized {
            return Err(Error::AlreadyFinalized);
        }
        self.finalized = true;
        let low = self.low as u128;
        let end = low + self.range as u128;
        let point = (0..=64u32)
            .rev()
            .map(|k| {
                let mask = (1u128 << k) - 1;
                (low + mask) & !mask
            })
            .find(|&v| v < end)
            .expect("interval is nonempty");
        self.out.extend_from_slice(&(point as u64).to_be_bytes());
        while self.out.last() == Some(&0) {
            self.out.pop();
        }
        Ok(Bitstream { payload: std::mem::take(&mut self.out), symbols: self.symbols })
    }

    pub fn symbols(&self) -> u64 {
        self.symbols
    }

    /// Bytes emitted so far, before the final flush.
    pub fn emitted(&self) -> usize {
        self.out.len()
    }

    pub fn heap_bytes(&self) -> usize {
        self.out.capacity()
    }
}

#[derive(Debug)]
pub struct RangeDecoder<'a> {
    low: u64,
    range: u64,
    code: u64,
    input: &'a [u8],
    pos: usize,
    decoded: u64,
    expected: u64,
}

impl<'a> RangeDecoder<'a> {
    /// Decoder over `payload`, which holds exactly `symbols` coded symbols.
    pub fn new(payload: &'a [u8], symbols: u64) -> Self {
        let mut dec = Self {
            low: 0,
            range: u64::MAX,
            code: 0,
            input: payload,
            pos: 0,
            decoded: 0,
            expected: symbols,
        };
        for _ in 0..8 {
            dec.code = (dec.code << 8) | dec.next_byte() as u64;
        }
        dec
    }

    pub fn from_bitstream(stream: &'a Bitstream) -> Self {
        Self::new(&stream.payload, stream.symbols)
    }

    fn next_byte(&mut self) -> u8 {
        let b = self.input.get(self.pos).copied().unwrap_or(0);
        self.pos += 1;
        b
    }

    pub fn decode(&mut self, dist: &CodingDistribution) -> Result<usize> {
        if self.decoded >= self.expected {
            return Err(Error::BitstreamExhausted {
                requested: self.decoded + 1,
                encoded: self.expected,
            });
        }
        let total = dist.total_mass();
        let r = self.range / total;
        let target = (self.code.wrapping_sub(self.low) / r).min(total - 1);
        let symbol = dist.symbol_for(target);
        self.low = self.low.wrapping_add(r * dist.cumulative(symbol));
        self.range = r * dist.frequency(symbol);
        self.decoded += 1;
        loop {
            if (self.low ^ self.low.wrapping_add(self.range)) >= TOP {
                if self.range >= BOT {
                    break;
                }
                self.range = BOT - (self.low & (BOT - 1));
            }
            self.code = (self.code << 8) | self.next_byte() as u64;
            self.low <<= 8;
            self.range <<= 8;
        }
        Ok(symbol)
    }

    pub fn decoded(&self) -> u64 {
        self.decoded
    }

    /// Input bytes consumed, capped at the payload length.
    pub fn bytes_consumed(&self) -> usize {
        self.pos.min(self.input.len())
    }
}

/// Sum of ideal code lengths, `sum -log2(f(x_t) / M)`, in bits.
pub fn ideal_code_length<'a, I>(steps: I) -> f64
where
    I: IntoIterator<Item = (&'a CodingDistribution, usize)>,
{
    steps.into_iter().map(|(d, s)| d.code_length(s)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn encode_all(dists: &[CodingDistribution], symbols: &[usize]) -> Bitstream {
        let mut enc = RangeEncoder::new();
        for (d, &s) in dists.iter().zip(symbols) {
            enc.encode(d, s).unwrap();
        }
        enc.finalize().unwrap()
    }

    fn decode_all(stream: &Bitstream, dists: &[CodingDistribution]) -> Vec<usize> {
        let mut dec = RangeDecoder::from_bitstream(stream);
        dists.iter().map(|d| dec.decode(d).unwrap()).collect()
    }

    #[test]
    fn uniform_256_thousand_symbols() {
        let d = CodingDistribution::uniform(256, DEFAULT_TOTAL_MASS).unwrap();
        let mut rng = rand::rngs::StdRng::seed_from_u64(7);
        let syms: Vec<usize> = (0..1000).map(|_| rng.gen_range(0..256)).collect();
        let dists = vec![d; 1000];
        let bs = encode_all(&dists, &syms);
        assert!((1000..=1004).contains(&bs.payload.len()), "len {}", bs.payload.len());
        assert_eq!(decode_all(&bs, &dists), syms);
    }

    #[test]
    fn skewed_distribution_within_cross_entropy_bound() {
        let d = CodingDistribution::from_frequencies(&[1 << 29, 1 << 28, 1 << 28]).unwrap();
        // 150 zeros, 75 ones, 75 twos, interleaved deterministically.
        let mut syms = Vec::new();
        for i in 0..300 {
            syms.push(match i % 4 {
                0 | 2 => 0,
                1 => 1,
                _ => 2,
            });
        }
        let bound: f64 = syms.iter().map(|&s| d.code_length(s)).sum();
        assert_eq!(bound, 150.0 * 1.0 + 150.0 * 2.0);
        let dists = vec![d; syms.len()];
        let bs = encode_all(&dists, &syms);
        assert!(bs.bit_length() as f64 <= bound + 64.0, "{} > {}", bs.bit_length(), bound);
        assert_eq!(decode_all(&bs, &dists), syms);
    }

    #[test]
    fn single_symbol_message() {
        let d = CodingDistribution::from_frequencies(&[3, 5, 1 << 20]).unwrap();
        for s in 0..3 {
            let bs = encode_all(std::slice::from_ref(&d), &[s]);
            assert_eq!(decode_all(&bs, std::slice::from_ref(&d)), vec![s]);
        }
    }

    #[test]
    fn empty_stream() {
        let mut enc = RangeEncoder::new();
        let bs = enc.finalize().unwrap();
        assert!(bs.payload.len() <= 8);
        let mut dec = RangeDecoder::from_bitstream(&bs);
        assert_eq!(dec.decoded(), 0);
        let d = CodingDistribution::uniform(2, 2).unwrap();
        assert!(matches!(dec.decode(&d), Err(Error::BitstreamExhausted { .. })));
    }

    #[test]
    fn over_read_is_exhausted() {
        let d = CodingDistribution::uniform(4, DEFAULT_TOTAL_MASS).unwrap();
        let bs = encode_all(&[d.clone(), d.clone()], &[1, 3]);
        let mut dec = RangeDecoder::from_bitstream(&bs);
        dec.decode(&d).unwrap();
        dec.decode(&d).unwrap();
        assert!(matches!(dec.decode(&d), Err(Error::BitstreamExhausted { requested: 3, encoded: 2 })));
    }

    #[test]
    fn finalize_twice_is_error() {
        let mut enc = RangeEncoder::new();
        enc.finalize().unwrap();
        assert!(matches!(enc.finalize(), Err(Error::AlreadyFinalized)));
        let d = CodingDistribution::uniform(2, 2).unwrap();
        assert!(matches!(enc.encode(&d, 0), Err(Error::AlreadyFinalized)));
    }

    #[test]
    fn million_uniform_symbols() {
        let d = CodingDistribution::uniform(256, DEFAULT_TOTAL_MASS).unwrap();
        let mut rng = rand::rngs::StdRng::seed_from_u64(99);
        let mut enc = RangeEncoder::new();
        let syms: Vec<usize> = (0..1_000_000).map(|_| rng.gen_range(0..256)).collect();
        for &s in &syms {
            enc.encode(&d, s).unwrap();
        }
        let bs = enc.finalize().unwrap();
        assert!(bs.payload.len() <= 1_000_008, "len {}", bs.payload.len());
        let mut dec = RangeDecoder::from_bitstream(&bs);
        for &s in &syms {
            assert_eq!(dec.decode(&d).unwrap(), s);
        }
    }

    #[test]
    fn exhaustive_short_sequences() {
        let dists = [
            CodingDistribution::from_frequencies(&[1, 1, DEFAULT_TOTAL_MASS - 2]).unwrap(),
            CodingDistribution::from_frequencies(&[1 << 29, 1 << 28, 1 << 28]).unwrap(),
            CodingDistribution::from_frequencies(&[DEFAULT_TOTAL_MASS - 2, 1, 1]).unwrap(),
            CodingDistribution::from_frequencies(&[1, 2, 3]).unwrap(),
        ];
        for len in 0..=4u32 {
            for code in 0..3usize.pow(len) {
                let syms: Vec<usize> = (0..len).map(|i| code / 3usize.pow(i) % 3).collect();
                // every assignment of distributions per step, cycling through the table
                for rot in 0..dists.len() {
                    let ds: Vec<_> =
                        (0..len as usize).map(|i| dists[(i + rot) % dists.len()].clone()).collect();
                    let bs = encode_all(&ds, &syms);
                    assert_eq!(decode_all(&bs, &ds), syms, "len {len} code {code} rot {rot}");
                }
            }
        }
    }

    #[test]
    fn perturbed_distribution_diverges() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(3);
        let base: Vec<u64> = {
            let mut f: Vec<u64> = (0..64).map(|_| rng.gen_range(1..1 << 24)).collect();
            let s: u64 = f.iter().sum();
            f[0] += DEFAULT_TOTAL_MASS - s;
            f
        };
        let d = CodingDistribution::from_frequencies(&base).unwrap();
        let step = 12;
        let mut syms: Vec<usize> = (0..2000).map(|_| rng.gen_range(0..64)).collect();
        syms[step] = 30;
        let dists = vec![d.clone(); syms.len()];
        let bs = encode_all(&dists, &syms);

        // One extra unit on symbol 0 shifts the slice of every later symbol.
        let mut pert = base.clone();
        pert[0] += 1;
        pert[63] -= 1;
        let pd = CodingDistribution::from_frequencies(&pert).unwrap();
        let mut dec = RangeDecoder::from_bitstream(&bs);
        let mut out = Vec::new();
        for (t, dist) in dists.iter().enumerate() {
            let dist = if t == step { &pd } else { dist };
            out.push(dec.decode(dist).unwrap());
        }
        let first_diff = out.iter().zip(&syms).position(|(a, b)| a != b);
        let first_diff = first_diff.expect("one-unit perturbation went unnoticed");
        assert!(first_diff >= step);
    }

    fn arb_case() -> impl Strategy<Value = (Vec<Vec<u64>>, Vec<usize>)> {
        (1usize..300).prop_flat_map(|n| {
            let dist = (2usize..40).prop_flat_map(|v| {
                proptest::collection::vec(1u64..1 << 20, v).prop_map(|mut f| {
                    let s: u64 = f.iter().sum();
                    let idx = f.len() - 1;
                    f[idx] += DEFAULT_TOTAL_MASS - s;
                    f
                })
            });
            proptest::collection::vec(
                dist.prop_flat_map(|f| {
                    let v = f.len();
                    (Just(f), 0..v)
                }),
                n,
            )
            .prop_map(|steps| steps.into_iter().unzip())
        })
    }

    proptest! {
        #[test]
        fn round_trip_and_bound((freqs, syms) in arb_case()) {
            let dists: Vec<_> = freqs.iter().map(|f| CodingDistribution::from_frequencies(f).unwrap()).collect();
            let bs = encode_all(&dists, &syms);
            let ideal = ideal_code_length(dists.iter().zip(syms.iter().copied()));
            prop_assert!(bs.bit_length() as f64 <= ideal + 64.0);
            prop_assert_eq!(decode_all(&bs, &dists), syms);
        }
    }
}
