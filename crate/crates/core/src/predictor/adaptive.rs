//! Windowed order-2/1/0 byte context mixer.
//!
//! Each order predicts `(c + a) / (n + 256 a)` where `c` counts the symbol in
//! the current context, `n` counts the context, and `a = 1 / smoothing` is the
//! pseudo-count. The three predictions are blended with weights 6:3:1
//! (order 2 first). Counts are multiplied through by `smoothing` so the whole
//! computation is integer arithmetic over
//!
//! ```text
//! w_i = 6 (s c2_i + 1) D1 D0 + 3 (s c1_i + 1) D2 D0 + (s c0_i + 1) D2 D1
//! D_o = s n_o + 256,   sum_i w_i = 10 D2 D1 D0
//! ```
//!
//! Only events lying wholly inside the last `window` tokens are counted.

use std::collections::{HashMap, VecDeque};

use super::{Predictor, PredictorIdentity, PredictorKind, PredictorSession, BYTE_VOCAB};
use crate::coder::CodingDistribution;
use crate::error::{Error, Result};
use crate::quant::integerize_weights;

/// Blend weights for orders 2, 1 and 0, in tenths.
pub const BLEND_WEIGHTS: [u64; 3] = [6, 3, 1];

/// Default pseudo-count denominator: each unseen symbol gets 1/32 of a count.
pub const DEFAULT_SMOOTHING: u32 = 32;

/// Largest window whose weight total stays below 2^63 at the maximum smoothing.
pub const MAX_WINDOW: u32 = 1 << 14;
pub const MAX_SMOOTHING: u32 = 32;

#[derive(Debug)]
pub struct AdaptiveBytePredictor {
    window: u32,
    smoothing: u32,
    total_mass: u64,
    identity: PredictorIdentity,
}

impl AdaptiveBytePredictor {
    pub fn new(window: u32, total_mass: u64) -> Self {
        Self::with_smoothing(window, total_mass, DEFAULT_SMOOTHING).expect("default smoothing is valid")
    }

    /// `smoothing = 1` is classic add-one smoothing.
    pub fn with_smoothing(window: u32, total_mass: u64, smoothing: u32) -> Result<Self> {
        if !(1..=MAX_SMOOTHING).contains(&smoothing) {
            return Err(Error::InvalidConfig(format!("smoothing {smoothing} outside 1..={MAX_SMOOTHING}")));
        }
        if window > MAX_WINDOW {
            return Err(Error::InvalidConfig(format!(
                "adaptive byte model window {window} exceeds {MAX_WINDOW}"
            )));
        }
        let mut params = b"hnlc/adaptive-byte/v1".to_vec();
        params.extend_from_slice(&window.to_le_bytes());
        params.extend_from_slice(&smoothing.to_le_bytes());
        params.extend_from_slice(&total_mass.to_le_bytes());
        for w in BLEND_WEIGHTS {
            params.extend_from_slice(&w.to_le_bytes());
        }
        let identity = PredictorIdentity::hashed(PredictorKind::AdaptiveByte, BYTE_VOCAB, &params);
        Ok(Self { window, smoothing, total_mass, identity })
    }

    pub fn window(&self) -> u32 {
        self.window
    }

    pub fn smoothing(&self) -> u32 {
        self.smoothing
    }

    pub fn new_session(&self) -> AdaptiveByteSession {
        AdaptiveByteSession::new(self.window as usize, self.smoothing as u64, self.total_mass)
    }
}

impl Predictor for AdaptiveBytePredictor {
    fn identity(&self) -> PredictorIdentity {
        self.identity
    }

    fn session(&self, _segment: u32) -> Result<Box<dyn PredictorSession + '_>> {
        Ok(Box::new(self.new_session()))
    }
}

/// Sparse symbol counts for one context.
#[derive(Clone, Debug, Default)]
struct Counts {
    total: u32,
    entries: Vec<(u8, u32)>,
}

impl Counts {
    fn add(&mut self, sym: u8) {
        self.total += 1;
        match self.entries.iter_mut().find(|e| e.0 == sym) {
            Some(e) => e.1 += 1,
            None => self.entries.push((sym, 1)),
        }
    }

    fn remove(&mut self, sym: u8) {
        self.total -= 1;
        let pos = self.entries.iter().position(|e| e.0 == sym).expect("evicted event was counted");
        self.entries[pos].1 -= 1;
        if self.entries[pos].1 == 0 {
            self.entries.swap_remove(pos);
        }
    }
}

pub struct AdaptiveByteSession {
    window: usize,
    smoothing: u64,
    total_mass: u64,
    history: VecDeque<u8>,
    order0: [u32; 256],
    order1: Vec<Counts>,
    order2: HashMap<u16, Counts>,
    weights: Vec<u64>,
}

impl AdaptiveByteSession {
    fn new(window: usize, smoothing: u64, total_mass: u64) -> Self {
        Self {
            window,
            smoothing,
            total_mass,
            history: VecDeque::with_capacity(window.min(1 << 16)),
            order0: [0; 256],
            order1: vec![Counts::default(); 256],
            order2: HashMap::new(),
            weights: vec![0; 256],
        }
    }

    fn context1(&self) -> Option<&Counts> {
        self.history.back().map(|&a| &self.order1[a as usize])
    }

    fn context2(&self) -> Option<&Counts> {
        let n = self.history.len();
        if n < 2 {
            return None;
        }
        self.order2.get(&key(self.history[n - 2], self.history[n - 1]))
    }

    fn evict_oldest(&mut self) {
        let t0 = self.history.pop_front().expect("window nonempty");
        self.order0[t0 as usize] -= 1;
        if let Some(&t1) = self.history.front() {
            self.order1[t0 as usize].remove(t1);
            if let Some(&t2) = self.history.get(1) {
                let k = key(t0, t1);
                let c = self.order2.get_mut(&k).expect("evicted context was counted");
                c.remove(t2);
                if c.total == 0 {
                    self.order2.remove(&k);
                }
            }
        }
    }

    /// Raw blend weights for the next symbol; they sum to the returned total.
    pub fn weights(&mut self) -> (&[u64], u64) {
        let mut w = std::mem::take(&mut self.weights);
        let s = self.smoothing;
        let n0 = self.history.len() as u64;
        let c1 = self.context1();
        let c2 = self.context2();
        let d0 = s * n0 + 256;
        let d1 = s * c1.map_or(0, |c| c.total as u64) + 256;
        let d2 = s * c2.map_or(0, |c| c.total as u64) + 256;
        let a2 = BLEND_WEIGHTS[0] * d1 * d0;
        let a1 = BLEND_WEIGHTS[1] * d2 * d0;
        let a0 = BLEND_WEIGHTS[2] * d2 * d1;
        for (wi, &c) in w.iter_mut().zip(self.order0.iter()) {
            *wi = a2 + a1 + a0 * (s * c as u64 + 1);
        }
        if let Some(c1) = c1 {
            for &(sym, c) in &c1.entries {
                w[sym as usize] += a1 * s * c as u64;
            }
        }
        if let Some(c2) = c2 {
            for &(sym, c) in &c2.entries {
                w[sym as usize] += a2 * s * c as u64;
            }
        }
        self.weights = w;
        (&self.weights, 10 * d0 * d1 * d2)
    }
}

fn key(a: u8, b: u8) -> u16 {
    (a as u16) << 8 | b as u16
}

impl PredictorSession for AdaptiveByteSession {
    fn next_distribution(&mut self) -> Result<CodingDistribution> {
        let total_mass = self.total_mass;
        let (w, _) = self.weights();
        integerize_weights(w, total_mass)
    }

    fn observe(&mut self, token: u32) -> Result<()> {
        let t = u8::try_from(token).map_err(|_| Error::SymbolOutOfRange { symbol: token as usize, vocab: 256 })?;
        if self.window == 0 {
            return Ok(());
        }
        if self.history.len() == self.window {
            self.evict_oldest();
        }
        let n = self.history.len();
        if n >= 1 {
            let a = self.history[n - 1];
            self.order1[a as usize].add(t);
            if n >= 2 {
                self.order2.entry(key(self.history[n - 2], a)).or_default().add(t);
            }
        }
        self.order0[t as usize] += 1;
        self.history.push_back(t);
        Ok(())
    }

    fn state_bytes(&self) -> usize {
        let counts = |c: &Counts| std::mem::size_of::<Counts>() + c.entries.capacity() * 8;
        std::mem::size_of::<Self>()
            + self.history.capacity()
            + self.order1.iter().map(counts).sum::<usize>()
            + self.order2.capacity() * 2
            + self.order2.values().map(counts).sum::<usize>()
            + self.weights.capacity() * 8
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coder::DEFAULT_TOTAL_MASS as M;
    use num_bigint::BigInt;
    use num_rational::BigRational;
    use proptest::prelude::*;

    fn session(window: u32) -> AdaptiveByteSession {
        AdaptiveBytePredictor::new(window, M).new_session()
    }

    #[test]
    fn empty_context_is_uniform() {
        let d = session(2048).next_distribution().unwrap();
        assert!(d.frequencies().all(|f| f == M / 256));
    }

    #[test]
    fn learns_alternation() {
        let mut s = session(2048);
        for &b in b"abababa" {
            s.observe(b as u32).unwrap();
        }
        let d = s.next_distribution().unwrap();
        assert!(d.frequency(b'b' as usize) > d.frequency(b'c' as usize));
        assert!(d.frequency(b'b' as usize) > d.frequency(b'a' as usize));
    }

    #[test]
    fn observe_shows_up_in_next_distribution() {
        let mut s = session(2048);
        let before = s.next_distribution().unwrap().frequency(7);
        s.observe(7).unwrap();
        assert!(s.next_distribution().unwrap().frequency(7) > before);
    }

    #[test]
    fn rejects_non_byte_tokens_and_large_windows() {
        assert!(session(16).observe(256).is_err());
        assert!(AdaptiveBytePredictor::with_smoothing(MAX_WINDOW + 1, M, 32).is_err());
        assert!(AdaptiveBytePredictor::with_smoothing(16, M, 0).is_err());
    }

    #[test]
    fn smoothing_changes_identity() {
        let a = AdaptiveBytePredictor::with_smoothing(2048, M, 1).unwrap();
        let b = AdaptiveBytePredictor::with_smoothing(2048, M, 32).unwrap();
        let c = AdaptiveBytePredictor::with_smoothing(1024, M, 32).unwrap();
        assert_ne!(a.identity(), b.identity());
        assert_ne!(b.identity(), c.identity());
        assert_eq!(b.identity(), AdaptiveBytePredictor::new(2048, M).identity());
    }

    /// Blend probabilities recounted from scratch over the window.
    fn oracle_probs(history: &[u8], window: usize, s: u64) -> Vec<BigRational> {
        let win = &history[history.len().saturating_sub(window)..];
        let r = |n: u64| BigRational::from_integer(BigInt::from(n));
        let order = |ctx: &[u8]| -> (Vec<u64>, u64) {
            let mut c = vec![0u64; 256];
            let mut n = 0;
            if win.len() >= ctx.len() {
                for j in ctx.len()..win.len() {
                    if win[j - ctx.len()..j] == *ctx {
                        c[win[j] as usize] += 1;
                        n += 1;
                    }
                }
            }
            (c, n)
        };
        let (c0, n0) = order(&[]);
        let (c1, n1) = if !win.is_empty() { order(&win[win.len() - 1..]) } else { (vec![0; 256], 0) };
        let (c2, n2) = if win.len() >= 2 { order(&win[win.len() - 2..]) } else { (vec![0; 256], 0) };
        (0..256)
            .map(|i| {
                let p = |c: &[u64], n: u64| (r(s * c[i]) + r(1)) / (r(s * n) + r(256));
                r(6) / r(10) * p(&c2, n2) + r(3) / r(10) * p(&c1, n1) + r(1) / r(10) * p(&c0, n0)
            })
            .collect()
    }

    fn oracle_frequencies(probs: &[BigRational]) -> Vec<u64> {
        let budget = BigRational::from_integer(BigInt::from(M - 256));
        let mut f: Vec<u64> = probs
            .iter()
            .map(|p| (p * &budget).floor().to_integer().try_into().unwrap())
            .collect();
        let eligible: Vec<usize> = (0..256).filter(|&i| f[i] > 0).collect();
        for x in f.iter_mut() {
            *x = (*x).max(1);
        }
        let mut order = eligible.clone();
        order.sort_by(|&a, &b| probs[b].cmp(&probs[a]).then(a.cmp(&b)));
        let mut rem = M - f.iter().sum::<u64>();
        while rem > 0 {
            for &i in &order {
                if rem == 0 {
                    break;
                }
                f[i] += 1;
                rem -= 1;
            }
        }
        f
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn matches_recount_oracle(
            stream in proptest::collection::vec(prop_oneof![0u8..4, any::<u8>()], 0..80),
            window in 0u32..24,
            smoothing in prop_oneof![Just(1u32), Just(32u32), 1u32..32],
        ) {
            let p = AdaptiveBytePredictor::with_smoothing(window, M, smoothing).unwrap();
            let mut s = p.new_session();
            for (j, &b) in stream.iter().enumerate() {
                if j % 7 == 0 || j + 1 == stream.len() {
                    let got: Vec<u64> = s.next_distribution().unwrap().frequencies().collect();
                    let want = oracle_frequencies(&oracle_probs(&stream[..j], window as usize, smoothing as u64));
                    prop_assert_eq!(got, want);
                }
                s.observe(b as u32).unwrap();
            }
        }

        #[test]
        fn depends_only_on_window(
            prefix_a in proptest::collection::vec(any::<u8>(), 0..40),
            prefix_b in proptest::collection::vec(any::<u8>(), 0..40),
            tail in proptest::collection::vec(0u8..8, 16..40),
        ) {
            let p = AdaptiveBytePredictor::new(16, M);
            let run = |prefix: &[u8]| {
                let mut s = p.new_session();
                for &b in prefix.iter().chain(&tail) {
                    s.observe(b as u32).unwrap();
                }
                s.next_distribution().unwrap()
            };
            prop_assert_eq!(run(&prefix_a), run(&prefix_b));
        }
    }
}
