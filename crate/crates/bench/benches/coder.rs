use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use hnlc_core::predictor::synthetic_logits;
use hnlc_core::quant::{distribution_for, integerize_weights};
use hnlc_core::{CodingDistribution, RangeDecoder, RangeEncoder, DEFAULT_TOTAL_MASS};

const SYMBOLS: usize = 1 << 16;

fn skewed(vocab: usize) -> CodingDistribution {
    let weights: Vec<u64> = (0..vocab as u64).map(|i| 1 + 4096 / (i + 1)).collect();
    integerize_weights(&weights, DEFAULT_TOTAL_MASS).unwrap()
}

fn symbols(vocab: usize) -> Vec<usize> {
    let mut x = 0x9e37_79b9_7f4a_7c15u64;
    (0..SYMBOLS)
        .map(|_| {
            x ^= x << 13;
            x ^= x >> 7;
            x ^= x << 17;
            // Low ranks dominate, like the table.
            ((x % 64) * (x >> 58) % vocab as u64) as usize
        })
        .collect()
}

fn range_coder(c: &mut Criterion) {
    let mut g = c.benchmark_group("range_coder");
    g.throughput(Throughput::Elements(SYMBOLS as u64));
    for vocab in [2usize, 256, 32_000] {
        let dist = skewed(vocab);
        let syms = symbols(vocab);
        g.bench_with_input(BenchmarkId::new("encode", vocab), &syms, |b, syms| {
            b.iter(|| {
                let mut enc = RangeEncoder::new();
                for &s in syms {
                    enc.encode(&dist, s).unwrap();
                }
                enc.finalize().unwrap()
            })
        });
        let mut enc = RangeEncoder::new();
        for &s in &syms {
            enc.encode(&dist, s).unwrap();
        }
        let stream = enc.finalize().unwrap();
        g.bench_with_input(BenchmarkId::new("decode", vocab), &stream, |b, stream| {
            b.iter(|| {
                let mut dec = RangeDecoder::from_bitstream(stream);
                (0..SYMBOLS).map(|_| dec.decode(&dist).unwrap()).sum::<usize>()
            })
        });
    }
    g.finish();
}

fn distributions(c: &mut Criterion) {
    let mut g = c.benchmark_group("distribution");
    let logits = synthetic_logits(42, 256, 7);
    g.bench_function("quantized/256", |b| b.iter(|| distribution_for(&logits, 3, DEFAULT_TOTAL_MASS, true).unwrap()));
    g.bench_function("raw/256", |b| b.iter(|| distribution_for(&logits, 3, DEFAULT_TOTAL_MASS, false).unwrap()));
    let weights: Vec<u64> = (0..256u64).map(|i| (i * 2_654_435_761) % 10_000 + 1).collect();
    g.bench_function("weights/256", |b| b.iter(|| integerize_weights(&weights, DEFAULT_TOTAL_MASS).unwrap()));
    g.finish();
}

criterion_group!(benches, range_coder, distributions);
criterion_main!(benches);
