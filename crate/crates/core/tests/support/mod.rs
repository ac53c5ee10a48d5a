//! Shared helpers for the integration suites.
#![allow(dead_code)]

use std::io::{BufReader, BufWriter, Read, Write};
use std::net::TcpListener;
use std::path::PathBuf;
use std::thread;

use hnlc_core::predictor::{PredictorIdentity, PredictorKind};
use hnlc_core::wire::{read_frame, write_frame, Frame, Handshake, ERR_GRID_MISMATCH, ERR_UNSUPPORTED, WIRE_VERSION};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

/// Vocabulary of the mock adapter: 7-bit ASCII, one token per byte.
pub const MOCK_VOCAB: u32 = 128;
pub const MOCK_GRID: u8 = 3;

pub fn mock_identity() -> PredictorIdentity {
    let mut params = b"mock-adapter/v1".to_vec();
    params.push(MOCK_GRID);
    params.extend_from_slice(&MOCK_VOCAB.to_le_bytes());
    PredictorIdentity::hashed(PredictorKind::External, MOCK_VOCAB, &params)
}

/// Scaled grid logits the mock returns; `mock_adapter.py` computes the same.
pub fn mock_logits(context: &[u32]) -> Vec<i32> {
    let a = context.last().copied().unwrap_or(32) as i64;
    let b = context.len().checked_sub(2).map_or(32, |i| context[i]) as i64;
    (0..MOCK_VOCAB as i64)
        .map(|i| {
            let mut v = ((i * 7 + a * 13 + b * 5) % 23) * 150 - 2000;
            if i == (a + 1) % 128 || i == b {
                v += 2500;
            }
            if (97..=122).contains(&i) || i == 32 {
                v += 1500;
            }
            v as i32
        })
        .collect()
}

/// Serves one client connection until it closes.
pub fn serve<R: Read, W: Write>(reader: R, writer: W) {
    let mut r = BufReader::new(reader);
    let mut w = BufWriter::new(writer);
    while let Ok(Some(frame)) = read_frame(&mut r) {
        let reply = match frame {
            Frame::Handshake(h) if h.grid_k != MOCK_GRID => {
                let e = Frame::Error { code: ERR_GRID_MISMATCH, message: format!("grid_k {} != {MOCK_GRID}", h.grid_k) };
                write_frame(&mut w, &e).ok();
                return;
            }
            Frame::Handshake(_) => Frame::Handshake(Handshake {
                version: WIRE_VERSION,
                identity: mock_identity(),
                grid_k: MOCK_GRID,
                vocab_size: MOCK_VOCAB,
            }),
            Frame::Request { id, context } => Frame::Response { id, logits: mock_logits(&context) },
            Frame::Tokenize { id, bytes } => {
                let ok = bytes.iter().all(|&b| b < 0x80);
                Frame::Tokens { id, tokens: ok.then(|| bytes.iter().map(|&b| b as u32).collect()) }
            }
            Frame::Detokenize { id, tokens } => Frame::Bytes { id, bytes: tokens.iter().map(|&t| t as u8).collect() },
            _ => Frame::Error { code: ERR_UNSUPPORTED, message: "unexpected frame".into() },
        };
        if write_frame(&mut w, &reply).is_err() {
            return;
        }
    }
}

/// Starts a TCP mock adapter on an ephemeral port and returns its endpoint.
pub fn spawn_tcp_adapter() -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    thread::spawn(move || {
        for stream in listener.incoming().flatten() {
            let r = stream.try_clone().unwrap();
            thread::spawn(move || serve(r, stream));
        }
    });
    format!("tcp:{addr}")
}

#[cfg(unix)]
pub fn spawn_unix_adapter(path: &std::path::Path) -> String {
    let listener = std::os::unix::net::UnixListener::bind(path).unwrap();
    thread::spawn(move || {
        for stream in listener.incoming().flatten() {
            let r = stream.try_clone().unwrap();
            thread::spawn(move || serve(r, stream));
        }
    });
    format!("unix:{}", path.display())
}

pub fn mock_adapter_script() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/support/mock_adapter.py")
}

pub fn corpus_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../corpus/canterbury")
}

pub fn corpus_file(name: &str) -> Vec<u8> {
    std::fs::read(corpus_dir().join(name)).unwrap_or_else(|e| panic!("reading corpus file {name}: {e}"))
}

/// All corpus files, sorted by name.
pub fn corpus() -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<(String, Vec<u8>)> = std::fs::read_dir(corpus_dir())
        .unwrap()
        .flatten()
        .map(|e| (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap()))
        .collect();
    out.sort();
    out
}

/// English-like text assembled from corpus lines, deterministic in `seed`.
pub fn synthetic_text(len: usize, seed: u64) -> Vec<u8> {
    let text = corpus_file("alice29.txt");
    let lines: Vec<&[u8]> = text.split(|&b| b == b'\n').filter(|l| l.len() > 8).collect();
    let mut rng = StdRng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(len + 128);
    while out.len() < len {
        out.extend_from_slice(lines[rng.gen_range(0..lines.len())]);
        out.push(b'\n');
    }
    out.truncate(len);
    out
}

pub fn random_bytes(len: usize, seed: u64) -> Vec<u8> {
    let mut v = vec![0u8; len];
    StdRng::seed_from_u64(seed).fill(&mut v[..]);
    v
}

/// Comma-separated rows of counters, dates and amounts, the kind of
/// columnar dump a spreadsheet export produces.
pub fn spreadsheet_like(len: usize, seed: u64) -> Vec<u8> {
    let mut rng = StdRng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(len + 64);
    let mut row = 0u64;
    out.extend_from_slice(b"id,date,region,units,unit_price,total\n");
    while out.len() < len {
        let units = rng.gen_range(1..50u32);
        let price = rng.gen_range(100..10_000u32);
        let region = ["north", "south", "east", "west"][rng.gen_range(0..4)];
        let line = format!(
            "{row},2024-{:02}-{:02},{region},{units},{}.{:02},{}.{:02}\n",
            1 + row % 12,
            1 + row % 28,
            price / 100,
            price % 100,
            units * price / 100,
            units * price % 100
        );
        out.extend_from_slice(line.as_bytes());
        row += 1;
    }
    out.truncate(len);
    out
}

/// Fixed-width little-endian records with sparse text cells, resembling a
/// binary spreadsheet dump.
pub fn spreadsheet_binary(len: usize, seed: u64) -> Vec<u8> {
    let mut rng = StdRng::seed_from_u64(seed);
    let names: [&[u8; 8]; 4] = [b"Smith   ", b"Jones   ", b"Brown   ", b"Taylor  "];
    let mut out = Vec::with_capacity(len + 64);
    let mut row = 0u32;
    while out.len() < len {
        out.extend_from_slice(&0x0203u16.to_le_bytes());
        out.extend_from_slice(&row.to_le_bytes());
        out.extend_from_slice(&(rng.gen_range(0..2000u32) as f64 * 0.25).to_le_bytes());
        out.extend_from_slice(&rng.gen_range(0..100u16).to_le_bytes());
        out.extend_from_slice(names[rng.gen_range(0..4)]);
        out.extend_from_slice(&[0u8; 6]);
        row += 1;
    }
    out.truncate(len);
    out
}
