//! Block routing, segmentation with context grafts, parallel encode and
//! ordered assembly, and the matching decoder.

use std::ops::Range;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use sha2::{Digest, Sha256};

use crate::coder::{RangeDecoder, RangeEncoder, DEFAULT_TOTAL_MASS, MAX_TOTAL_MASS};
use crate::container::{Archive, ArchiveHeader, BlockDescriptor, ConfigEcho, Footer};
use crate::error::{Error, Result};
use crate::predictor::{ModelParams, Predictor};
use crate::router::{
    block_spans, legacy_compress, legacy_decompress, legacy_version, route_blocks, Route, RouteDecision, RouteMode,
    Thresholds, LEGACY_CODEC_ZSTD,
};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PipelineConfig {
    /// Target tokens per segment (L).
    pub segment_tokens: u32,
    /// Graft tokens carried over from the previous segment (K).
    pub graft_tokens: u32,
    /// Predictor context window (W).
    pub window: u32,
    pub workers: usize,
    pub grid_k: u8,
    pub quantize: bool,
    pub thresholds: Thresholds,
    pub total_mass: u64,
    pub block_bytes: u32,
    pub route_mode: RouteMode,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            segment_tokens: 2048,
            graft_tokens: 128,
            window: 2048,
            workers: 1,
            grid_k: 3,
            quantize: true,
            thresholds: Thresholds::default(),
            total_mass: DEFAULT_TOTAL_MASS,
            block_bytes: 65536,
            route_mode: RouteMode::PerBlock,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.segment_tokens == 0 {
            return bad("segment length L must be at least 1".into());
        }
        if self.graft_tokens >= self.segment_tokens {
            return bad(format!("graft K={} must be below L={}", self.graft_tokens, self.segment_tokens));
        }
        if self.graft_tokens > u16::MAX as u32 {
            return bad(format!("graft K={} exceeds {}", self.graft_tokens, u16::MAX));
        }
        if self.segment_tokens > self.window {
            return bad(format!("L={} exceeds the window W={}", self.segment_tokens, self.window));
        }
        if self.workers == 0 {
            return bad("at least one worker is required".into());
        }
        if !(crate::quant::MIN_GRID_K..=crate::quant::MAX_GRID_K).contains(&self.grid_k) {
            return Err(Error::InvalidGrid(self.grid_k));
        }
        if !(1 << 16..=MAX_TOTAL_MASS).contains(&self.total_mass) {
            return bad(format!("total mass {} outside 2^16..=2^32", self.total_mass));
        }
        if self.block_bytes == 0 {
            return bad("block size must be positive".into());
        }
        Thresholds::new(self.thresholds.tau_min_micro, self.thresholds.tau_max_micro)?;
        Ok(())
    }

    pub fn model_params(&self) -> ModelParams {
        ModelParams {
            window: self.window,
            grid_k: self.grid_k,
            total_mass: self.total_mass,
            quantize: self.quantize,
            ..ModelParams::default()
        }
    }

    pub fn echo(&self) -> ConfigEcho {
        ConfigEcho {
            segment_tokens: self.segment_tokens,
            graft_tokens: self.graft_tokens,
            window: self.window,
            grid_k: self.grid_k,
            quantize: self.quantize,
            total_mass: self.total_mass,
            thresholds: self.thresholds,
            block_bytes: self.block_bytes,
            route_mode: self.route_mode,
        }
    }

    /// Decode-side configuration taken from an archive header.
    pub fn from_echo(echo: &ConfigEcho, workers: usize) -> Self {
        Self {
            segment_tokens: echo.segment_tokens,
            graft_tokens: echo.graft_tokens,
            window: echo.window,
            workers: workers.max(1),
            grid_k: echo.grid_k,
            quantize: echo.quantize,
            thresholds: echo.thresholds,
            total_mass: echo.total_mass,
            block_bytes: echo.block_bytes,
            route_mode: echo.route_mode,
        }
    }
}

/// Token index ranges of one segment within its routed run.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SegmentSpan {
    pub graft: Range<usize>,
    pub targets: Range<usize>,
}

/// Splits `n` tokens into target runs of `l`, each grafted with up to `k`
/// preceding tokens.
pub fn segment(n: usize, l: usize, k: usize) -> Vec<SegmentSpan> {
    assert!(l >= 1 && k < l, "segment needs L >= 1 and K < L");
    (0..n)
        .step_by(l)
        .map(|start| SegmentSpan { graft: start - k.min(start)..start, targets: start..(start + l).min(n) })
        .collect()
}

/// Coded bytes plus the largest predictor and coder footprint seen.
pub struct EncodedSegment {
    pub payload: Vec<u8>,
    pub peak_state_bytes: usize,
}

const STATE_SAMPLE: usize = 512;

pub fn encode_segment(
    predictor: &dyn Predictor,
    ordinal: u32,
    graft: &[u32],
    targets: &[u32],
) -> Result<EncodedSegment> {
    let mut session = predictor.session(ordinal)?;
    for &t in graft {
        session.observe(t)?;
    }
    let mut enc = RangeEncoder::new();
    let mut peak = 0;
    for (i, &t) in targets.iter().enumerate() {
        let dist = session.next_distribution()?;
        enc.encode(&dist, t as usize)?;
        session.observe(t)?;
        if i % STATE_SAMPLE == 0 || i + 1 == targets.len() {
            peak = peak.max(session.state_bytes() + enc.heap_bytes() + dist.heap_bytes());
        }
    }
    Ok(EncodedSegment { payload: enc.finalize()?.payload, peak_state_bytes: peak })
}

pub fn decode_segment(
    predictor: &dyn Predictor,
    ordinal: u32,
    graft: &[u32],
    payload: &[u8],
    target_count: usize,
) -> Result<Vec<u32>> {
    let mut session = predictor.session(ordinal)?;
    for &t in graft {
        session.observe(t)?;
    }
    let mut dec = RangeDecoder::new(payload, target_count as u64);
    let mut out = Vec::with_capacity(target_count);
    for _ in 0..target_count {
        let dist = session.next_distribution()?;
        let t = dec.decode(&dist)? as u32;
        session.observe(t)?;
        out.push(t);
    }
    Ok(out)
}

/// Runs `f(0..n)` on up to `workers` scoped threads pulling indices from a
/// shared counter. Results come back in index order; on failure the error of
/// the lowest failing index is returned.
pub fn run_jobs<T, F>(n: usize, workers: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync,
{
    if workers <= 1 || n <= 1 {
        return (0..n).map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let failed = AtomicBool::new(false);
    let slots: Vec<Mutex<Option<Result<T>>>> = (0..n).map(|_| Mutex::new(None)).collect();
    std::thread::scope(|s| {
        for _ in 0..workers.min(n) {
            s.spawn(|| {
                while !failed.load(Ordering::Relaxed) {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    if i >= n {
                        break;
                    }
                    let r = f(i);
                    if r.is_err() {
                        failed.store(true, Ordering::Relaxed);
                    }
                    *slots[i].lock().unwrap() = Some(r);
                }
            });
        }
    });
    let mut out = Vec::with_capacity(n);
    for slot in slots {
        match slot.into_inner().unwrap() {
            Some(r) => out.push(r?),
            None => unreachable!("jobs below a failure always complete"),
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CompressReport {
    /// Scout blocks per final route, indexed by `Route as usize`.
    pub blocks: [usize; 3],
    /// Source bytes per final route.
    pub bytes: [u64; 3],
    /// Payload bytes per final route.
    pub payload_bytes: [u64; 3],
    pub neural_segments: usize,
    /// Blocks routed neural that fell back because tokenization failed.
    pub tokenizer_fallbacks: usize,
    /// Largest per-segment predictor plus coder footprint.
    pub peak_state_bytes: usize,
    pub archive_bytes: usize,
    pub route_time: Duration,
    pub code_time: Duration,
}

impl CompressReport {
    pub fn ratio(&self, original: usize) -> f64 {
        original as f64 / self.archive_bytes.max(1) as f64
    }
}

pub struct Compressed {
    pub archive: Archive,
    pub report: CompressReport,
}

impl Compressed {
    pub fn to_bytes(&self) -> Vec<u8> {
        self.archive.to_bytes()
    }
}

struct Run {
    blocks: Range<usize>,
    tokens: Vec<u32>,
    segments: Vec<SegmentSpan>,
    /// Source bytes covered by each segment's targets.
    segment_bytes: Vec<Range<usize>>,
    first_ordinal: u32,
}

enum Unit {
    Stored(usize),
    Legacy(usize),
    Segment { run: usize, index: usize },
}

/// Contiguous neural blocks as index ranges into `decisions`.
fn neural_runs(decisions: &[RouteDecision]) -> Vec<Range<usize>> {
    let mut runs = Vec::new();
    let mut i = 0;
    while i < decisions.len() {
        if decisions[i].route == Route::Neural {
            let start = i;
            while i < decisions.len() && decisions[i].route == Route::Neural {
                i += 1;
            }
            runs.push(start..i);
        } else {
            i += 1;
        }
    }
    runs
}

/// Segments of a run and the source bytes each one covers.
type RunPlan = (Vec<SegmentSpan>, Vec<Range<usize>>);

/// Splits a run's tokens into segments and maps each segment back to the
/// source bytes it covers. `None` when the tokenizer is not additive over
/// the segment cuts.
fn plan_run(
    data: &[u8],
    bytes: Range<usize>,
    tokens: &[u32],
    predictor: &dyn Predictor,
    cfg: &PipelineConfig,
) -> Result<Option<RunPlan>> {
    let vocab = predictor.identity().vocab_size;
    if let Some(&bad) = tokens.iter().find(|&&t| t >= vocab) {
        return Err(Error::SymbolOutOfRange { symbol: bad as usize, vocab: vocab as usize });
    }
    let segments = segment(tokens.len(), cfg.segment_tokens as usize, cfg.graft_tokens as usize);
    let mut spans = Vec::with_capacity(segments.len());
    if predictor.byte_tokens() {
        for s in &segments {
            spans.push(bytes.start + s.targets.start..bytes.start + s.targets.end);
        }
        return Ok(Some((segments, spans)));
    }
    let mut at = bytes.start;
    for s in &segments {
        let out = predictor.detokenize(&tokens[s.targets.clone()])?;
        if out.is_empty() || at + out.len() > bytes.end || data[at..at + out.len()] != out[..] {
            return Ok(None);
        }
        spans.push(at..at + out.len());
        at += out.len();
    }
    Ok((at == bytes.end).then_some((segments, spans)))
}

pub fn compress(data: &[u8], cfg: &PipelineConfig, predictor: &dyn Predictor) -> Result<Compressed> {
    cfg.validate()?;
    if data.len() as u64 > u32::MAX as u64 * u32::MAX as u64 {
        return Err(Error::InvalidConfig("input too large".into()));
    }
    let t0 = Instant::now();
    let mut decisions = route_blocks(data, cfg.block_bytes as usize, &cfg.thresholds, cfg.route_mode)?;
    let mut report = CompressReport::default();

    let mut runs: Vec<Run> = Vec::new();
    let mut ordinal = 0u32;
    for blocks in neural_runs(&decisions) {
        let mut tokenized = Vec::with_capacity(blocks.len());
        for b in blocks.clone() {
            let d = &decisions[b];
            tokenized.push(predictor.tokenize(&data[d.offset..d.offset + d.len])?.filter(|t| !t.is_empty()));
        }
        let mut b = blocks.start;
        while b < blocks.end {
            if tokenized[b - blocks.start].is_none() {
                decisions[b].route = Route::Legacy;
                report.tokenizer_fallbacks += 1;
                b += 1;
                continue;
            }
            let start = b;
            let mut tokens = Vec::new();
            while b < blocks.end {
                match tokenized[b - blocks.start].take() {
                    Some(t) => tokens.extend(t),
                    None => break,
                }
                b += 1;
            }
            let sub = start..b;
            let bytes = decisions[start].offset..decisions[b - 1].offset + decisions[b - 1].len;
            match plan_run(data, bytes, &tokens, predictor, cfg)? {
                Some((segments, segment_bytes)) => {
                    let first_ordinal = ordinal;
                    ordinal = u32::try_from(segments.len())
                        .ok()
                        .and_then(|n| ordinal.checked_add(n))
                        .ok_or_else(|| Error::InvalidConfig("too many segments".into()))?;
                    runs.push(Run { blocks: sub, tokens, segments, segment_bytes, first_ordinal });
                }
                None => {
                    for d in &mut decisions[sub] {
                        d.route = Route::Legacy;
                        report.tokenizer_fallbacks += 1;
                    }
                }
            }
        }
    }
    report.route_time = t0.elapsed();

    let mut units = Vec::new();
    let mut next_run = 0;
    let mut b = 0;
    while b < decisions.len() {
        if next_run < runs.len() && runs[next_run].blocks.start == b {
            for index in 0..runs[next_run].segments.len() {
                units.push(Unit::Segment { run: next_run, index });
            }
            b = runs[next_run].blocks.end;
            next_run += 1;
        } else {
            units.push(match decisions[b].route {
                Route::Stored => Unit::Stored(b),
                _ => Unit::Legacy(b),
            });
            b += 1;
        }
    }

    let t1 = Instant::now();
    let coded = run_jobs(units.len(), cfg.workers, |i| -> Result<(BlockDescriptor, Vec<u8>, usize)> {
        match units[i] {
            Unit::Stored(b) | Unit::Legacy(b) => {
                let d = &decisions[b];
                let block = &data[d.offset..d.offset + d.len];
                let legacy = match units[i] {
                    Unit::Legacy(_) => legacy_compress(block)?,
                    _ => None,
                };
                let (route, payload) = match legacy {
                    Some(p) => (Route::Legacy, p),
                    None => (Route::Stored, block.to_vec()),
                };
                let desc = BlockDescriptor {
                    route,
                    original_len: d.len as u32,
                    payload_len: payload.len() as u32,
                    graft_len: 0,
                    target_count: 0,
                    crc32: crc32fast::hash(block),
                };
                Ok((desc, payload, 0))
            }
            Unit::Segment { run, index } => {
                let r = &runs[run];
                let s = &r.segments[index];
                let enc = encode_segment(
                    predictor,
                    r.first_ordinal + index as u32,
                    &r.tokens[s.graft.clone()],
                    &r.tokens[s.targets.clone()],
                )?;
                let bytes = &data[r.segment_bytes[index].clone()];
                let desc = BlockDescriptor {
                    route: Route::Neural,
                    original_len: u32::try_from(bytes.len())
                        .map_err(|_| Error::InvalidConfig("segment longer than 4 GiB".into()))?,
                    payload_len: u32::try_from(enc.payload.len())
                        .map_err(|_| Error::InvalidConfig("segment payload longer than 4 GiB".into()))?,
                    graft_len: s.graft.len() as u16,
                    target_count: s.targets.len() as u32,
                    crc32: crc32fast::hash(bytes),
                };
                Ok((desc, enc.payload, enc.peak_state_bytes))
            }
        }
    })?;
    report.code_time = t1.elapsed();

    let mut descriptors = Vec::with_capacity(coded.len());
    let mut payloads = Vec::with_capacity(coded.iter().map(|c| c.1.len()).sum());
    let mut payload_hash = Sha256::new();
    for (unit, (desc, payload, peak)) in units.iter().zip(coded) {
        if let Unit::Legacy(b) = unit {
            decisions[*b].route = desc.route;
        }
        report.bytes[desc.route as usize] += desc.original_len as u64;
        report.payload_bytes[desc.route as usize] += desc.payload_len as u64;
        report.peak_state_bytes = report.peak_state_bytes.max(peak);
        payload_hash.update(&payload);
        payloads.extend_from_slice(&payload);
        descriptors.push(desc);
    }
    for d in &decisions {
        report.blocks[d.route as usize] += 1;
    }
    report.neural_segments = runs.iter().map(|r| r.segments.len()).sum();

    let archive = Archive {
        header: ArchiveHeader {
            identity: predictor.identity(),
            config: cfg.echo(),
            legacy_codec: LEGACY_CODEC_ZSTD,
            legacy_version: legacy_version(),
            block_count: u32::try_from(descriptors.len())
                .map_err(|_| Error::InvalidConfig("too many blocks".into()))?,
            source_len: data.len() as u64,
            payload_len: payloads.len() as u64,
        },
        descriptors,
        payloads,
        footer: Footer { source_sha256: Sha256::digest(data).into(), payload_sha256: payload_hash.finalize().into() },
    };
    report.archive_bytes = archive.encoded_len();
    Ok(Compressed { archive, report })
}

pub fn decompress(bytes: &[u8], predictor: Option<&dyn Predictor>, workers: usize) -> Result<Vec<u8>> {
    decompress_archive(&Archive::from_bytes(bytes)?, predictor, workers)
}

fn checksum(location: String) -> Error {
    Error::ChecksumMismatch { location }
}

pub fn decompress_archive(archive: &Archive, predictor: Option<&dyn Predictor>, workers: usize) -> Result<Vec<u8>> {
    let h = &archive.header;
    let payload_sha: [u8; 32] = Sha256::digest(&archive.payloads).into();
    if payload_sha != archive.footer.payload_sha256 {
        return Err(checksum("payload digest".into()));
    }
    let descs = &archive.descriptors;
    let ranges = archive.payload_ranges();
    let predictor = if descs.iter().any(|d| d.route == Route::Neural) {
        let p = predictor.ok_or_else(|| {
            Error::ExternalPredictorUnavailable(format!("archive needs predictor {}", h.identity))
        })?;
        if p.identity() != h.identity {
            return Err(Error::IdentityMismatch { expected: h.identity.to_string(), found: p.identity().to_string() });
        }
        Some(p)
    } else {
        None
    };

    let legacy: Vec<usize> = (0..descs.len()).filter(|&i| descs[i].route != Route::Neural).collect();
    let decoded = run_jobs(legacy.len(), workers, |j| {
        let i = legacy[j];
        let d = &descs[i];
        let payload = &archive.payloads[ranges[i].clone()];
        let out = match d.route {
            Route::Stored => payload.to_vec(),
            _ => legacy_decompress(payload, d.original_len as usize)
                .map_err(|e| checksum(format!("block {i}: {e}")))?,
        };
        if crc32fast::hash(&out) != d.crc32 {
            return Err(checksum(format!("block {i}")));
        }
        Ok(out)
    })?;
    let mut legacy_out = decoded.into_iter();

    let mut out = Vec::with_capacity(h.source_len as usize);
    let mut run_tokens: Vec<u32> = Vec::new();
    let mut ordinal = 0u32;
    let k = h.config.graft_tokens as usize;
    for (i, d) in descs.iter().enumerate() {
        if d.route != Route::Neural {
            run_tokens.clear();
            out.extend(legacy_out.next().expect("one decoded block per legacy descriptor"));
            continue;
        }
        let p = predictor.expect("checked above");
        let graft_len = k.min(run_tokens.len());
        if d.graft_len as usize != graft_len {
            return Err(Error::TableInconsistent(format!(
                "descriptor {i}: graft of {} tokens where {graft_len} precede",
                d.graft_len
            )));
        }
        let graft = &run_tokens[run_tokens.len() - graft_len..];
        let tokens = decode_segment(p, ordinal, graft, &archive.payloads[ranges[i].clone()], d.target_count as usize)?;
        let bytes = p.detokenize(&tokens)?;
        if bytes.len() != d.original_len as usize || crc32fast::hash(&bytes) != d.crc32 {
            return Err(checksum(format!("segment {ordinal} (descriptor {i})")));
        }
        out.extend_from_slice(&bytes);
        run_tokens.extend_from_slice(&tokens);
        ordinal += 1;
    }
    let source_sha: [u8; 32] = Sha256::digest(&out).into();
    if source_sha != archive.footer.source_sha256 {
        return Err(checksum("source digest".into()));
    }
    Ok(out)
}

/// Outcome of re-applying the routing rule to a decoded archive.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RouteAudit {
    pub blocks: usize,
    pub matching: usize,
    /// Neural by rule, coded legacy after a tokenizer rejection.
    pub fallbacks: usize,
    /// Block indices whose recorded route the rule forbids.
    pub violations: Vec<usize>,
}

/// Recomputes every block's route from `source` and checks it against the
/// routes recorded in `archive`.
pub fn audit_routes(archive: &Archive, source: &[u8]) -> Result<RouteAudit> {
    let c = &archive.header.config;
    let expected = route_blocks(source, c.block_bytes as usize, &c.thresholds, c.route_mode)?;
    let mut recorded: Vec<Route> = Vec::with_capacity(expected.len());
    let mut neural_bytes = 0usize;
    let flush = |n: &mut usize, recorded: &mut Vec<Route>| {
        let start: usize = recorded.len();
        let spans = block_spans(source.len(), c.block_bytes as usize).skip(start);
        let mut left = *n;
        for (_, len) in spans {
            if left == 0 {
                break;
            }
            recorded.push(Route::Neural);
            left = left.saturating_sub(len);
        }
        *n = 0;
    };
    for d in &archive.descriptors {
        if d.route == Route::Neural {
            neural_bytes += d.original_len as usize;
        } else {
            flush(&mut neural_bytes, &mut recorded);
            recorded.push(d.route);
        }
    }
    flush(&mut neural_bytes, &mut recorded);
    if recorded.len() != expected.len() {
        return Err(Error::TableInconsistent(format!(
            "archive describes {} blocks, source splits into {}",
            recorded.len(),
            expected.len()
        )));
    }
    let mut audit = RouteAudit { blocks: expected.len(), ..RouteAudit::default() };
    for (i, (e, &r)) in expected.iter().zip(&recorded).enumerate() {
        match (e.route, r) {
            (a, b) if a == b => audit.matching += 1,
            (Route::Legacy, Route::Stored) => audit.matching += 1,
            (Route::Neural, Route::Legacy | Route::Stored) => audit.fallbacks += 1,
            _ => audit.violations.push(i),
        }
    }
    Ok(audit)
}
