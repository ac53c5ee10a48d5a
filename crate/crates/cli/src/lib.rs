//! Command-line driver for the hnlc hybrid compressor.

pub mod bench;
pub mod inspect;

use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use hnlc_core::container::Archive;
use hnlc_core::pipeline::{compress, decompress_archive, CompressReport, PipelineConfig};
use hnlc_core::predictor::{
    Drift, Fixture, FixtureRecorder, ModelParams, Predictor, PredictorKind, PredictorSpec, ReplayPredictor,
    ENDPOINT_ENV,
};
use hnlc_core::router::{Route, RouteMode, Thresholds};

#[derive(Debug, Parser)]
#[command(name = "hnlc", version, about = "Hybrid neural/legacy lossless compressor")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compress a file into an archive.
    Compress(CompressArgs),
    /// Restore the original bytes from an archive.
    Decompress(DecompressArgs),
    /// Print an archive's header and block table.
    Inspect(inspect::InspectArgs),
    /// Compare methods over a corpus.
    Bench(bench::BenchArgs),
    /// Replay a recorded logit fixture against an archive.
    RecordCheck(RecordCheckArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum OnOff {
    On,
    Off,
}

/// Pipeline hyperparameters.
#[derive(Clone, Debug, Args)]
pub struct PipelineArgs {
    /// Scout block size in bytes.
    #[arg(long, default_value_t = 65536)]
    pub block_bytes: u32,
    /// Target tokens per neural segment (L).
    #[arg(short = 'L', long, default_value_t = 2048)]
    pub segment_tokens: u32,
    /// Tokens grafted from the previous segment (K).
    #[arg(short = 'K', long = "graft", default_value_t = 128)]
    pub graft_tokens: u32,
    /// Predictor context window (W).
    #[arg(short = 'W', long, default_value_t = 2048)]
    pub window: u32,
    /// Logit grid exponent: logits are snapped to multiples of 10^-k.
    #[arg(long, default_value_t = 3)]
    pub grid_k: u8,
    /// Lower routing threshold on the scout ratio.
    #[arg(long, default_value_t = 1.05)]
    pub tau_min: f64,
    /// Upper routing threshold on the scout ratio.
    #[arg(long, default_value_t = 3.0)]
    pub tau_max: f64,
    /// Routing granularity.
    #[arg(long, default_value = "block", value_parser = parse_route_mode)]
    pub route_mode: RouteMode,
    /// Logit quantization.
    #[arg(long, value_enum, default_value_t = OnOff::On)]
    pub quantize: OnOff,
}

fn parse_route_mode(s: &str) -> std::result::Result<RouteMode, String> {
    s.parse().map_err(|e: hnlc_core::Error| e.to_string())
}

impl PipelineArgs {
    pub fn config(&self, workers: usize) -> Result<PipelineConfig> {
        let cfg = PipelineConfig {
            segment_tokens: self.segment_tokens,
            graft_tokens: self.graft_tokens,
            window: self.window,
            workers,
            grid_k: self.grid_k,
            quantize: self.quantize == OnOff::On,
            thresholds: Thresholds::from_f64(self.tau_min, self.tau_max)?,
            block_bytes: self.block_bytes,
            route_mode: self.route_mode,
            ..PipelineConfig::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Predictor selection shared by the coding commands.
#[derive(Clone, Debug, Args)]
pub struct PredictorArgs {
    /// builtin | synthetic[:SEED[:grid]] | replay:PATH | external[:ENDPOINT].
    /// A bare `external` reads the endpoint from HNLC_EXTERNAL_ENDPOINT.
    #[arg(long)]
    pub predictor: Option<String>,
    /// Seed for a bare `synthetic` predictor.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Uniform logit noise added before quantization, emulating device drift.
    #[arg(long, default_value_t = 0.0)]
    pub drift_epsilon: f64,
    #[arg(long, default_value_t = 0)]
    pub drift_seed: u64,
    /// Write the grid logits consumed during coding to this fixture file.
    #[arg(long)]
    pub record: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
}

impl PredictorArgs {
    pub fn spec(&self, default: PredictorSpec) -> Result<PredictorSpec> {
        let Some(s) = &self.predictor else {
            return Ok(match (default, self.seed) {
                (PredictorSpec::Synthetic { on_grid, .. }, Some(seed)) => PredictorSpec::Synthetic { seed, on_grid },
                (d, _) => d,
            });
        };
        let spec: PredictorSpec = s.parse()?;
        Ok(match (spec, self.seed) {
            (PredictorSpec::Synthetic { on_grid, .. }, Some(seed)) if s == "synthetic" => {
                PredictorSpec::Synthetic { seed, on_grid }
            }
            (spec, _) => spec,
        })
    }

    pub fn drift(&self) -> Result<Option<Drift>> {
        if !(self.drift_epsilon.is_finite() && self.drift_epsilon >= 0.0) {
            bail!("drift epsilon must be a finite non-negative number");
        }
        Ok((self.drift_epsilon > 0.0).then_some(Drift { epsilon: self.drift_epsilon, seed: self.drift_seed }))
    }
}

/// A built predictor plus the recorder feeding `--record`, if any.
pub struct Model {
    pub predictor: Arc<dyn Predictor>,
    pub recorder: Option<Arc<FixtureRecorder>>,
    pub grid_k: u8,
}

impl Model {
    pub fn build(spec: &PredictorSpec, params: ModelParams, record: bool) -> Result<Self> {
        if matches!(spec, PredictorSpec::External(None)) && std::env::var_os(ENDPOINT_ENV).is_none() {
            bail!("predictor `external` needs an endpoint or {ENDPOINT_ENV}");
        }
        let recorder = record.then(|| Arc::new(FixtureRecorder::new()));
        let grid_k = params.grid_k;
        let params = ModelParams { recorder: recorder.clone(), ..params };
        let predictor = spec.build(&params).with_context(|| format!("building predictor {spec}"))?;
        Ok(Self { predictor, recorder, grid_k })
    }

    pub fn save_recording(&self, path: &Path) -> Result<usize> {
        let rec = self.recorder.as_ref().expect("recording was requested");
        let fixture = rec.to_fixture(self.predictor.identity(), self.grid_k);
        fixture.save(path).with_context(|| format!("writing fixture {}", path.display()))?;
        Ok(fixture.records.len())
    }
}

#[derive(Debug, Args)]
pub struct CompressArgs {
    /// Input file, or `-` for stdin.
    pub input: PathBuf,
    /// Output archive; defaults to INPUT.hnlc, or stdout for stdin input.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
    #[command(flatten)]
    pub model: PredictorArgs,
}

#[derive(Debug, Args)]
pub struct DecompressArgs {
    /// Archive file, or `-` for stdin.
    pub input: PathBuf,
    /// Output file; defaults to INPUT without `.hnlc`, or stdout.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
    #[command(flatten)]
    pub model: PredictorArgs,
}

#[derive(Debug, Args)]
pub struct RecordCheckArgs {
    /// Archive to decode from the fixture.
    pub archive: PathBuf,
    /// Fixture recorded while compressing.
    #[arg(long)]
    pub fixture: PathBuf,
    /// Second fixture, e.g. recorded while decompressing on another device,
    /// compared record by record against the first.
    #[arg(long)]
    pub against: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
}

pub fn read_input(path: &Path) -> Result<Vec<u8>> {
    if path == Path::new("-") {
        let mut buf = Vec::new();
        io::stdin().read_to_end(&mut buf).context("reading stdin")?;
        return Ok(buf);
    }
    fs::read(path).with_context(|| format!("reading {}", path.display()))
}

fn write_output(path: &Path, bytes: &[u8]) -> Result<()> {
    if path == Path::new("-") {
        let mut out = io::stdout().lock();
        out.write_all(bytes)?;
        return Ok(out.flush()?);
    }
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn default_output(input: &Path, compressing: bool) -> Result<PathBuf> {
    if input == Path::new("-") {
        return Ok(PathBuf::from("-"));
    }
    if compressing {
        let mut s = input.as_os_str().to_owned();
        s.push(".hnlc");
        return Ok(PathBuf::from(s));
    }
    match input.extension() {
        Some(ext) if ext == "hnlc" => Ok(input.with_extension("")),
        _ => bail!("cannot derive an output name from {}; pass --output", input.display()),
    }
}

pub fn route_mix(r: &CompressReport) -> String {
    format!(
        "stored {} / legacy {} / neural {}",
        r.blocks[Route::Stored as usize],
        r.blocks[Route::Legacy as usize],
        r.blocks[Route::Neural as usize]
    )
}

pub fn bpc(compressed: usize, original: usize) -> f64 {
    if original == 0 {
        0.0
    } else {
        8.0 * compressed as f64 / original as f64
    }
}

fn run_compress(a: &CompressArgs) -> Result<()> {
    let cfg = a.pipeline.config(a.model.workers)?;
    let params = ModelParams { drift: a.model.drift()?, ..cfg.model_params() };
    let spec = a.model.spec(PredictorSpec::Builtin)?;
    let model = Model::build(&spec, params, a.model.record.is_some())?;
    let data = read_input(&a.input)?;
    let t = Instant::now();
    let c = compress(&data, &cfg, model.predictor.as_ref())?;
    let elapsed = t.elapsed();
    let out = match &a.output {
        Some(p) => p.clone(),
        None => default_output(&a.input, true)?,
    };
    write_output(&out, &c.to_bytes())?;
    let r = &c.report;
    eprintln!(
        "{} -> {} bytes, ratio {:.2}, {:.3} BPC, {}, {} segments, {:.2}s",
        data.len(),
        r.archive_bytes,
        r.ratio(data.len()),
        bpc(r.archive_bytes, data.len()),
        route_mix(r),
        r.neural_segments,
        elapsed.as_secs_f64()
    );
    if r.tokenizer_fallbacks > 0 {
        eprintln!("{} neural blocks fell back to legacy after tokenizer rejection", r.tokenizer_fallbacks);
    }
    if let Some(path) = &a.model.record {
        let n = model.save_recording(path)?;
        eprintln!("recorded {n} logit vectors to {}", path.display());
    }
    Ok(())
}

/// Predictor for decoding `archive`: the requested spec, or the builtin
/// model when the archive was made by it.
fn decode_model(archive: &Archive, args: &PredictorArgs) -> Result<Option<Model>> {
    let needs_model = archive.descriptors.iter().any(|d| d.route == Route::Neural);
    if !needs_model && args.record.is_none() {
        return Ok(None);
    }
    let h = &archive.header;
    let spec = match (&args.predictor, h.identity.kind) {
        (Some(_), _) | (None, PredictorKind::AdaptiveByte) => args.spec(PredictorSpec::Builtin)?,
        (None, kind) => bail!("archive was coded with a {} predictor ({}); pass --predictor", kind.name(), h.identity),
    };
    let cfg = PipelineConfig::from_echo(&h.config, args.workers);
    let params = ModelParams { drift: args.drift()?, ..cfg.model_params() };
    Model::build(&spec, params, args.record.is_some()).map(Some)
}

fn run_decompress(a: &DecompressArgs) -> Result<()> {
    let bytes = read_input(&a.input)?;
    let archive = Archive::from_bytes(&bytes)?;
    let model = decode_model(&archive, &a.model)?;
    let t = Instant::now();
    let out = decompress_archive(&archive, model.as_ref().map(|m| m.predictor.as_ref()), a.model.workers.max(1))?;
    let path = match &a.output {
        Some(p) => p.clone(),
        None => default_output(&a.input, false)?,
    };
    write_output(&path, &out)?;
    eprintln!("{} -> {} bytes, {:.2}s", bytes.len(), out.len(), t.elapsed().as_secs_f64());
    if let (Some(path), Some(m)) = (&a.model.record, &model) {
        let n = m.save_recording(path)?;
        eprintln!("recorded {n} logit vectors to {}", path.display());
    }
    Ok(())
}

/// First disagreement between two fixtures.
#[derive(Debug, PartialEq, Eq)]
pub enum FixtureDiff {
    Identical(usize),
    Header(String),
    Missing { block: u32, position: u32, in_first: bool },
    Logits { block: u32, position: u32, index: usize, first: i32, second: i32 },
}

pub fn diff_fixtures(a: &Fixture, b: &Fixture) -> FixtureDiff {
    if a.identity != b.identity || a.grid_k != b.grid_k {
        return FixtureDiff::Header(format!(
            "{} grid {} vs {} grid {}",
            a.identity, a.grid_k, b.identity, b.grid_k
        ));
    }
    let mut ia = a.records.iter().peekable();
    let mut ib = b.records.iter().peekable();
    loop {
        match (ia.peek(), ib.peek()) {
            (None, None) => return FixtureDiff::Identical(a.records.len()),
            (Some((&(block, position), _)), None) => return FixtureDiff::Missing { block, position, in_first: false },
            (None, Some((&(block, position), _))) => return FixtureDiff::Missing { block, position, in_first: true },
            (Some((ka, va)), Some((kb, vb))) => {
                if ka != kb {
                    let (&(block, position), in_first) = if ka < kb { (*ka, false) } else { (*kb, true) };
                    return FixtureDiff::Missing { block, position, in_first };
                }
                if let Some(index) = va.iter().zip(vb.iter()).position(|(x, y)| x != y) {
                    let &(block, position) = *ka;
                    return FixtureDiff::Logits { block, position, index, first: va[index], second: vb[index] };
                }
                ia.next();
                ib.next();
            }
        }
    }
}

fn run_record_check(a: &RecordCheckArgs) -> Result<()> {
    let archive = Archive::from_bytes(&read_input(&a.archive)?)?;
    let fixture = Fixture::load(&a.fixture).with_context(|| format!("loading {}", a.fixture.display()))?;
    let total_mass = archive.header.config.total_mass;
    if let Some(other) = &a.against {
        let second = Fixture::load(other).with_context(|| format!("loading {}", other.display()))?;
        match diff_fixtures(&fixture, &second) {
            FixtureDiff::Identical(n) => println!("fixtures agree on all {n} logit vectors"),
            FixtureDiff::Header(h) => bail!("fixtures describe different models: {h}"),
            FixtureDiff::Missing { block, position, in_first } => bail!(
                "fixtures diverge at segment {block} token {position}: present only in the {} fixture",
                if in_first { "second" } else { "first" }
            ),
            FixtureDiff::Logits { block, position, index, first, second } => bail!(
                "fixtures diverge at segment {block} token {position}, logit {index}: {first} vs {second}"
            ),
        }
    }
    let replay = ReplayPredictor::from_fixture(fixture, total_mass)?;
    let t = Instant::now();
    let out = decompress_archive(&archive, Some(&replay), a.workers.max(1))?;
    let tokens: u64 = archive.descriptors.iter().map(|d| d.target_count as u64).sum();
    println!(
        "archive decodes from the fixture: {} bytes, {} neural tokens, all checksums pass ({:.2}s)",
        out.len(),
        tokens,
        t.elapsed().as_secs_f64()
    );
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Compress(a) => run_compress(&a),
        Command::Decompress(a) => run_decompress(&a),
        Command::Inspect(a) => inspect::run(&a),
        Command::Bench(a) => bench::run(&a),
        Command::RecordCheck(a) => run_record_check(&a),
    }
}

/// Process exit status for an error: 3 for integrity failures, 4 for a
/// predictor that does not match the archive, 1 otherwise.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    match err.downcast_ref::<hnlc_core::Error>() {
        Some(hnlc_core::Error::ChecksumMismatch { .. }) => 3,
        Some(hnlc_core::Error::IdentityMismatch { .. }) => 4,
        _ => 1,
    }
}
