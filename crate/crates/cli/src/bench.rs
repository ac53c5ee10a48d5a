use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, ValueEnum};
use hnlc_core::pipeline::{compress, decompress_archive, PipelineConfig};
use hnlc_core::predictor::PredictorSpec;
use hnlc_core::router::{Route, RouteMode};

use crate::{bpc, Model, PipelineArgs};

/// Column order of the CSV output.
pub const CSV_HEADER: [&str; 12] = [
    "file",
    "method",
    "original_bytes",
    "compressed_bytes",
    "ratio",
    "bpc",
    "compress_s",
    "decompress_s",
    "stored_blocks",
    "legacy_blocks",
    "neural_blocks",
    "neural_segments",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Method {
    /// Every block stored verbatim.
    Stored,
    /// Every block through the legacy codec.
    Legacy,
    /// Routed, builtin adaptive byte model.
    Builtin,
    /// Routed, synthetic logit model.
    Synthetic,
    /// Routed, logits replayed from a recorded fixture.
    Replay,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Stored => "stored",
            Self::Legacy => "legacy-only",
            Self::Builtin => "hybrid-builtin",
            Self::Synthetic => "hybrid-synthetic",
            Self::Replay => "hybrid-replay",
        })
    }
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Corpus directories or individual files.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    /// Methods to run; replay is added when --fixtures is given.
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [Method::Stored, Method::Legacy, Method::Builtin, Method::Synthetic])]
    pub methods: Vec<Method>,
    /// Directory holding FILE.hnlf fixtures for the replay method.
    #[arg(long)]
    pub fixtures: Option<PathBuf>,
    /// Seed of the synthetic model.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    /// Also write the results as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub file: String,
    pub method: Method,
    pub original: usize,
    pub compressed: usize,
    pub compress_s: f64,
    pub decompress_s: f64,
    pub blocks: [usize; 3],
    pub neural_segments: usize,
}

impl BenchRow {
    pub fn ratio(&self) -> f64 {
        self.original as f64 / self.compressed.max(1) as f64
    }

    fn fields(&self) -> [String; 12] {
        [
            self.file.clone(),
            self.method.to_string(),
            self.original.to_string(),
            self.compressed.to_string(),
            format!("{:.2}", self.ratio()),
            format!("{:.3}", bpc(self.compressed, self.original)),
            format!("{:.3}", self.compress_s),
            format!("{:.3}", self.decompress_s),
            self.blocks[Route::Stored as usize].to_string(),
            self.blocks[Route::Legacy as usize].to_string(),
            self.blocks[Route::Neural as usize].to_string(),
            self.neural_segments.to_string(),
        ]
    }
}

/// Regular files named by `inputs`, directories expanded one level, sorted.
pub fn collect_files(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let mut found = Vec::new();
            for e in fs::read_dir(p).with_context(|| format!("listing {}", p.display()))? {
                let path = e?.path();
                if path.is_file() {
                    found.push(path);
                }
            }
            found.sort();
            files.extend(found);
        } else {
            files.push(p.clone());
        }
    }
    ensure!(!files.is_empty(), "no input files");
    Ok(files)
}

fn fixture_path(dir: &Path, file: &Path) -> PathBuf {
    let mut name = file.file_name().unwrap_or_default().to_owned();
    name.push(".hnlf");
    dir.join(name)
}

/// Compresses and decompresses `data` with one method, checking the round trip.
pub fn measure(name: &str, data: &[u8], method: Method, base: &PipelineConfig, spec: &PredictorSpec) -> Result<BenchRow> {
    let cfg = PipelineConfig {
        route_mode: match method {
            Method::Stored => RouteMode::StoredOnly,
            Method::Legacy => RouteMode::LegacyOnly,
            _ => base.route_mode,
        },
        ..base.clone()
    };
    let model = Model::build(spec, cfg.model_params(), false)?;
    let t = Instant::now();
    let c = compress(data, &cfg, model.predictor.as_ref())?;
    let compress_s = t.elapsed().as_secs_f64();
    let t = Instant::now();
    let out = decompress_archive(&c.archive, Some(model.predictor.as_ref()), cfg.workers)?;
    let decompress_s = t.elapsed().as_secs_f64();
    ensure!(out == data, "round trip changed the data");
    Ok(BenchRow {
        file: name.to_string(),
        method,
        original: data.len(),
        compressed: c.report.archive_bytes,
        compress_s,
        decompress_s,
        blocks: c.report.blocks,
        neural_segments: c.report.neural_segments,
    })
}

pub fn render_table(rows: &[BenchRow]) -> String {
    use std::fmt::Write;
    let w = rows.iter().map(|r| r.file.len()).max().unwrap_or(4).max(4);
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<w$}  {:<16} {:>10} {:>10} {:>6} {:>6} {:>8} {:>8}  route mix (S/L/N)",
        "file", "method", "original", "compressed", "ratio", "BPC", "comp s", "decomp s"
    );
    for r in rows {
        let f = r.fields();
        let _ = writeln!(
            s,
            "{:<w$}  {:<16} {:>10} {:>10} {:>6} {:>6} {:>8} {:>8}  {}/{}/{}",
            f[0], f[1], f[2], f[3], f[4], f[5], f[6], f[7], f[8], f[9], f[10]
        );
    }
    s
}

pub fn write_csv(path: &Path, rows: &[BenchRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record(CSV_HEADER)?;
    for r in rows {
        w.write_record(r.fields())?;
    }
    w.flush()?;
    Ok(())
}

pub fn run(a: &BenchArgs) -> Result<()> {
    ensure!(a.workers > 0, "--workers must be at least 1");
    let base = a.pipeline.config(a.workers)?;
    let mut methods = a.methods.clone();
    if a.fixtures.is_some() && !methods.contains(&Method::Replay) {
        methods.push(Method::Replay);
    }
    let mut rows = Vec::new();
    let mut failures = 0usize;
    for path in collect_files(&a.inputs)? {
        let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        let data = match fs::read(&path) {
            Ok(d) => d,
            Err(e) => {
                eprintln!("{name}: {e}");
                failures += 1;
                continue;
            }
        };
        for &m in &methods {
            let spec = match m {
                Method::Synthetic => PredictorSpec::Synthetic { seed: a.seed, on_grid: false },
                Method::Replay => match &a.fixtures {
                    Some(dir) => PredictorSpec::Replay(fixture_path(dir, &path)),
                    None => {
                        eprintln!("{name} {m}: needs --fixtures");
                        failures += 1;
                        continue;
                    }
                },
                _ => PredictorSpec::Builtin,
            };
            match measure(&name, &data, m, &base, &spec) {
                Ok(r) => rows.push(r),
                Err(e) => {
                    eprintln!("{name} {m}: {e:#}");
                    failures += 1;
                }
            }
        }
    }
    print!("{}", render_table(&rows));
    if let Some(p) = &a.csv {
        write_csv(p, &rows)?;
    }
    if failures > 0 {
        bail!("{failures} measurements failed");
    }
    Ok(())
}
