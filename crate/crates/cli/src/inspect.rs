use std::path::PathBuf;

use anyhow::{ensure, Context, Result};
use clap::Args;
use hnlc_core::container::Archive;
use hnlc_core::pipeline::audit_routes;
use hnlc_core::router::{block_spans, route_block, MIN_SCOUT_BLOCK};

use crate::{bpc, read_input};

#[derive(Debug, Args)]
pub struct InspectArgs {
    /// Archive to describe.
    pub archive: PathBuf,
    /// Original input; adds scout ratios and checks every recorded route.
    #[arg(long)]
    pub source: Option<PathBuf>,
}

pub fn run(a: &InspectArgs) -> Result<()> {
    let bytes = read_input(&a.archive)?;
    let archive = Archive::from_bytes(&bytes)?;
    print!("{}", describe(&archive, bytes.len()));
    if let Some(path) = &a.source {
        let source = read_input(path)?;
        ensure!(
            source.len() as u64 == archive.header.source_len,
            "source is {} bytes, archive was made from {}",
            source.len(),
            archive.header.source_len
        );
        print!("{}", scout_table(&archive, &source)?);
        let audit = audit_routes(&archive, &source).context("auditing routes")?;
        println!(
            "route audit: {}/{} blocks match the rule, {} tokenizer fallbacks",
            audit.matching, audit.blocks, audit.fallbacks
        );
        ensure!(audit.violations.is_empty(), "blocks {:?} violate the routing rule", audit.violations);
    }
    Ok(())
}

/// Header summary and block table.
pub fn describe(archive: &Archive, archive_len: usize) -> String {
    use std::fmt::Write;
    let h = &archive.header;
    let c = &h.config;
    let mut s = String::new();
    let src = h.source_len as usize;
    let _ = writeln!(s, "archive      {archive_len} bytes, {} units", h.block_count);
    let _ = writeln!(
        s,
        "source       {src} bytes, ratio {:.2}, {:.3} BPC",
        src as f64 / archive_len.max(1) as f64,
        bpc(archive_len, src)
    );
    let _ = writeln!(s, "predictor    {} {}", h.identity.kind.name(), hex::encode(h.identity.param_hash));
    let _ = writeln!(s, "vocabulary   {}", h.identity.vocab_size);
    let _ = writeln!(
        s,
        "segments     L={} K={} W={}",
        c.segment_tokens, c.graft_tokens, c.window
    );
    let _ = writeln!(
        s,
        "grid         k={} quantize={} M={}",
        c.grid_k,
        if c.quantize { "on" } else { "off" },
        c.total_mass
    );
    let _ = writeln!(
        s,
        "routing      {} blocks of {} bytes, tau [{}, {}]",
        c.route_mode,
        c.block_bytes,
        c.thresholds.tau_min(),
        c.thresholds.tau_max()
    );
    let _ = writeln!(s, "legacy       codec {} {}", h.legacy_codec, h.legacy_version);
    let _ = writeln!(s, "source sha   {}", hex::encode(archive.footer.source_sha256));
    let _ = writeln!(s);
    let _ = writeln!(
        s,
        "{:>5}  {:<7} {:>10} {:>10} {:>7} {:>7} {:>6} {:>8}  crc32",
        "unit", "route", "original", "payload", "ratio", "BPC", "graft", "tokens"
    );
    for (i, d) in archive.descriptors.iter().enumerate() {
        let _ = writeln!(
            s,
            "{:>5}  {:<7} {:>10} {:>10} {:>7.2} {:>7.3} {:>6} {:>8}  {:08x}",
            i,
            d.route.name(),
            d.original_len,
            d.payload_len,
            d.original_len as f64 / (d.payload_len as f64).max(1.0),
            bpc(d.payload_len as usize, d.original_len as usize),
            d.graft_len,
            d.target_count,
            d.crc32
        );
    }
    s
}

fn scout_table(archive: &Archive, source: &[u8]) -> Result<String> {
    use std::fmt::Write;
    let c = &archive.header.config;
    let mut s = String::new();
    let _ = writeln!(s);
    let _ = writeln!(s, "{:>5}  {:>10} {:>8} {:>7}  rule", "block", "offset", "length", "scout");
    for (i, (offset, len)) in block_spans(source.len(), c.block_bytes as usize).enumerate() {
        let (route, scout_len) = route_block(&source[offset..offset + len], &c.thresholds)?;
        let ratio = if len < MIN_SCOUT_BLOCK {
            "-".to_string()
        } else {
            format!("{:.3}", len as f64 / scout_len.max(1) as f64)
        };
        let _ = writeln!(s, "{i:>5}  {offset:>10} {len:>8} {ratio:>7}  {}", route.name());
    }
    Ok(s)
}
