//! Archive layout: header | descriptor table | payloads | footer.
//!
//! Every integer is little-endian with a fixed width; there is no padding and
//! no floating-point field. `docs/FORMAT.md` lists the layout byte by byte.

use crate::error::{Error, Result};
use crate::predictor::PredictorIdentity;
use crate::router::{Route, RouteMode, Thresholds};

pub const MAGIC: [u8; 4] = *b"HNLC";
pub const FORMAT_VERSION: u16 = 1;
pub const DESCRIPTOR_LEN: usize = 19;
pub const FOOTER_LEN: usize = 64;

/// Pipeline settings needed to decode, echoed verbatim in the header.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConfigEcho {
    pub segment_tokens: u32,
    pub graft_tokens: u32,
    pub window: u32,
    pub grid_k: u8,
    pub quantize: bool,
    pub total_mass: u64,
    pub thresholds: Thresholds,
    pub block_bytes: u32,
    pub route_mode: RouteMode,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ArchiveHeader {
    pub identity: PredictorIdentity,
    pub config: ConfigEcho,
    pub legacy_codec: u8,
    pub legacy_version: String,
    pub block_count: u32,
    pub source_len: u64,
    pub payload_len: u64,
}

impl ArchiveHeader {
    pub fn encoded_len(&self) -> usize {
        4 + 2 + PredictorIdentity::ENCODED_LEN + 4 * 3 + 1 + 1 + 8 + 4 * 2 + 4 + 1 + 1 + 1 + self.legacy_version.len() + 4 + 8 + 8
    }
}

/// One coded unit: a Legacy or Stored block, or one neural segment.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockDescriptor {
    pub route: Route,
    pub original_len: u32,
    pub payload_len: u32,
    pub graft_len: u16,
    pub target_count: u32,
    pub crc32: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Footer {
    pub source_sha256: [u8; 32],
    pub payload_sha256: [u8; 32],
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Archive {
    pub header: ArchiveHeader,
    pub descriptors: Vec<BlockDescriptor>,
    /// All payloads back to back, in descriptor order.
    pub payloads: Vec<u8>,
    pub footer: Footer,
}

impl Archive {
    pub fn payload_ranges(&self) -> Vec<std::ops::Range<usize>> {
        let mut at = 0;
        self.descriptors
            .iter()
            .map(|d| {
                let r = at..at + d.payload_len as usize;
                at = r.end;
                r
            })
            .collect()
    }

    pub fn encoded_len(&self) -> usize {
        self.header.encoded_len() + DESCRIPTOR_LEN * self.descriptors.len() + self.payloads.len() + FOOTER_LEN
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        write_header(&mut out, &self.header);
        for d in &self.descriptors {
            out.push(d.route as u8);
            out.extend_from_slice(&d.original_len.to_le_bytes());
            out.extend_from_slice(&d.payload_len.to_le_bytes());
            out.extend_from_slice(&d.graft_len.to_le_bytes());
            out.extend_from_slice(&d.target_count.to_le_bytes());
            out.extend_from_slice(&d.crc32.to_le_bytes());
        }
        out.extend_from_slice(&self.payloads);
        out.extend_from_slice(&self.footer.source_sha256);
        out.extend_from_slice(&self.footer.payload_sha256);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() {
            return Err(if MAGIC.starts_with(bytes) {
                Error::TruncatedArchive("shorter than the magic".into())
            } else {
                Error::BadMagic
            });
        }
        if bytes[..4] != MAGIC {
            return Err(Error::BadMagic);
        }
        let mut r = Reader { buf: &bytes[4..] };
        let version = r.u16()?;
        if version != FORMAT_VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let header = read_header(&mut r)?;
        let mut descriptors = Vec::with_capacity((header.block_count as usize).min(r.buf.len() / DESCRIPTOR_LEN));
        for i in 0..header.block_count {
            descriptors.push(read_descriptor(&mut r, i, &header.config)?);
        }
        let payload_sum: u64 = descriptors.iter().map(|d| d.payload_len as u64).sum();
        if payload_sum != header.payload_len {
            return Err(inconsistent(format!(
                "descriptors claim {payload_sum} payload bytes, header says {}",
                header.payload_len
            )));
        }
        let original_sum: u64 = descriptors.iter().map(|d| d.original_len as u64).sum();
        if original_sum != header.source_len {
            return Err(inconsistent(format!(
                "descriptors cover {original_sum} source bytes, header says {}",
                header.source_len
            )));
        }
        let need = header.payload_len.saturating_add(FOOTER_LEN as u64);
        let have = r.buf.len() as u64;
        if have < need {
            return Err(Error::TruncatedArchive(format!("{have} bytes after the table, {need} expected")));
        }
        if have > need {
            return Err(inconsistent(format!("{} trailing bytes", have - need)));
        }
        let payloads = r.take(header.payload_len as usize)?.to_vec();
        let source_sha256 = r.take(32)?.try_into().unwrap();
        let payload_sha256 = r.take(32)?.try_into().unwrap();
        Ok(Self { header, descriptors, payloads, footer: Footer { source_sha256, payload_sha256 } })
    }
}

fn inconsistent(msg: impl Into<String>) -> Error {
    Error::TableInconsistent(msg.into())
}

fn write_header(out: &mut Vec<u8>, h: &ArchiveHeader) {
    let c = &h.config;
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&h.identity.to_bytes());
    out.extend_from_slice(&c.segment_tokens.to_le_bytes());
    out.extend_from_slice(&c.graft_tokens.to_le_bytes());
    out.extend_from_slice(&c.window.to_le_bytes());
    out.push(c.grid_k);
    out.push(c.quantize as u8);
    out.extend_from_slice(&c.total_mass.to_le_bytes());
    out.extend_from_slice(&c.thresholds.tau_min_micro.to_le_bytes());
    out.extend_from_slice(&c.thresholds.tau_max_micro.to_le_bytes());
    out.extend_from_slice(&c.block_bytes.to_le_bytes());
    out.push(c.route_mode as u8);
    out.push(h.legacy_codec);
    let v = h.legacy_version.as_bytes();
    let vlen = v.len().min(255);
    out.push(vlen as u8);
    out.extend_from_slice(&v[..vlen]);
    out.extend_from_slice(&h.block_count.to_le_bytes());
    out.extend_from_slice(&h.source_len.to_le_bytes());
    out.extend_from_slice(&h.payload_len.to_le_bytes());
}

fn read_header(r: &mut Reader) -> Result<ArchiveHeader> {
    let id: [u8; PredictorIdentity::ENCODED_LEN] = r.take(PredictorIdentity::ENCODED_LEN)?.try_into().unwrap();
    let identity = PredictorIdentity::decode(&id).ok_or_else(|| inconsistent("unknown predictor kind"))?;
    let segment_tokens = r.u32()?;
    let graft_tokens = r.u32()?;
    let window = r.u32()?;
    let grid_k = r.u8()?;
    let quantize = match r.u8()? {
        0 => false,
        1 => true,
        v => return Err(inconsistent(format!("quantize flag {v}"))),
    };
    let total_mass = r.u64()?;
    let tau_min = r.u32()?;
    let tau_max = r.u32()?;
    let thresholds = Thresholds::new(tau_min, tau_max).map_err(|e| inconsistent(e.to_string()))?;
    let block_bytes = r.u32()?;
    let route_mode = RouteMode::from_u8(r.u8()?).ok_or_else(|| inconsistent("unknown route mode"))?;
    let legacy_codec = r.u8()?;
    let vlen = r.u8()? as usize;
    let legacy_version =
        String::from_utf8(r.take(vlen)?.to_vec()).map_err(|_| inconsistent("legacy version is not UTF-8"))?;
    let block_count = r.u32()?;
    let source_len = r.u64()?;
    let payload_len = r.u64()?;
    if segment_tokens == 0 || graft_tokens >= segment_tokens || block_bytes == 0 {
        return Err(inconsistent("segment, graft or block sizes out of range"));
    }
    Ok(ArchiveHeader {
        identity,
        config: ConfigEcho {
            segment_tokens,
            graft_tokens,
            window,
            grid_k,
            quantize,
            total_mass,
            thresholds,
            block_bytes,
            route_mode,
        },
        legacy_codec,
        legacy_version,
        block_count,
        source_len,
        payload_len,
    })
}

fn read_descriptor(r: &mut Reader, index: u32, c: &ConfigEcho) -> Result<BlockDescriptor> {
    let route = Route::from_u8(r.u8()?).ok_or_else(|| inconsistent(format!("descriptor {index}: unknown route")))?;
    let d = BlockDescriptor {
        route,
        original_len: r.u32()?,
        payload_len: r.u32()?,
        graft_len: r.u16()?,
        target_count: r.u32()?,
        crc32: r.u32()?,
    };
    let bad = |what: &str| Err(inconsistent(format!("descriptor {index}: {what}")));
    if d.original_len == 0 {
        return bad("empty block");
    }
    match route {
        Route::Neural => {
            if d.target_count == 0 || d.target_count > c.segment_tokens {
                return bad("target count outside 1..=L");
            }
            if d.graft_len as u32 > c.graft_tokens {
                return bad("graft longer than K");
            }
        }
        Route::Stored | Route::Legacy => {
            if d.graft_len != 0 || d.target_count != 0 {
                return bad("token fields set on a non-neural block");
            }
            if d.original_len > c.block_bytes {
                return bad("block longer than the block size");
            }
            if route == Route::Stored && d.payload_len != d.original_len {
                return bad("stored payload length differs from original length");
            }
        }
    }
    Ok(d)
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() < n {
            return Err(Error::TruncatedArchive("header or descriptor table cut short".into()));
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
