//! Model checkpoint container: a small binary format with a structured
//! text header (phase, iteration, seed, architecture) followed by named
//! parameter arrays as 64-bit little-endian payloads. Writing is
//! deterministic — the same model state always produces the same bytes.
//!
//! Layout:
//! ```text
//! magic   8 bytes  "ATTWCKPT"
//! version u32 LE
//! header  u32 LE length + JSON (phase, iteration, seed, arch, encoder?)
//! 4 sections in order: attention params, attention running stats,
//!                      encoder params, encoder running stats
//! section = u32 LE count, then per entry (name-sorted):
//!           u16 LE name length + UTF-8 name
//!           u8 rank + rank × u32 LE extents
//!           product × f64 LE values
//! ```

use crate::error::{CliError, Result};
use attwarp_core::attention::{ArchConfig, AttentionModel};
use attwarp_core::encoder::{EncoderConfig, SiameseEncoder};
use attwarp_core::rng::Rng;
use attwarp_core::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

const MAGIC: &[u8; 8] = b"ATTWCKPT";
const FORMAT_VERSION: u32 = 1;

/// A trained (or initialized) model with its provenance.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    /// Which schedule produced it: "pretrain", "contrastive", "plugin".
    pub phase: String,
    /// Iterations completed when it was written.
    pub iteration: u64,
    /// Seed of the run that produced it.
    pub seed: u64,
    pub model: AttentionModel,
    pub encoder: Option<SiameseEncoder>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    phase: String,
    iteration: u64,
    seed: u64,
    arch: ArchHeader,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    encoder: Option<EncoderHeader>,
}

#[derive(Serialize, Deserialize)]
struct ArchHeader {
    dim: usize,
    levels: usize,
    channels: Vec<usize>,
    kernel: usize,
}

#[derive(Serialize, Deserialize)]
struct EncoderHeader {
    dim: usize,
    channels: Vec<usize>,
    kernel: usize,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let header = Header {
            phase: self.phase.clone(),
            iteration: self.iteration,
            seed: self.seed,
            arch: ArchHeader {
                dim: self.model.arch().dim,
                levels: self.model.arch().levels,
                channels: self.model.arch().channels.clone(),
                kernel: self.model.arch().kernel,
            },
            encoder: self.encoder.as_ref().map(|e| EncoderHeader {
                dim: e.config().dim,
                channels: e.config().channels.clone(),
                kernel: e.config().kernel,
            }),
        };
        let header_json =
            serde_json::to_vec(&header).map_err(|e| CliError::data(e.to_string()))?;

        let mut bytes = Vec::new();
        bytes.extend_from_slice(MAGIC);
        bytes.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        bytes.extend_from_slice(&(header_json.len() as u32).to_le_bytes());
        bytes.extend_from_slice(&header_json);
        write_section(&mut bytes, self.model.params());
        write_section(&mut bytes, self.model.stats());
        let empty = BTreeMap::new();
        let (enc_params, enc_stats) = match &self.encoder {
            Some(e) => (e.params(), e.stats()),
            None => (&empty, &empty),
        };
        write_section(&mut bytes, enc_params);
        write_section(&mut bytes, enc_stats);

        fs::write(path, bytes)
            .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
    let bytes =
        fs::read(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    let bad = |msg: &str| CliError::data(format!("{}: {msg}", path.display()));
    let mut cur = Cursor { bytes: &bytes, pos: 0 };

    if cur.take(8).ok_or_else(|| bad("truncated magic"))? != MAGIC {
        return Err(bad("not a checkpoint file (bad magic)"));
    }
    let version = cur.u32().ok_or_else(|| bad("truncated version"))?;
    if version != FORMAT_VERSION {
        return Err(bad(&format!(
            "checkpoint format version {version} not supported (this build reads {FORMAT_VERSION})"
        )));
    }
    let header_len = cur.u32().ok_or_else(|| bad("truncated header length"))? as usize;
    let header_bytes = cur.take(header_len).ok_or_else(|| bad("truncated header"))?;
    let header: Header = serde_json::from_slice(header_bytes)
        .map_err(|e| bad(&format!("malformed header: {e}")))?;

    let attn_params = read_section(&mut cur).map_err(|m| bad(&m))?;
    let attn_stats = read_section(&mut cur).map_err(|m| bad(&m))?;
    let enc_params = read_section(&mut cur).map_err(|m| bad(&m))?;
    let enc_stats = read_section(&mut cur).map_err(|m| bad(&m))?;
    if cur.pos != bytes.len() {
        return Err(bad("trailing bytes after final section"));
    }

    let arch = ArchConfig {
        dim: header.arch.dim,
        levels: header.arch.levels,
        channels: header.arch.channels,
        kernel: header.arch.kernel,
    };
    // Build a model of the right layout, then overwrite every tensor.
    let mut model = AttentionModel::new(arch, &mut Rng::new(0))?;
    model.set_params(attn_params)?;
    model.set_stats(attn_stats)?;

    let encoder = match header.encoder {
        Some(h) => {
            let cfg = EncoderConfig {
                dim: h.dim,
                channels: h.channels,
                kernel: h.kernel,
            };
            let mut enc = SiameseEncoder::new(cfg, &mut Rng::new(0))?;
            enc.set_params(enc_params)?;
            enc.set_stats(enc_stats)?;
            Some(enc)
        }
        None => {
            if !enc_params.is_empty() || !enc_stats.is_empty() {
                return Err(bad("encoder arrays present but no encoder in header"));
            }
            None
        }
    };

        Ok(Checkpoint {
            phase: header.phase,
            iteration: header.iteration,
            seed: header.seed,
            model,
            encoder,
        })
    }
}

fn write_section(out: &mut Vec<u8>, tensors: &BTreeMap<String, Tensor>) {
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(t.shape().len() as u8);
        for &e in t.shape() {
            out.extend_from_slice(&(e as u32).to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
}

fn read_section(cur: &mut Cursor) -> std::result::Result<BTreeMap<String, Tensor>, String> {
    let count = cur.u32().ok_or("truncated section count")? as usize;
    let mut out = BTreeMap::new();
    for _ in 0..count {
        let name_len = cur.u16().ok_or("truncated name length")? as usize;
        let name = String::from_utf8(
            cur.take(name_len).ok_or("truncated name")?.to_vec(),
        )
        .map_err(|_| "parameter name is not UTF-8".to_string())?;
        let rank = cur.u8().ok_or("truncated rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(cur.u32().ok_or("truncated shape")? as usize);
        }
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(f64::from_le_bytes(
                cur.take(8)
                    .ok_or_else(|| format!("truncated payload for `{name}`"))?
                    .try_into()
                    .unwrap(),
            ));
        }
        let t = Tensor::from_vec(&shape, data)
            .map_err(|e| format!("array `{name}`: {e}"))?;
        if out.insert(name.clone(), t).is_some() {
            return Err(format!("duplicate array `{name}`"));
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        if end > self.bytes.len() {
            return None;
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Some(s)
    }

    fn u8(&mut self) -> Option<u8> {
        self.take(1).map(|s| s[0])
    }

    fn u16(&mut self) -> Option<u16> {
        self.take(2).map(|s| u16::from_le_bytes(s.try_into().unwrap()))
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|s| u32::from_le_bytes(s.try_into().unwrap()))
    }
}
