//! Checkpoint container.
//!
//! ```text
//! magic      "GML2"
//! version    u32
//! config     u32 length + JSON NetworkConfig
//! metadata   u32 length + JSON CheckpointMetadata
//! directory  u32 count, then per tensor: u16 name length, name,
//!            u8 rank, rank * u32 dims
//! payload    f32 values of every tensor in directory order
//! crc        u32 CRC-32 of all preceding bytes
//! ```
//! Little-endian throughout.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{NetworkConfig, NetworkError, ParameterSet};
use crate::gammatone::GammatoneConfig;
use crate::prob_beta::{LossHead, DEFAULT_SCORE_EPS};

const MAGIC: &[u8; 4] = b"GML2";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMetadata {
    pub step: u64,
    pub valid_rp: Option<f64>,
    pub valid_rs: Option<f64>,
    pub loss_head: LossHead,
    pub gammatone: GammatoneConfig,
    pub score_eps: f64,
}

impl Default for CheckpointMetadata {
    fn default() -> Self {
        Self {
            step: 0,
            valid_rp: None,
            valid_rs: None,
            loss_head: LossHead::Beta,
            gammatone: GammatoneConfig::default(),
            score_eps: DEFAULT_SCORE_EPS,
        }
    }
}

fn push_block(buf: &mut Vec<u8>, bytes: &[u8]) {
    buf.extend_from_slice(&(bytes.len() as u32).to_le_bytes());
    buf.extend_from_slice(bytes);
}

pub fn encode_checkpoint(p: &ParameterSet<f32>, meta: &CheckpointMetadata) -> Vec<u8> {
    let mut buf = Vec::with_capacity(1024 + p.num_params() * 4);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    push_block(&mut buf, &serde_json::to_vec(p.config()).expect("config serializes"));
    push_block(&mut buf, &serde_json::to_vec(meta).expect("metadata serializes"));
    buf.extend_from_slice(&(p.names().len() as u32).to_le_bytes());
    for (name, shape) in p.names().iter().zip(p.shapes()) {
        buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.push(shape.len() as u8);
        for &d in shape {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
    }
    for v in p.tensors().iter().flatten() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    buf
}

/// Write atomically through a temporary sibling file.
pub fn save_checkpoint(p: &ParameterSet<f32>, meta: &CheckpointMetadata, path: &Path) -> Result<(), NetworkError> {
    let bytes = encode_checkpoint(p, meta);
    let tmp = path.with_extension("partial");
    std::fs::File::create(&tmp)?.write_all(&bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let out = self.bytes.get(self.pos..self.pos.checked_add(n)?)?;
        self.pos += n;
        Some(out)
    }
    fn u32(&mut self) -> Option<u32> {
        Some(u32::from_le_bytes(self.take(4)?.try_into().ok()?))
    }
    fn u16(&mut self) -> Option<u16> {
        Some(u16::from_le_bytes(self.take(2)?.try_into().ok()?))
    }
}

pub fn decode_checkpoint(
    bytes: &[u8],
    origin: &str,
) -> Result<(ParameterSet<f32>, NetworkConfig, CheckpointMetadata), NetworkError> {
    let fail = |m: String| NetworkError::Checkpoint { path: origin.to_string(), message: m };
    if bytes.len() < 12 || &bytes[..4] != MAGIC {
        return Err(fail("not a checkpoint (bad magic)".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(NetworkError::VersionMismatch { found: version, expected: FORMAT_VERSION });
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(NetworkError::Checksum { stored, computed });
    }
    let mut r = Reader { bytes: body, pos: 8 };
    let trunc = || fail("truncated".into());
    let n = r.u32().ok_or_else(trunc)? as usize;
    let config: NetworkConfig =
        serde_json::from_slice(r.take(n).ok_or_else(trunc)?).map_err(|e| fail(format!("config: {e}")))?;
    let n = r.u32().ok_or_else(trunc)? as usize;
    let meta: CheckpointMetadata =
        serde_json::from_slice(r.take(n).ok_or_else(trunc)?).map_err(|e| fail(format!("metadata: {e}")))?;
    let count = r.u32().ok_or_else(trunc)? as usize;
    let layout = config.layout();
    if count != layout.len() {
        return Err(fail(format!("directory lists {count} tensors, config implies {}", layout.len())));
    }
    for (name, shape) in &layout {
        let len = r.u16().ok_or_else(trunc)? as usize;
        let got_name = r.take(len).ok_or_else(trunc)?;
        let rank = r.take(1).ok_or_else(trunc)?[0] as usize;
        let dims: Option<Vec<usize>> = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect();
        let dims = dims.ok_or_else(trunc)?;
        if got_name != name.as_bytes() || &dims != shape {
            return Err(fail(format!("tensor directory does not match topology at {name}")));
        }
    }
    let mut tensors = Vec::with_capacity(layout.len());
    for (_, shape) in &layout {
        let n: usize = shape.iter().product();
        let raw = r.take(n * 4).ok_or_else(trunc)?;
        tensors.push(raw.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect());
    }
    if r.pos != body.len() {
        return Err(fail("trailing bytes before checksum".into()));
    }
    let p = ParameterSet::from_parts(config.clone(), tensors)?;
    if !p.all_finite() {
        return Err(fail("non-finite weights".into()));
    }
    Ok((p, config, meta))
}

pub fn load_checkpoint(path: &Path) -> Result<(ParameterSet<f32>, NetworkConfig, CheckpointMetadata), NetworkError> {
    let bytes = std::fs::read(path)?;
    decode_checkpoint(&bytes, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{forward, layers::Act, INPUT_BANDS};

    fn sample() -> (ParameterSet<f32>, CheckpointMetadata) {
        let p = ParameterSet::<f32>::init(&NetworkConfig { seed: 11, ..NetworkConfig::toy() }).unwrap();
        let meta = CheckpointMetadata { step: 1234, valid_rp: Some(0.912_345_678_9), valid_rs: Some(0.87), ..Default::default() };
        (p, meta)
    }

    #[test]
    fn round_trip_is_bitwise_exact() {
        let (p, meta) = sample();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.gml2");
        save_checkpoint(&p, &meta, &path).unwrap();
        let (q, cfg, m) = load_checkpoint(&path).unwrap();
        assert_eq!(cfg, *p.config());
        assert_eq!(m, meta);
        for (a, b) in p.tensors().iter().flatten().zip(q.tensors().iter().flatten()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        let x = Act { c: 8, h: 4, w: INPUT_BANDS, data: (0..8 * 4 * 32).map(|i| (i % 17) as f32 * -0.5).collect() };
        assert_eq!(forward(&p, &x).unwrap().0, forward(&q, &x).unwrap().0);
        // re-encoding is stable
        assert_eq!(encode_checkpoint(&p, &meta), std::fs::read(&path).unwrap());
    }

    #[test]
    fn corruption_is_detected() {
        let (p, meta) = sample();
        let good = encode_checkpoint(&p, &meta);
        for pos in [20, good.len() / 2, good.len() - 10] {
            let mut bad = good.clone();
            bad[pos] ^= 0x40;
            assert!(matches!(decode_checkpoint(&bad, "x"), Err(NetworkError::Checksum { .. })), "byte {pos}");
        }
        let mut v2 = good.clone();
        v2[4] = 2;
        assert!(matches!(decode_checkpoint(&v2, "x"), Err(NetworkError::VersionMismatch { found: 2, .. })));
        assert!(matches!(decode_checkpoint(b"nope", "x"), Err(NetworkError::Checkpoint { .. })));
    }
}
