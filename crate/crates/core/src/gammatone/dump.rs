//! Binary feature container.
//!
//! ```text
//! magic    "GMLF"
//! version  u32
//! planes   u32
//! frames   u32
//! bands    u32
//! config   n_bands u32, f_low f64, f_high f64, window_ms f64, hop_ms f64,
//!          order u32, sample_rate u32, compression u8, log_floor f64
//! kind     u8   0 = raw power, 1 = compressed
//! data     planes * frames * bands f32, row-major
//! ```
//! All integers and floats little-endian.

use std::io::{Read, Write};
use std::path::Path;

use super::{Compression, FeatureError, GammatoneConfig, GammatoneSpectrogram};

const MAGIC: &[u8; 4] = b"GMLF";
const VERSION: u32 = 1;

pub fn write_features(path: &Path, s: &GammatoneSpectrogram) -> Result<(), FeatureError> {
    let mut buf = Vec::with_capacity(64 + s.data.len() * 4);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    for v in [s.planes, s.frames, s.bands] {
        buf.extend_from_slice(&(v as u32).to_le_bytes());
    }
    buf.extend_from_slice(&s.config.canonical_bytes());
    buf.push(u8::from(s.compression.is_some()));
    for v in &s.data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    // write to a sibling temp file first so readers never see a partial dump
    let tmp = path.with_extension("partial");
    std::fs::File::create(&tmp)?.write_all(&buf)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let out = self.bytes.get(self.pos..self.pos + n)?;
        self.pos += n;
        Some(out)
    }
    fn u32(&mut self) -> Option<u32> {
        Some(u32::from_le_bytes(self.take(4)?.try_into().ok()?))
    }
    fn f64(&mut self) -> Option<f64> {
        Some(f64::from_le_bytes(self.take(8)?.try_into().ok()?))
    }
    fn u8(&mut self) -> Option<u8> {
        Some(self.take(1)?[0])
    }
}

pub fn read_features(path: &Path) -> Result<GammatoneSpectrogram, FeatureError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let fail = |m: &str| FeatureError::Format { path: path.to_path_buf(), message: m.to_string() };
    let mut c = Cursor { bytes: &bytes, pos: 0 };
    if c.take(4) != Some(MAGIC.as_slice()) {
        return Err(fail("bad magic"));
    }
    let version = c.u32().ok_or_else(|| fail("truncated header"))?;
    if version != VERSION {
        return Err(fail(&format!("unsupported version {version}")));
    }
    let mut header = || -> Option<(usize, usize, usize, GammatoneConfig, bool)> {
        let (planes, frames, bands) = (c.u32()? as usize, c.u32()? as usize, c.u32()? as usize);
        let config = GammatoneConfig {
            n_bands: c.u32()? as usize,
            f_low: c.f64()?,
            f_high: c.f64()?,
            window_ms: c.f64()?,
            hop_ms: c.f64()?,
            order: c.u32()?,
            sample_rate: c.u32()?,
            compression: match c.u8()? {
                0 => Compression::Log,
                1 => Compression::Linear,
                _ => return None,
            },
            log_floor: c.f64()?,
        };
        let compressed = c.u8()? == 1;
        Some((planes, frames, bands, config, compressed))
    };
    let (planes, frames, bands, config, compressed) = header().ok_or_else(|| fail("truncated or invalid header"))?;
    let n = planes * frames * bands;
    let payload = c.take(n * 4).ok_or_else(|| fail("truncated payload"))?;
    if c.pos != bytes.len() {
        return Err(fail("trailing bytes after payload"));
    }
    let data = payload.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
    let fs = config.sample_rate as f64;
    let (win, hop) = (config.window_samples(), config.hop_samples());
    let frame_times = (0..frames).map(|t| (t * hop) as f64 / fs + win as f64 / (2.0 * fs)).collect();
    let compression = compressed.then_some(config.compression);
    Ok(GammatoneSpectrogram { planes, frames, bands, data, frame_times, config, compression })
}
