use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use super::{AudioError, Waveform};

/// Sample encodings accepted by [`write_wav`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WavEncoding {
    Pcm16,
    Pcm24,
    Float32,
}

fn map_hound(path: &Path, e: hound::Error) -> AudioError {
    let path = path.to_path_buf();
    match e {
        hound::Error::IoError(io) => AudioError::Unreadable { path, message: io.to_string() },
        hound::Error::FormatError(m) => AudioError::UnsupportedEncoding { path, message: m.to_string() },
        hound::Error::Unsupported => {
            AudioError::UnsupportedEncoding { path, message: "unsupported WAV feature".into() }
        }
        other => AudioError::UnsupportedEncoding { path, message: other.to_string() },
    }
}

/// Decode a PCM (16/24/32-bit) or 32-bit float WAV file.
///
/// Integer samples are divided by `2^(bits-1)`, so full-scale negative maps
/// to exactly -1.
pub fn load_wav(path: &Path) -> Result<Waveform, AudioError> {
    let reader = WavReader::open(path).map_err(|e| map_hound(path, e))?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if channels == 0 || channels > 2 {
        return Err(AudioError::UnsupportedEncoding {
            path: path.to_path_buf(),
            message: format!("{channels} channels (expected 1 or 2)"),
        });
    }
    let interleaved: Vec<f32> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, bits @ (16 | 24 | 32)) => {
            let scale = 1.0 / (1u64 << (bits - 1)) as f64;
            reader
                .into_samples::<i32>()
                .map(|s| s.map(|v| (v as f64 * scale) as f32))
                .collect::<Result<_, _>>()
                .map_err(|e| map_hound(path, e))?
        }
        (SampleFormat::Float, 32) => {
            let v: Vec<f32> = reader
                .into_samples::<f32>()
                .collect::<Result<_, _>>()
                .map_err(|e| map_hound(path, e))?;
            if v.iter().any(|x| !x.is_finite()) {
                return Err(AudioError::UnsupportedEncoding {
                    path: path.to_path_buf(),
                    message: "non-finite float sample".into(),
                });
            }
            v.into_iter().map(|x| x.clamp(-1.0, 1.0)).collect()
        }
        (fmt, bits) => {
            return Err(AudioError::UnsupportedEncoding {
                path: path.to_path_buf(),
                message: format!("{bits}-bit {fmt:?} samples"),
            })
        }
    };
    let frames = interleaved.len() / channels;
    if frames == 0 {
        return Err(AudioError::Empty(path.to_path_buf()));
    }
    let mut planes = vec![Vec::with_capacity(frames); channels];
    for frame in interleaved.chunks_exact(channels) {
        for (plane, &x) in planes.iter_mut().zip(frame) {
            plane.push(x);
        }
    }
    Waveform::new(planes, spec.sample_rate)
}

pub fn write_wav(path: &Path, w: &Waveform, encoding: WavEncoding) -> Result<(), AudioError> {
    let (bits, sample_format) = match encoding {
        WavEncoding::Pcm16 => (16, SampleFormat::Int),
        WavEncoding::Pcm24 => (24, SampleFormat::Int),
        WavEncoding::Float32 => (32, SampleFormat::Float),
    };
    let spec = WavSpec {
        channels: w.channels() as u16,
        sample_rate: w.sample_rate(),
        bits_per_sample: bits,
        sample_format,
    };
    let werr = |e: hound::Error| AudioError::Write { path: path.to_path_buf(), message: e.to_string() };
    let mut writer = WavWriter::create(path, spec).map_err(werr)?;
    for i in 0..w.len() {
        for c in 0..w.channels() {
            let x = w.channel(c)[i];
            match encoding {
                WavEncoding::Float32 => writer.write_sample(x).map_err(werr)?,
                WavEncoding::Pcm16 | WavEncoding::Pcm24 => {
                    let full = (1i64 << (bits - 1)) as f64;
                    let v = (x as f64 * full).round().clamp(-full, full - 1.0) as i32;
                    writer.write_sample(v).map_err(werr)?
                }
            }
        }
    }
    writer.finalize().map_err(werr)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn write_raw_i32(path: &Path, bits: u16, channels: u16, samples: &[i32]) {
        let spec = WavSpec { channels, sample_rate: 48_000, bits_per_sample: bits, sample_format: SampleFormat::Int };
        let mut w = WavWriter::create(path, spec).unwrap();
        for &s in samples {
            w.write_sample(s).unwrap();
        }
        w.finalize().unwrap();
    }

    #[test]
    fn pcm16_full_scale() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.wav");
        write_raw_i32(&p, 16, 1, &[32767, -32768, 0]);
        let w = load_wav(&p).unwrap();
        assert_eq!(w.channel(0)[0], (32767.0f64 / 32768.0) as f32);
        assert!((w.channel(0)[0] - 0.999_969).abs() < 1e-6);
        assert_eq!(w.channel(0)[1], -1.0);
        assert_eq!(w.sample_rate(), 48_000);
    }

    #[test]
    fn pcm24_negative_full_scale_is_minus_one() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.wav");
        write_raw_i32(&p, 24, 2, &[-8_388_608, 8_388_607]);
        let w = load_wav(&p).unwrap();
        assert_eq!(w.channels(), 2);
        assert_eq!(w.channel(0)[0], -1.0);
    }

    #[test]
    fn silence_decodes_to_zeros() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("z.wav");
        write_raw_i32(&p, 16, 1, &[0; 480]);
        let w = load_wav(&p).unwrap();
        assert_eq!(w.len(), 480);
        assert!(w.channel(0).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn float_and_pcm32() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.wav");
        let w = Waveform::mono(vec![0.5, -0.25, 1.0], 44_100).unwrap();
        write_wav(&p, &w, WavEncoding::Float32).unwrap();
        assert_eq!(load_wav(&p).unwrap(), w);
        let q = dir.path().join("i32.wav");
        write_raw_i32(&q, 32, 1, &[i32::MIN, 1 << 30]);
        let w = load_wav(&q).unwrap();
        assert_eq!(w.channel(0), &[-1.0, 0.5]);
    }

    #[test]
    fn error_codes_are_distinct() {
        let dir = tempfile::tempdir().unwrap();
        let missing = load_wav(&dir.path().join("nope.wav")).unwrap_err();
        assert!(matches!(missing, AudioError::Unreadable { .. }));

        let garbage = dir.path().join("garbage.wav");
        std::fs::write(&garbage, b"not a riff file at all").unwrap();
        assert!(matches!(load_wav(&garbage).unwrap_err(), AudioError::UnsupportedEncoding { .. }));

        let eight = dir.path().join("u8.wav");
        write_raw_i32(&eight, 8, 1, &[1, 2, 3]);
        assert!(matches!(load_wav(&eight).unwrap_err(), AudioError::UnsupportedEncoding { .. }));

        let empty = dir.path().join("empty.wav");
        write_raw_i32(&empty, 16, 1, &[]);
        assert!(matches!(load_wav(&empty).unwrap_err(), AudioError::Empty(_)));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn pcm16_round_trip_within_one_lsb(xs in proptest::collection::vec(-1.0f32..=1.0, 1..512)) {
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("rt.wav");
            let w = Waveform::mono(xs.clone(), 48_000).unwrap();
            write_wav(&p, &w, WavEncoding::Pcm16).unwrap();
            let back = load_wav(&p).unwrap();
            for (a, b) in xs.iter().zip(back.channel(0)) {
                prop_assert!((a - b).abs() as f64 <= 1.0 / 32768.0);
            }
        }
    }
}
