//! Audio decoding, sample-rate conversion and the L/R/M/S channel view.

mod resample;
mod wav;

pub use resample::{resample, resample_to_48k};
pub use wav::{load_wav, write_wav, WavEncoding};

use std::path::PathBuf;

use thiserror::Error;

/// Working sample rate of the feature front end.
pub const TARGET_RATE: u32 = 48_000;

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("cannot read {path}: {message}")]
    Unreadable { path: PathBuf, message: String },
    #[error("unsupported encoding in {path}: {message}")]
    UnsupportedEncoding { path: PathBuf, message: String },
    #[error("{0} contains no samples")]
    Empty(PathBuf),
    #[error("cannot write {path}: {message}")]
    Write { path: PathBuf, message: String },
    #[error("invalid waveform: {0}")]
    InvalidWaveform(String),
    #[error("expected 1 or 2 channels, got {0}")]
    TooManyChannels(usize),
    #[error("channel mismatch: reference has {reference}, test has {test}")]
    ChannelMismatch { reference: usize, test: usize },
    #[error("sample-rate mismatch: reference {reference} Hz, test {test} Hz")]
    SampleRateMismatch { reference: u32, test: u32 },
    #[error("sample rate {0} Hz is not 48000 Hz and resampling is disabled")]
    StrictRate(u32),
}

/// Planar float audio, samples in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<Vec<f32>>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<Vec<f32>>, sample_rate: u32) -> Result<Self, AudioError> {
        if samples.is_empty() || samples.len() > 2 {
            return Err(AudioError::InvalidWaveform(format!(
                "channel count {} not in 1..=2",
                samples.len()
            )));
        }
        let len = samples[0].len();
        if len == 0 {
            return Err(AudioError::InvalidWaveform("zero-length signal".into()));
        }
        if samples.iter().any(|c| c.len() != len) {
            return Err(AudioError::InvalidWaveform("channels differ in length".into()));
        }
        if samples.iter().flatten().any(|x| !x.is_finite() || x.abs() > 1.0) {
            return Err(AudioError::InvalidWaveform("sample outside [-1, 1] or not finite".into()));
        }
        if sample_rate == 0 {
            return Err(AudioError::InvalidWaveform("sample rate must be positive".into()));
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn mono(samples: Vec<f32>, sample_rate: u32) -> Result<Self, AudioError> {
        Self::new(vec![samples], sample_rate)
    }

    pub fn stereo(left: Vec<f32>, right: Vec<f32>, sample_rate: u32) -> Result<Self, AudioError> {
        Self::new(vec![left, right], sample_rate)
    }

    pub fn channels(&self) -> usize {
        self.samples.len()
    }

    pub fn len(&self) -> usize {
        self.samples[0].len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn channel(&self, i: usize) -> &[f32] {
        &self.samples[i]
    }

    pub fn planes(&self) -> &[Vec<f32>] {
        &self.samples
    }

    pub fn duration_secs(&self) -> f64 {
        self.len() as f64 / self.sample_rate as f64
    }

    /// Root-mean-square level over all channels.
    pub fn rms(&self) -> f64 {
        let n = (self.len() * self.channels()) as f64;
        let sum: f64 = self.samples.iter().flatten().map(|&x| x as f64 * x as f64).sum();
        (sum / n).sqrt()
    }

    pub(crate) fn padded_to(&self, len: usize) -> Self {
        let samples = self
            .samples
            .iter()
            .map(|c| {
                let mut c = c.clone();
                c.resize(len, 0.0);
                c
            })
            .collect();
        Self { samples, sample_rate: self.sample_rate }
    }
}

/// Reference and test waveform with identical rate, layout and length.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalPair {
    pub reference: Waveform,
    pub test: Waveform,
}

impl SignalPair {
    /// Level difference between the two signals in dB (test relative to
    /// reference). Silent signals map to infinities.
    pub fn rms_difference_db(&self) -> f64 {
        20.0 * (self.test.rms() / self.reference.rms()).log10()
    }
}

/// Left, right, mid and side planes of one signal.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelStack {
    pub left: Vec<f32>,
    pub right: Vec<f32>,
    pub mid: Vec<f32>,
    pub side: Vec<f32>,
    pub sample_rate: u32,
}

impl ChannelStack {
    /// Planes in L, R, M, S order.
    pub fn planes(&self) -> [&[f32]; 4] {
        [&self.left, &self.right, &self.mid, &self.side]
    }

    pub fn len(&self) -> usize {
        self.left.len()
    }

    pub fn is_empty(&self) -> bool {
        self.left.is_empty()
    }
}

/// Stereo maps to `(L, R, (L+R)/2, (L-R)/2)`; mono is treated as dual mono,
/// giving `(x, x, x, 0)`.
pub fn derive_channels(w: &Waveform) -> Result<ChannelStack, AudioError> {
    match w.channels() {
        1 => {
            let x = w.channel(0).to_vec();
            Ok(ChannelStack {
                left: x.clone(),
                right: x.clone(),
                mid: x,
                side: vec![0.0; w.len()],
                sample_rate: w.sample_rate(),
            })
        }
        2 => {
            let (l, r) = (w.channel(0), w.channel(1));
            let mid = l.iter().zip(r).map(|(&a, &b)| ((a as f64 + b as f64) * 0.5) as f32).collect();
            let side = l.iter().zip(r).map(|(&a, &b)| ((a as f64 - b as f64) * 0.5) as f32).collect();
            Ok(ChannelStack {
                left: l.to_vec(),
                right: r.to_vec(),
                mid,
                side,
                sample_rate: w.sample_rate(),
            })
        }
        n => Err(AudioError::TooManyChannels(n)),
    }
}

/// Zero-pad the shorter signal at its tail so both have equal length.
pub fn align_pair(reference: Waveform, test: Waveform) -> Result<SignalPair, AudioError> {
    if reference.channels() != test.channels() {
        return Err(AudioError::ChannelMismatch {
            reference: reference.channels(),
            test: test.channels(),
        });
    }
    if reference.sample_rate() != test.sample_rate() {
        return Err(AudioError::SampleRateMismatch {
            reference: reference.sample_rate(),
            test: test.sample_rate(),
        });
    }
    let len = reference.len().max(test.len());
    let reference = if reference.len() < len { reference.padded_to(len) } else { reference };
    let test = if test.len() < len { test.padded_to(len) } else { test };
    Ok(SignalPair { reference, test })
}

/// Decode both files, bring them to 48 kHz (or reject when `strict_rate`),
/// and align them.
pub fn load_pair(
    reference: &std::path::Path,
    test: &std::path::Path,
    strict_rate: bool,
) -> Result<SignalPair, AudioError> {
    let prepare = |w: Waveform| {
        if w.sample_rate() == TARGET_RATE {
            Ok(w)
        } else if strict_rate {
            Err(AudioError::StrictRate(w.sample_rate()))
        } else {
            Ok(resample_to_48k(&w))
        }
    };
    let r = prepare(load_wav(reference)?)?;
    let t = prepare(load_wav(test)?)?;
    align_pair(r, t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn mono_is_dual_mono() {
        let w = Waveform::mono(vec![0.1, -0.4, 0.9], 48_000).unwrap();
        let c = derive_channels(&w).unwrap();
        assert_eq!(c.left, c.right);
        assert_eq!(c.mid, c.left);
        assert!(c.side.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn dual_mono_stereo_has_no_side() {
        let x = vec![0.25, -0.5, 0.75];
        let c = derive_channels(&Waveform::stereo(x.clone(), x.clone(), 48_000).unwrap()).unwrap();
        assert_eq!(c.mid, x);
        assert!(c.side.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn mid_side_formula() {
        let c = derive_channels(&Waveform::stereo(vec![1.0, 0.0], vec![0.0, 1.0], 48_000).unwrap()).unwrap();
        assert_eq!(c.mid, vec![0.5, 0.5]);
        assert_eq!(c.side, vec![0.5, -0.5]);
    }

    #[test]
    fn align_pads_tail() {
        let r = Waveform::mono(vec![0.1; 48_000], 48_000).unwrap();
        let t = Waveform::mono(vec![0.2; 47_040], 48_000).unwrap();
        let p = align_pair(r.clone(), t).unwrap();
        assert_eq!(p.test.len(), 48_000);
        assert!(p.test.channel(0)[47_040..].iter().all(|&x| x == 0.0));
        assert_eq!(p.test.channel(0)[..47_040].len(), 47_040);
        assert_eq!(p.reference, r);
        let same = align_pair(r.clone(), r.clone()).unwrap();
        assert_eq!(same.test, r);
    }

    #[test]
    fn align_rejects_mismatches() {
        let m = Waveform::mono(vec![0.0; 10], 48_000).unwrap();
        let s = Waveform::stereo(vec![0.0; 10], vec![0.0; 10], 48_000).unwrap();
        let err = align_pair(m.clone(), s).unwrap_err();
        assert!(matches!(err, AudioError::ChannelMismatch { .. }));
        assert!(err.to_string().contains("channel mismatch"));
        let other = Waveform::mono(vec![0.0; 10], 44_100).unwrap();
        assert!(matches!(align_pair(m, other), Err(AudioError::SampleRateMismatch { .. })));
    }

    #[test]
    fn waveform_validation() {
        assert!(Waveform::mono(vec![], 48_000).is_err());
        assert!(Waveform::mono(vec![1.5], 48_000).is_err());
        assert!(Waveform::mono(vec![f32::NAN], 48_000).is_err());
        assert!(Waveform::new(vec![vec![0.0]; 3], 48_000).is_err());
        assert!(Waveform::stereo(vec![0.0; 2], vec![0.0; 3], 48_000).is_err());
    }

    proptest! {
        #[test]
        fn mid_side_is_invertible(pairs in proptest::collection::vec((-1.0f32..=1.0, -1.0f32..=1.0), 1..256)) {
            let (l, r): (Vec<f32>, Vec<f32>) = pairs.into_iter().unzip();
            let c = derive_channels(&Waveform::stereo(l.clone(), r.clone(), 48_000).unwrap()).unwrap();
            for i in 0..l.len() {
                let (m, s) = (c.mid[i] as f64, c.side[i] as f64);
                prop_assert!((m - (l[i] as f64 + r[i] as f64) / 2.0).abs() <= 1e-7);
                prop_assert!((s - (l[i] as f64 - r[i] as f64) / 2.0).abs() <= 1e-7);
                prop_assert!((m + s - l[i] as f64).abs() <= 1e-7);
                prop_assert!((m - s - r[i] as f64).abs() <= 1e-7);
            }
        }
    }
}
