//! Gammatone front end: a 32-band auditory filterbank applied frame-by-frame
//! in the FFT domain, producing band power for each L/R/M/S plane.

mod dump;
mod filter;

pub use dump::{read_features, write_features};
pub use filter::{center_frequencies, erb_bandwidth, impulse_response, FilterBand, ERB_BANDWIDTH_FACTOR};

use std::sync::Arc;

use rayon::prelude::*;
use rustfft::{num_complex::Complex64, Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::audio_io::{derive_channels, AudioError, ChannelStack, SignalPair};

/// Planes per signal (L, R, M, S).
pub const PLANES_PER_SIGNAL: usize = 4;
/// Planes in the network input: reference planes followed by test planes.
pub const FEATURE_PLANES: usize = 2 * PLANES_PER_SIGNAL;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("invalid gammatone configuration: {0}")]
    InvalidConfig(String),
    #[error("signal of {len} samples is shorter than one {window}-sample window")]
    TooShort { len: usize, window: usize },
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error("feature file {path}: {message}")]
    Format { path: std::path::PathBuf, message: String },
    #[error("feature file io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Compression {
    /// `log10(power + floor)`
    #[default]
    Log,
    Linear,
}

impl std::str::FromStr for Compression {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "log" => Ok(Compression::Log),
            "linear" => Ok(Compression::Linear),
            other => Err(format!("unknown feature compression '{other}' (expected log or linear)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammatoneConfig {
    pub n_bands: usize,
    pub f_low: f64,
    pub f_high: f64,
    pub window_ms: f64,
    pub hop_ms: f64,
    pub order: u32,
    pub sample_rate: u32,
    pub compression: Compression,
    pub log_floor: f64,
}

impl Default for GammatoneConfig {
    fn default() -> Self {
        Self {
            n_bands: 32,
            f_low: 50.0,
            f_high: 24_000.0,
            window_ms: 80.0,
            hop_ms: 20.0,
            order: 4,
            sample_rate: 48_000,
            compression: Compression::Log,
            log_floor: 1e-10,
        }
    }
}

impl GammatoneConfig {
    pub fn validate(&self) -> Result<(), FeatureError> {
        let bad = |m: String| Err(FeatureError::InvalidConfig(m));
        if self.n_bands < 2 {
            return bad(format!("n_bands must be >= 2, got {}", self.n_bands));
        }
        if !(self.f_low > 0.0 && self.f_low < self.f_high) {
            return bad(format!("need 0 < f_low < f_high, got {} and {}", self.f_low, self.f_high));
        }
        if self.sample_rate == 0 || self.f_high > self.sample_rate as f64 / 2.0 {
            return bad(format!("f_high {} exceeds Nyquist of {} Hz", self.f_high, self.sample_rate));
        }
        if !(self.hop_ms > 0.0 && self.window_ms >= self.hop_ms) {
            return bad(format!("need window_ms >= hop_ms > 0, got {} and {}", self.window_ms, self.hop_ms));
        }
        if self.order == 0 {
            return bad("filter order must be >= 1".into());
        }
        if !(self.log_floor > 0.0) {
            return bad("log floor must be positive".into());
        }
        if self.hop_samples() == 0 || self.window_samples() < 2 {
            return bad("window/hop shorter than one sample".into());
        }
        Ok(())
    }

    pub fn window_samples(&self) -> usize {
        (self.window_ms * self.sample_rate as f64 / 1000.0).round() as usize
    }

    pub fn hop_samples(&self) -> usize {
        (self.hop_ms * self.sample_rate as f64 / 1000.0).round() as usize
    }

    /// Frames produced for a signal of `len` samples (full windows only).
    pub fn frame_count(&self, len: usize) -> usize {
        let win = self.window_samples();
        if len < win {
            0
        } else {
            1 + (len - win) / self.hop_samples()
        }
    }

    pub(crate) fn canonical_bytes(&self) -> Vec<u8> {
        let mut b = Vec::with_capacity(64);
        b.extend_from_slice(&(self.n_bands as u32).to_le_bytes());
        b.extend_from_slice(&self.f_low.to_le_bytes());
        b.extend_from_slice(&self.f_high.to_le_bytes());
        b.extend_from_slice(&self.window_ms.to_le_bytes());
        b.extend_from_slice(&self.hop_ms.to_le_bytes());
        b.extend_from_slice(&self.order.to_le_bytes());
        b.extend_from_slice(&self.sample_rate.to_le_bytes());
        b.push(match self.compression {
            Compression::Log => 0,
            Compression::Linear => 1,
        });
        b.extend_from_slice(&self.log_floor.to_le_bytes());
        b
    }

    /// Hex SHA-256 of the canonical encoding; used as a cache key.
    pub fn fingerprint(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_bytes()))
    }
}

/// Band features laid out `[planes][frames][bands]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GammatoneSpectrogram {
    pub planes: usize,
    pub frames: usize,
    pub bands: usize,
    pub data: Vec<f32>,
    pub frame_times: Vec<f64>,
    pub config: GammatoneConfig,
    /// Whether `data` holds raw power or compressed power.
    pub compression: Option<Compression>,
}

impl GammatoneSpectrogram {
    pub fn index(&self, plane: usize, frame: usize, band: usize) -> usize {
        (plane * self.frames + frame) * self.bands + band
    }

    pub fn get(&self, plane: usize, frame: usize, band: usize) -> f32 {
        self.data[self.index(plane, frame, band)]
    }

    pub fn plane(&self, plane: usize) -> &[f32] {
        let n = self.frames * self.bands;
        &self.data[plane * n..(plane + 1) * n]
    }

    pub fn frame_row(&self, plane: usize, frame: usize) -> &[f32] {
        let i = self.index(plane, frame, 0);
        &self.data[i..i + self.bands]
    }

    /// Contiguous frame range `[start, start + len)` of every plane.
    pub fn crop_frames(&self, start: usize, len: usize) -> GammatoneSpectrogram {
        assert!(start + len <= self.frames && len > 0);
        let mut data = Vec::with_capacity(self.planes * len * self.bands);
        for p in 0..self.planes {
            let i = self.index(p, start, 0);
            data.extend_from_slice(&self.data[i..i + len * self.bands]);
        }
        GammatoneSpectrogram {
            planes: self.planes,
            frames: len,
            bands: self.bands,
            data,
            frame_times: self.frame_times[start..start + len].to_vec(),
            config: self.config.clone(),
            compression: self.compression,
        }
    }
}

/// Precomputed filterbank: per-band squared magnitude response sampled on
/// the frame FFT grid, plus the analysis window.
pub struct Filterbank {
    config: GammatoneConfig,
    bands: Vec<FilterBand>,
    /// `n_bands` rows of `window/2 + 1` weights, already scaled so that the
    /// inner product with `|X_k|^2` gives mean-square band output.
    weights: Vec<Vec<f64>>,
    window: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Filterbank {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Filterbank").field("config", &self.config).field("bands", &self.bands).finish()
    }
}

impl Filterbank {
    pub fn new(config: &GammatoneConfig) -> Result<Self, FeatureError> {
        config.validate()?;
        let fs = config.sample_rate as f64;
        let n = config.window_samples();
        let bands: Vec<FilterBand> =
            center_frequencies(config).into_iter().map(|f0| FilterBand::new(f0, config.order, fs)).collect();
        // periodic Hann
        let window: Vec<f64> =
            (0..n).map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos()).collect();
        let win_energy: f64 = window.iter().map(|w| w * w).sum();
        let half = n / 2;
        let weights = bands
            .par_iter()
            .map(|band| {
                (0..=half)
                    .map(|k| {
                        let f = k as f64 * fs / n as f64;
                        let g = band.magnitude(f, fs);
                        let fold = if k == 0 || (n % 2 == 0 && k == half) { 1.0 } else { 2.0 };
                        fold * g * g / (n as f64 * win_energy)
                    })
                    .collect()
            })
            .collect();
        let fft = FftPlanner::<f64>::new().plan_fft_forward(n);
        Ok(Self { config: config.clone(), bands, weights, window, fft })
    }

    pub fn config(&self) -> &GammatoneConfig {
        &self.config
    }

    pub fn bands(&self) -> &[FilterBand] {
        &self.bands
    }

    pub fn weights(&self) -> &[Vec<f64>] {
        &self.weights
    }

    /// Band powers of one frame; `frame.len()` must equal the window length.
    pub fn frame_power(&self, frame: &[f32], out: &mut [f64]) {
        let mut buf: Vec<Complex64> =
            frame.iter().zip(&self.window).map(|(&x, &w)| Complex64::new(x as f64 * w, 0.0)).collect();
        self.fft.process(&mut buf);
        let half = self.window.len() / 2;
        let power: Vec<f64> = buf[..=half].iter().map(|c| c.norm_sqr()).collect();
        for (o, w) in out.iter_mut().zip(&self.weights) {
            *o = w.iter().zip(&power).map(|(a, b)| a * b).sum();
        }
    }

    /// Power spectrogram of a single plane, `[frames][bands]`.
    pub fn plane_power(&self, plane: &[f32]) -> Result<Vec<f64>, FeatureError> {
        let win = self.config.window_samples();
        let hop = self.config.hop_samples();
        let frames = self.config.frame_count(plane.len());
        if frames == 0 {
            return Err(FeatureError::TooShort { len: plane.len(), window: win });
        }
        let nb = self.bands.len();
        let mut out = vec![0.0; frames * nb];
        out.par_chunks_mut(nb).enumerate().for_each(|(t, row)| {
            self.frame_power(&plane[t * hop..t * hop + win], row);
        });
        Ok(out)
    }

    fn frame_times(&self, frames: usize) -> Vec<f64> {
        let fs = self.config.sample_rate as f64;
        let (win, hop) = (self.config.window_samples(), self.config.hop_samples());
        (0..frames).map(|t| (t * hop) as f64 / fs + win as f64 / (2.0 * fs)).collect()
    }

    /// Raw band power of the four planes of `stack`.
    pub fn spectrogram(&self, stack: &ChannelStack) -> Result<GammatoneSpectrogram, FeatureError> {
        if stack.sample_rate != self.config.sample_rate {
            return Err(FeatureError::InvalidConfig(format!(
                "signal rate {} Hz does not match filterbank rate {} Hz",
                stack.sample_rate, self.config.sample_rate
            )));
        }
        let planes = stack.planes();
        let rows: Vec<Vec<f64>> = planes.par_iter().map(|p| self.plane_power(p)).collect::<Result<_, _>>()?;
        let frames = rows[0].len() / self.bands.len();
        Ok(GammatoneSpectrogram {
            planes: planes.len(),
            frames,
            bands: self.bands.len(),
            data: rows.into_iter().flatten().map(|v| v as f32).collect(),
            frame_times: self.frame_times(frames),
            config: self.config.clone(),
            compression: None,
        })
    }

    /// Eight-plane network input: reference L/R/M/S then test L/R/M/S,
    /// compressed according to the configuration.
    pub fn build_features(&self, pair: &SignalPair) -> Result<GammatoneSpectrogram, FeatureError> {
        let r = self.spectrogram(&derive_channels(&pair.reference)?)?;
        let t = self.spectrogram(&derive_channels(&pair.test)?)?;
        if r.frames != t.frames {
            return Err(FeatureError::InvalidConfig("reference and test are not aligned".into()));
        }
        let floor = self.config.log_floor;
        let compress = |v: f32| match self.config.compression {
            Compression::Log => (v as f64 + floor).log10() as f32,
            Compression::Linear => v,
        };
        let data = r.data.iter().chain(&t.data).map(|&v| compress(v)).collect();
        Ok(GammatoneSpectrogram {
            planes: FEATURE_PLANES,
            frames: r.frames,
            bands: r.bands,
            data,
            frame_times: r.frame_times,
            config: self.config.clone(),
            compression: Some(self.config.compression),
        })
    }
}

pub fn spectrogram(stack: &ChannelStack, cfg: &GammatoneConfig) -> Result<GammatoneSpectrogram, FeatureError> {
    Filterbank::new(cfg)?.spectrogram(stack)
}

pub fn build_features(pair: &SignalPair, cfg: &GammatoneConfig) -> Result<GammatoneSpectrogram, FeatureError> {
    Filterbank::new(cfg)?.build_features(pair)
}
