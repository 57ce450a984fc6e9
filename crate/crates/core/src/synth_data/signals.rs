//! Deterministic test signals, so datasets need no external audio.

use std::f64::consts::PI;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::dsp::Biquad;
use crate::audio_io::Waveform;

/// Signals are scaled to this RMS level.
pub const SOURCE_RMS: f64 = 0.1;

/// Level of the broadband noise floor added to every source, relative to
/// [`SOURCE_RMS`]. It keeps every band above the log floor so band-limiting
/// degradations show up regardless of the source spectrum.
pub const AIR_FLOOR_DB: f64 = -50.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    MultiTone,
    NoiseBursts,
    SpeechLike,
    Stereo,
}

impl SourceKind {
    pub const ALL: [SourceKind; 4] = [Self::MultiTone, Self::NoiseBursts, Self::SpeechLike, Self::Stereo];

    pub fn for_item(i: usize) -> Self {
        Self::ALL[i % 4]
    }
}

fn log_uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    (rng.gen_range(lo.ln()..hi.ln())).exp()
}

/// Raised-cosine fade at both ends.
fn fade(x: &mut [f64], n: usize) {
    let n = n.min(x.len() / 2);
    let len = x.len();
    for i in 0..n {
        let g = 0.5 - 0.5 * (PI * i as f64 / n as f64).cos();
        x[i] *= g;
        x[len - 1 - i] *= g;
    }
}

fn normalise(x: &mut [f64]) {
    let rms = (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt();
    if rms > 0.0 {
        x.iter_mut().for_each(|v| *v *= SOURCE_RMS / rms);
    }
}

fn multi_tone(rng: &mut ChaCha8Rng, len: usize, rate: f64) -> Vec<f64> {
    let partials: Vec<(f64, f64, f64)> = (0..rng.gen_range(3..=6))
        .map(|_| (log_uniform(rng, 100.0, 6000.0), rng.gen_range(0.3..1.0), rng.gen_range(0.0..2.0 * PI)))
        .collect();
    (0..len)
        .map(|i| {
            let t = i as f64 / rate;
            partials.iter().map(|&(f, a, ph)| a * (2.0 * PI * f * t + ph).sin()).sum()
        })
        .collect()
}

fn noise_bursts(rng: &mut ChaCha8Rng, len: usize, rate: f64) -> Vec<f64> {
    let mut x: Vec<f64> = (0..len).map(|_| StandardNormal.sample(rng)).collect();
    Biquad::bandpass(log_uniform(rng, 300.0, 8000.0), rng.gen_range(0.7..2.0), rate).process(&mut x);
    let mut env = vec![0.0; len];
    let mut pos = 0;
    while pos < len {
        let on = (rng.gen_range(0.05..0.2) * rate) as usize;
        let off = (rng.gen_range(0.02..0.1) * rate) as usize;
        for k in 0..on.min(len - pos) {
            env[pos + k] = (PI * k as f64 / on as f64).sin().powi(2);
        }
        pos += on + off;
    }
    x.iter().zip(&env).map(|(a, b)| a * b).collect()
}

/// Harmonic source with vibrato, three formant weights and syllabic AM.
fn speech_like(rng: &mut ChaCha8Rng, len: usize, rate: f64) -> Vec<f64> {
    let f0 = rng.gen_range(100.0..220.0);
    let formants = [rng.gen_range(400.0..900.0), rng.gen_range(1000.0..2200.0), rng.gen_range(2400.0..3400.0)];
    let syllable = rng.gen_range(3.0..6.0);
    let n_harm = (5000.0 / f0) as usize;
    let weights: Vec<f64> = (1..=n_harm)
        .map(|h| {
            let f = h as f64 * f0;
            formants.iter().map(|&fm| (-((f / fm).ln() / 0.15).powi(2)).exp()).sum::<f64>() + 0.02
        })
        .collect();
    let mut phase = 0.0;
    (0..len)
        .map(|i| {
            let t = i as f64 / rate;
            phase += 2.0 * PI * f0 * (1.0 + 0.02 * (2.0 * PI * 5.0 * t).sin()) / rate;
            let am = 0.5 - 0.5 * (2.0 * PI * syllable * t).cos();
            am * weights.iter().enumerate().map(|(h, w)| w * ((h + 1) as f64 * phase).sin()).sum::<f64>()
        })
        .collect()
}

fn finish(mut x: Vec<f64>, rng: &mut ChaCha8Rng, rate: f64) -> Vec<f32> {
    fade(&mut x, (0.01 * rate) as usize);
    normalise(&mut x);
    let floor = SOURCE_RMS * 10f64.powf(AIR_FLOOR_DB / 20.0);
    x.into_iter()
        .map(|v| (v + floor * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng)).clamp(-1.0, 1.0) as f32)
        .collect()
}

/// One source signal of `seconds` length at `rate`.
pub fn generate(kind: SourceKind, rng: &mut ChaCha8Rng, seconds: f64, rate: u32) -> Waveform {
    let len = ((seconds * rate as f64).round() as usize).max(1);
    let r = rate as f64;
    let w = match kind {
        SourceKind::MultiTone => {
            let x = multi_tone(rng, len, r);
            Waveform::mono(finish(x, rng, r), rate)
        }
        SourceKind::NoiseBursts => {
            let x = noise_bursts(rng, len, r);
            Waveform::mono(finish(x, rng, r), rate)
        }
        SourceKind::SpeechLike => {
            let x = speech_like(rng, len, r);
            Waveform::mono(finish(x, rng, r), rate)
        }
        SourceKind::Stereo => {
            // shared tonal bed plus a burst track panned right
            let bed = multi_tone(rng, len, r);
            let bursts = noise_bursts(rng, len, r);
            let left: Vec<f64> = bed.iter().zip(&bursts).map(|(a, b)| a + 0.2 * b).collect();
            let right: Vec<f64> = bed.iter().zip(&bursts).map(|(a, b)| 0.6 * a + b).collect();
            let left = finish(left, rng, r);
            Waveform::stereo(left, finish(right, rng, r), rate)
        }
    };
    w.expect("generated samples are finite and within [-1, 1]")
}
