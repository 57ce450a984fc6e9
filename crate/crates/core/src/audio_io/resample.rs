//! Rational-ratio windowed-sinc polyphase resampler.

use std::f64::consts::PI;

use super::{Waveform, TARGET_RATE};

/// Zero crossings of the sinc on each side of the kernel centre.
const ZERO_CROSSINGS: f64 = 48.0;
/// Cutoff as a fraction of the lower of the two Nyquist frequencies.
const ROLLOFF: f64 = 0.93;
const KAISER_BETA: f64 = 9.0;

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

/// Modified Bessel function of the first kind, order zero.
fn bessel_i0(x: f64) -> f64 {
    let q = x * x / 4.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut k = 1.0;
    while term > sum * 1e-17 {
        term *= q / (k * k);
        sum += term;
        k += 1.0;
    }
    sum
}

struct PolyphaseKernel {
    up: usize,
    down: usize,
    half: usize,
    /// `up` rows of `2 * half` taps; row `p` is the filter for fractional
    /// input offset `p / up`.
    taps: Vec<f64>,
}

impl PolyphaseKernel {
    fn new(from: u32, to: u32) -> Self {
        let g = gcd(from as u64, to as u64);
        let up = (to as u64 / g) as usize;
        let down = (from as u64 / g) as usize;
        // cycles per input sample
        let fc = 0.5 * (up as f64 / down as f64).min(1.0) * ROLLOFF;
        let half_width = ZERO_CROSSINGS / (2.0 * fc);
        let half = half_width.ceil() as usize;
        let i0b = bessel_i0(KAISER_BETA);
        let width = 2 * half;
        let mut taps = vec![0.0; up * width];
        for p in 0..up {
            let frac = p as f64 / up as f64;
            let row = &mut taps[p * width..(p + 1) * width];
            for (j, tap) in row.iter_mut().enumerate() {
                // input index offset relative to floor(t): j - half + 1
                let tau = (j as f64 - half as f64 + 1.0) - frac;
                let r = tau / half_width;
                if r.abs() >= 1.0 {
                    continue;
                }
                let x = 2.0 * fc * tau;
                let sinc = if x.abs() < 1e-12 { 1.0 } else { (PI * x).sin() / (PI * x) };
                let win = bessel_i0(KAISER_BETA * (1.0 - r * r).sqrt()) / i0b;
                *tap = 2.0 * fc * sinc * win;
            }
            let sum: f64 = row.iter().sum();
            row.iter_mut().for_each(|t| *t /= sum);
        }
        Self { up, down, half, taps }
    }

    fn output_len(&self, input_len: usize) -> usize {
        (input_len * self.up).div_ceil(self.down)
    }

    fn process(&self, input: &[f32]) -> Vec<f32> {
        let width = 2 * self.half;
        let n_in = input.len() as isize;
        (0..self.output_len(input.len()))
            .map(|n| {
                let pos = n * self.down;
                let base = (pos / self.up) as isize;
                let p = pos % self.up;
                let row = &self.taps[p * width..(p + 1) * width];
                let start = base - self.half as isize + 1;
                let mut acc = 0.0;
                for (j, &t) in row.iter().enumerate() {
                    let idx = start + j as isize;
                    if idx >= 0 && idx < n_in {
                        acc += t * input[idx as usize] as f64;
                    }
                }
                acc.clamp(-1.0, 1.0) as f32
            })
            .collect()
    }
}

/// Convert `w` to `rate`. Identity when the rates already match.
pub fn resample(w: &Waveform, rate: u32) -> Waveform {
    if w.sample_rate() == rate {
        return w.clone();
    }
    let kernel = PolyphaseKernel::new(w.sample_rate(), rate);
    let planes = w.planes().iter().map(|c| kernel.process(c)).collect();
    Waveform::new(planes, rate).expect("resampled output keeps waveform invariants")
}

pub fn resample_to_48k(w: &Waveform) -> Waveform {
    resample(w, TARGET_RATE)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(freq: f64, rate: u32, secs: f64, amp: f64) -> Vec<f32> {
        let n = (rate as f64 * secs) as usize;
        (0..n).map(|i| (amp * (2.0 * PI * freq * i as f64 / rate as f64).sin()) as f32).collect()
    }

    fn rms(x: &[f32]) -> f64 {
        (x.iter().map(|&v| v as f64 * v as f64).sum::<f64>() / x.len() as f64).sqrt()
    }

    #[test]
    fn pass_through_at_48k() {
        let w = Waveform::mono(sine(440.0, 48_000, 0.1, 0.5), 48_000).unwrap();
        assert_eq!(resample_to_48k(&w), w);
    }

    #[test]
    fn dc_is_preserved() {
        let w = Waveform::mono(vec![0.5; 24_000], 24_000).unwrap();
        let out = resample_to_48k(&w);
        assert_eq!(out.sample_rate(), 48_000);
        let edge = 400;
        for &x in &out.channel(0)[edge..out.len() - edge] {
            assert!((x - 0.5).abs() < 1e-3, "{x}");
        }
    }

    #[test]
    fn length_follows_rate_ratio() {
        let w = Waveform::mono(vec![0.0; 44_100], 44_100).unwrap();
        let out = resample_to_48k(&w);
        assert!((out.len() as i64 - 48_000).abs() <= 1);
        let w = Waveform::mono(vec![0.0; 96_000], 96_000).unwrap();
        assert_eq!(resample_to_48k(&w).len(), 48_000);
    }

    #[test]
    fn band_limited_sine_keeps_rms() {
        for (rate, freq) in [(44_100, 9_000.0), (24_000, 9_900.0), (32_000, 5_000.0), (96_000, 9_999.0), (22_050, 7_000.0)] {
            let x = sine(freq, rate, 0.5, 0.7);
            let w = Waveform::mono(x.clone(), rate).unwrap();
            let out = resample_to_48k(&w);
            let edge = 2_000;
            let y = &out.channel(0)[edge..out.len() - edge];
            let ratio = rms(y) / 0.7 * 2f64.sqrt();
            assert!((ratio - 1.0).abs() < 0.01, "rate {rate} freq {freq}: rms ratio {ratio}");
        }
    }

    #[test]
    fn stereo_planes_resample_independently() {
        let l = sine(1000.0, 44_100, 0.05, 0.3);
        let r = vec![0.0; l.len()];
        let out = resample_to_48k(&Waveform::stereo(l, r, 44_100).unwrap());
        assert_eq!(out.channels(), 2);
        assert!(out.channel(1).iter().all(|&x| x == 0.0));
    }
}
