//! Gammatone filter design: ERB scale, centre frequencies, impulse and
//! magnitude responses.

use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{FeatureError, GammatoneConfig};

/// Bandwidth multiplier applied to the ERB when choosing the decay rate `b`.
pub const ERB_BANDWIDTH_FACTOR: f64 = 1.019;

/// Equivalent rectangular bandwidth in Hz: `24.7 (4.37 f / 1000 + 1)`.
pub fn erb_bandwidth(f: f64) -> Result<f64, FeatureError> {
    if !(f > 0.0) || !f.is_finite() {
        return Err(FeatureError::InvalidConfig(format!("ERB requested at non-positive frequency {f}")));
    }
    Ok(erb_unchecked(f))
}

fn erb_unchecked(f: f64) -> f64 {
    24.7 * (4.37 * f / 1000.0 + 1.0)
}

fn erb_rate(f: f64) -> f64 {
    21.4 * (1.0 + 0.00437 * f).log10()
}

fn erb_rate_inverse(e: f64) -> f64 {
    (10f64.powf(e / 21.4) - 1.0) / 0.00437
}

/// `n_bands` frequencies spaced uniformly on the ERB-rate scale between
/// `f_low` and `f_high`, both endpoints included.
pub fn center_frequencies(cfg: &GammatoneConfig) -> Vec<f64> {
    let lo = erb_rate(cfg.f_low);
    let hi = erb_rate(cfg.f_high);
    let last = cfg.n_bands - 1;
    (0..cfg.n_bands)
        .map(|i| match i {
            0 => cfg.f_low,
            i if i == last => cfg.f_high,
            i => erb_rate_inverse(lo + (hi - lo) * i as f64 / last as f64),
        })
        .collect()
}

/// One gammatone channel, `h(t) = c t^(n-1) exp(-2 pi b t) cos(2 pi f0 t + phi)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterBand {
    pub f0: f64,
    pub b: f64,
    pub c: f64,
    pub n: u32,
    pub phi: f64,
}

/// Eulerian numbers `A(m, j)`, j = 0..m, as f64.
fn eulerian_row(m: u32) -> Vec<f64> {
    let mut row = vec![1.0];
    for mm in 1..=m {
        let mut next = vec![0.0; mm as usize];
        for j in 0..mm as usize {
            let keep = if j < row.len() { (j + 1) as f64 * row[j] } else { 0.0 };
            let from_left = if j >= 1 && j - 1 < row.len() { (mm as usize - j) as f64 * row[j - 1] } else { 0.0 };
            next[j] = keep + from_left;
        }
        row = next;
    }
    row
}

/// `sum_{k >= 0} k^m r^k` for `|r| < 1`.
fn power_series(m: u32, r: Complex64, eulerian: &[f64]) -> Complex64 {
    let one = Complex64::new(1.0, 0.0);
    if m == 0 {
        return one / (one - r);
    }
    let mut poly = Complex64::new(0.0, 0.0);
    for &e in eulerian.iter().rev() {
        poly = poly * r + e;
    }
    r * poly / (one - r).powu(m + 1)
}

impl FilterBand {
    /// Band at `f0` with `b = 1.019 ERB(f0)` and `c` chosen so the peak of the
    /// discrete-time magnitude response is exactly 1.
    pub fn new(f0: f64, order: u32, sample_rate: f64) -> Self {
        let mut band = FilterBand { f0, b: ERB_BANDWIDTH_FACTOR * erb_unchecked(f0), c: 1.0, n: order, phi: 0.0 };
        let (_, peak) = band.find_peak(sample_rate);
        band.c = 1.0 / peak;
        band
    }

    /// Closed-form DTFT of the sampled impulse response at `freq` Hz.
    pub fn frequency_response(&self, freq: f64, sample_rate: f64) -> Complex64 {
        let eul = eulerian_row(self.n.saturating_sub(1));
        self.response_with(freq, sample_rate, &eul)
    }

    fn response_with(&self, freq: f64, sample_rate: f64, eulerian: &[f64]) -> Complex64 {
        let m = self.n.saturating_sub(1);
        let decay = -2.0 * PI * self.b / sample_rate;
        let carrier = 2.0 * PI * self.f0 / sample_rate;
        let omega = 2.0 * PI * freq / sample_rate;
        let r_pos = Complex64::from_polar(decay.exp(), carrier - omega);
        let r_neg = Complex64::from_polar(decay.exp(), -carrier - omega);
        let phase = Complex64::from_polar(1.0, self.phi);
        let sum = phase * power_series(m, r_pos, eulerian) + phase.conj() * power_series(m, r_neg, eulerian);
        sum * (0.5 * self.c / sample_rate.powi(m as i32))
    }

    pub fn magnitude(&self, freq: f64, sample_rate: f64) -> f64 {
        self.frequency_response(freq, sample_rate).norm()
    }

    /// Frequency and value of the magnitude-response maximum near `f0`.
    pub fn find_peak(&self, sample_rate: f64) -> (f64, f64) {
        let eul = eulerian_row(self.n.saturating_sub(1));
        let nyquist = sample_rate / 2.0;
        let span = 2.0 * erb_unchecked(self.f0);
        let lo = (self.f0 - span).max(0.0);
        let hi = (self.f0 + span).min(nyquist);
        let mag = |f: f64| self.response_with(f, sample_rate, &eul).norm();
        let steps = 400;
        let step = (hi - lo) / steps as f64;
        let (mut best_f, mut best) = (lo, mag(lo));
        for i in 1..=steps {
            let f = lo + step * i as f64;
            let v = mag(f);
            if v > best {
                best = v;
                best_f = f;
            }
        }
        // golden-section refinement inside the bracketing grid cell pair
        let (mut a, mut b) = ((best_f - step).max(lo), (best_f + step).min(hi));
        let g = 0.5 * (5f64.sqrt() - 1.0);
        let mut x1 = b - g * (b - a);
        let mut x2 = a + g * (b - a);
        let (mut f1, mut f2) = (mag(x1), mag(x2));
        for _ in 0..80 {
            if f1 < f2 {
                a = x1;
                x1 = x2;
                f1 = f2;
                x2 = a + g * (b - a);
                f2 = mag(x2);
            } else {
                b = x2;
                x2 = x1;
                f2 = f1;
                x1 = b - g * (b - a);
                f1 = mag(x1);
            }
        }
        let f = 0.5 * (a + b);
        let v = mag(f);
        if v >= best {
            (f, v)
        } else {
            (best_f, best)
        }
    }

    /// Sample count after which the envelope stays below 1% of its peak.
    pub fn decay_length(&self, sample_rate: f64) -> usize {
        let m = self.n.saturating_sub(1) as f64;
        let k = 2.0 * PI * self.b;
        let t_peak = m / k;
        let env = |t: f64| t.powf(m) * (-k * t).exp();
        let peak = if m == 0.0 { 1.0 } else { env(t_peak) };
        let mut t = t_peak.max(1.0 / sample_rate);
        let dt = 1.0 / sample_rate;
        while env(t) >= 0.01 * peak {
            t += dt * 16.0;
        }
        (t * sample_rate).ceil() as usize + 1
    }
}

/// Samples of `h(t)` at `t = k / rate` for `k = 0..duration`.
pub fn impulse_response(band: &FilterBand, duration: usize, rate: f64) -> Vec<f64> {
    let m = band.n.saturating_sub(1) as i32;
    (0..duration)
        .map(|k| {
            let t = k as f64 / rate;
            if k == 0 && m > 0 {
                return 0.0;
            }
            band.c * t.powi(m) * (-2.0 * PI * band.b * t).exp() * (2.0 * PI * band.f0 * t + band.phi).cos()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const FS: f64 = 48_000.0;

    #[test]
    fn erb_values() {
        assert!((erb_bandwidth(1000.0).unwrap() - 132.639).abs() < 1e-9);
        assert!((erb_bandwidth(1e-9).unwrap() - 24.7).abs() < 1e-9);
        assert!(erb_bandwidth(2000.0).unwrap() > erb_bandwidth(1000.0).unwrap());
        assert!(erb_bandwidth(0.0).is_err());
        assert!(erb_bandwidth(-3.0).is_err());
    }

    #[test]
    fn centre_frequency_layout() {
        let cfg = GammatoneConfig::default();
        let f = center_frequencies(&cfg);
        assert_eq!(f.len(), 32);
        assert_eq!(f[0], 50.0);
        assert_eq!(*f.last().unwrap(), 24_000.0);
        assert!(f.windows(2).all(|w| w[1] > w[0]));
        let two = GammatoneConfig { n_bands: 2, ..GammatoneConfig::default() };
        assert_eq!(center_frequencies(&two), vec![50.0, 24_000.0]);
        // uniform on the ERB-rate scale
        let d: Vec<f64> = f.windows(2).map(|w| erb_rate(w[1]) - erb_rate(w[0])).collect();
        assert!(d.iter().all(|x| (x - d[0]).abs() < 1e-9));
    }

    #[test]
    fn eulerian_polynomials() {
        assert_eq!(eulerian_row(0), vec![1.0]);
        assert_eq!(eulerian_row(1), vec![1.0]);
        assert_eq!(eulerian_row(2), vec![1.0, 1.0]);
        assert_eq!(eulerian_row(3), vec![1.0, 4.0, 1.0]);
        assert_eq!(eulerian_row(4), vec![1.0, 11.0, 11.0, 1.0]);
    }

    #[test]
    fn impulse_response_shape() {
        let band = FilterBand::new(1000.0, 4, FS);
        let h = impulse_response(&band, 4000, FS);
        assert_eq!(h[0], 0.0);
        // envelope t^3 exp(-2 pi b t) peaks at 3 / (2 pi b); locate it by
        // scanning the analytic envelope on a fine grid
        let k = 2.0 * PI * band.b;
        let env = |t: f64| t.powi(3) * (-k * t).exp();
        let mut best = (0.0, 0.0);
        for i in 1..200_000 {
            let t = i as f64 * 1e-7;
            let v = env(t);
            if v > best.1 {
                best = (t, v);
            }
        }
        assert!((best.0 - 3.0 / k).abs() < 2e-7, "{} vs {}", best.0, 3.0 / k);
    }

    #[test]
    fn closed_form_matches_direct_dtft() {
        for f0 in [50.0, 440.0, 3_000.0, 15_000.0, 24_000.0] {
            let band = FilterBand::new(f0, 4, FS);
            let len = band.decay_length(FS) * 6;
            let h = impulse_response(&band, len, FS);
            for freq in [0.0, f0 * 0.8, f0, (f0 * 1.3).min(24_000.0), 12_345.0] {
                let w = 2.0 * PI * freq / FS;
                let direct: Complex64 = h
                    .iter()
                    .enumerate()
                    .map(|(k, &v)| Complex64::from_polar(v, -w * k as f64))
                    .sum();
                let closed = band.frequency_response(freq, FS);
                assert!((direct - closed).norm() < 1e-6, "f0={f0} f={freq}: {direct} vs {closed}");
            }
        }
    }

    #[test]
    fn peak_gain_is_unity_and_near_f0() {
        let cfg = GammatoneConfig::default();
        for f0 in center_frequencies(&cfg) {
            let band = FilterBand::new(f0, 4, FS);
            let (fp, g) = band.find_peak(FS);
            assert!((g - 1.0).abs() < 1e-9);
            assert!((fp - f0).abs() <= 0.5 * erb_unchecked(f0), "f0={f0} peak at {fp}");
            assert!(band.b > 0.0);
        }
    }

    #[test]
    fn decay_length_reaches_one_percent() {
        let band = FilterBand::new(200.0, 4, FS);
        let len = band.decay_length(FS);
        let h = impulse_response(&band, len + 2000, FS);
        let peak = h.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(h[len..].iter().all(|v| v.abs() < 0.011 * peak));
    }
}
