//! Biquad sections and an FFT band-stop used by the degradations.

use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

/// Direct form I biquad, coefficients normalised by a0.
#[derive(Debug, Clone, Copy)]
pub struct Biquad {
    b: [f64; 3],
    a: [f64; 2],
}

impl Biquad {
    pub fn lowpass(cutoff: f64, q: f64, rate: f64) -> Self {
        let w = 2.0 * PI * cutoff / rate;
        let (sin, cos) = w.sin_cos();
        let alpha = sin / (2.0 * q);
        let a0 = 1.0 + alpha;
        let b1 = (1.0 - cos) / a0;
        Self { b: [b1 / 2.0, b1, b1 / 2.0], a: [-2.0 * cos / a0, (1.0 - alpha) / a0] }
    }

    /// Constant 0 dB peak gain band-pass.
    pub fn bandpass(center: f64, q: f64, rate: f64) -> Self {
        let w = 2.0 * PI * center / rate;
        let (sin, cos) = w.sin_cos();
        let alpha = sin / (2.0 * q);
        let a0 = 1.0 + alpha;
        Self { b: [alpha / a0, 0.0, -alpha / a0], a: [-2.0 * cos / a0, (1.0 - alpha) / a0] }
    }

    pub fn process(&self, x: &mut [f64]) {
        let (mut x1, mut x2, mut y1, mut y2) = (0.0, 0.0, 0.0, 0.0);
        for v in x.iter_mut() {
            let y = self.b[0] * *v + self.b[1] * x1 + self.b[2] * x2 - self.a[0] * y1 - self.a[1] * y2;
            x2 = x1;
            x1 = *v;
            y2 = y1;
            y1 = y;
            *v = y;
        }
    }

    pub fn magnitude(&self, freq: f64, rate: f64) -> f64 {
        let z1 = Complex::from_polar(1.0, -2.0 * PI * freq / rate);
        let z2 = z1 * z1;
        let num = self.b[0] + z1 * self.b[1] + z2 * self.b[2];
        let den = 1.0 + z1 * self.a[0] + z2 * self.a[1];
        (num / den).norm()
    }
}

/// Eighth-order Butterworth low-pass as four biquads.
pub fn butterworth8(cutoff: f64, rate: f64) -> [Biquad; 4] {
    std::array::from_fn(|k| {
        let theta = PI * (2 * k + 1) as f64 / 16.0;
        Biquad::lowpass(cutoff, 1.0 / (2.0 * theta.sin()), rate)
    })
}

/// Zero all spectral content between `lo` and `hi` Hz.
pub fn band_stop(x: &[f32], lo: f64, hi: f64, rate: f64) -> Vec<f32> {
    let n = x.len();
    let mut planner = FftPlanner::<f64>::new();
    let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v as f64, 0.0)).collect();
    planner.plan_fft_forward(n).process(&mut buf);
    for k in 0..=n / 2 {
        let f = k as f64 * rate / n as f64;
        if f >= lo && f <= hi {
            buf[k] = Complex::new(0.0, 0.0);
            if k > 0 {
                buf[n - k] = Complex::new(0.0, 0.0);
            }
        }
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    buf.iter().map(|c| (c.re / n as f64) as f32).collect()
}

/// Power spectrum `|X_k|^2` for bins `0..=n/2`.
pub fn power_spectrum(x: &[f32]) -> Vec<f64> {
    let n = x.len();
    let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v as f64, 0.0)).collect();
    FftPlanner::<f64>::new().plan_fft_forward(n).process(&mut buf);
    buf[..=n / 2].iter().map(|c| c.norm_sqr()).collect()
}
