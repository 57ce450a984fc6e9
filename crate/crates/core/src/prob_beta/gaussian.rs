//! Gaussian likelihood on the normalized score, used as the ablation head.

use super::NormalizedScore;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// `0.5 ln(2 pi) + ln sigma + 0.5 ((s - mean) / sigma)^2`
pub fn gaussian_nll(s: NormalizedScore, mean_pred: f64, log_sigma: f64) -> f64 {
    let r = (s.value() - mean_pred) * (-log_sigma).exp();
    HALF_LN_2PI + log_sigma + 0.5 * r * r
}

/// Gradient of [`gaussian_nll`] with respect to `(mean_pred, log_sigma)`.
pub fn gaussian_nll_grad(s: NormalizedScore, mean_pred: f64, log_sigma: f64) -> (f64, f64) {
    let inv_sigma = (-log_sigma).exp();
    let r = (s.value() - mean_pred) * inv_sigma;
    (-r * inv_sigma, 1.0 - r * r)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_at_the_mean() {
        let s = NormalizedScore::new(0.4).unwrap();
        assert!((gaussian_nll(s, 0.4, 0.0) - 0.918_939).abs() < 1e-6);
        assert!((gaussian_nll(s, 0.4, 0.0) - 0.5 * (2.0 * std::f64::consts::PI).ln()).abs() < 1e-15);
    }

    #[test]
    fn grows_with_distance_and_is_symmetric() {
        let s = NormalizedScore::new(0.5).unwrap();
        let mut prev = gaussian_nll(s, 0.5, -1.0);
        for i in 1..50 {
            let d = i as f64 * 0.01;
            let up = gaussian_nll(s, 0.5 + d, -1.0);
            let down = gaussian_nll(s, 0.5 - d, -1.0);
            assert!(up > prev);
            assert!((up - down).abs() < 1e-12);
            prev = up;
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let s = NormalizedScore::new(0.73).unwrap();
        for (m, ls) in [(0.2, -1.5), (0.9, 0.3), (0.5, -3.0)] {
            let (gm, gs) = gaussian_nll_grad(s, m, ls);
            let h = 1e-6;
            let fm = (gaussian_nll(s, m + h, ls) - gaussian_nll(s, m - h, ls)) / (2.0 * h);
            let fs = (gaussian_nll(s, m, ls + h) - gaussian_nll(s, m, ls - h)) / (2.0 * h);
            assert!((gm - fm).abs() < 1e-5 * fm.abs().max(1.0));
            assert!((gs - fs).abs() < 1e-5 * fs.abs().max(1.0));
        }
    }
}
