//! Log-gamma, log-beta and digamma.

use std::f64::consts::PI;

use super::BetaError;

const LANCZOS_R: f64 = 10.900511;

const LANCZOS_DK: [f64; 11] = [
    2.485_740_891_387_535_5e-5,
    1.051_423_785_817_219_7,
    -3.456_870_972_220_162_5,
    4.512_277_094_668_948,
    -2.982_852_253_235_766_4,
    1.056_397_115_771_267,
    -1.954_287_731_916_458_7e-1,
    1.709_705_434_044_412e-2,
    -5.719_261_174_043_057e-4,
    4.633_994_733_599_057e-6,
    -2.719_949_084_886_077_2e-9,
];

/// ln(2 * sqrt(e / pi))
const LN_2_SQRT_E_OVER_PI: f64 = 0.620_782_237_635_245_2;
const LN_PI: f64 = 1.144_729_885_849_400_2;
const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Crossover above which the Stirling correction series is used.
const STIRLING_MIN: f64 = 10.0;

fn lanczos_sum(x: f64) -> f64 {
    LANCZOS_DK
        .iter()
        .enumerate()
        .skip(1)
        .fold(LANCZOS_DK[0], |s, (k, d)| s + d / (x + k as f64 - 1.0))
}

/// Natural log of the gamma function for `x > 0`.
///
/// Lanczos approximation (Pugh's r = 10.900511 coefficient set), with the
/// reflection formula below one half.
pub fn ln_gamma(x: f64) -> Result<f64, BetaError> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(BetaError::NonPositiveArgument(x));
    }
    Ok(ln_gamma_pos(x))
}

pub(crate) fn ln_gamma_pos(x: f64) -> f64 {
    if x < 0.5 {
        let s = LANCZOS_DK
            .iter()
            .enumerate()
            .skip(1)
            .fold(LANCZOS_DK[0], |s, (k, d)| s + d / (k as f64 - x));
        LN_PI
            - (PI * x).sin().ln()
            - s.ln()
            - LN_2_SQRT_E_OVER_PI
            - (0.5 - x) * ((0.5 - x + LANCZOS_R) / std::f64::consts::E).ln()
    } else {
        lanczos_sum(x).ln()
            + LN_2_SQRT_E_OVER_PI
            + (x - 0.5) * ((x - 0.5 + LANCZOS_R) / std::f64::consts::E).ln()
    }
}

/// Remainder of Stirling's series:
/// `ln_gamma(x) - ((x - 0.5) ln x - x + 0.5 ln 2pi)` for `x >= 10`.
fn stirling_correction(x: f64) -> f64 {
    // B_2k / (2k (2k - 1)), k = 1..8
    const C: [f64; 8] = [
        1.0 / 12.0,
        -1.0 / 360.0,
        1.0 / 1260.0,
        -1.0 / 1680.0,
        1.0 / 1188.0,
        -691.0 / 360_360.0,
        1.0 / 156.0,
        -3617.0 / 122_400.0,
    ];
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    let mut acc = 0.0;
    for c in C.iter().rev() {
        acc = acc * inv2 + c;
    }
    acc * inv
}

/// `ln B(a, b) = ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)`.
///
/// When either argument is large the three log-gamma terms are combined
/// analytically so the result does not lose precision to cancellation.
pub fn ln_beta(a: f64, b: f64) -> Result<f64, BetaError> {
    for v in [a, b] {
        if !(v > 0.0) || !v.is_finite() {
            return Err(BetaError::NonPositiveArgument(v));
        }
    }
    Ok(ln_beta_pos(a, b))
}

pub(crate) fn ln_beta_pos(a: f64, b: f64) -> f64 {
    let p = a.min(b);
    let q = a.max(b);
    let sum = p + q;
    if p >= STIRLING_MIN {
        let corr = stirling_correction(p) + stirling_correction(q) - stirling_correction(sum);
        -0.5 * q.ln() + HALF_LN_2PI + corr + (p - 0.5) * (p / sum).ln()
            + q * (-p / sum).ln_1p()
    } else if q >= STIRLING_MIN {
        let corr = stirling_correction(q) - stirling_correction(sum);
        ln_gamma_pos(p) + corr + p - p * sum.ln() + (q - 0.5) * (-p / sum).ln_1p()
    } else {
        ln_gamma_pos(p) + ln_gamma_pos(q) - ln_gamma_pos(sum)
    }
}

/// Digamma function for `x > 0`: upward recurrence until `x >= 6`, then the
/// asymptotic expansion in `1/x^2`.
pub fn digamma(x: f64) -> Result<f64, BetaError> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(BetaError::NonPositiveArgument(x));
    }
    Ok(digamma_pos(x))
}

pub(crate) fn digamma_pos(mut x: f64) -> f64 {
    // B_2k / (2k), k = 1..7
    const C: [f64; 7] = [
        1.0 / 12.0,
        -1.0 / 120.0,
        1.0 / 252.0,
        -1.0 / 240.0,
        1.0 / 132.0,
        -691.0 / 32_760.0,
        1.0 / 12.0,
    ];
    let mut shift = 0.0;
    while x < 6.0 {
        shift -= 1.0 / x;
        x += 1.0;
    }
    let inv2 = 1.0 / (x * x);
    let mut series = 0.0;
    for c in C.iter().rev() {
        series = series * inv2 + c;
    }
    shift + x.ln() - 0.5 / x - series * inv2
}
