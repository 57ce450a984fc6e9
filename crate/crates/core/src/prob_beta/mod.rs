//! Beta-distribution head: parameter mapping, density, moments, the
//! per-listener negative log-likelihood and its analytic gradient.
//!
//! The network emits an unconstrained pair `(a~, b~)`. Both are pushed
//! through `1 + exp(.)` so the resulting Beta is always unimodal on (0, 1).
//! A Gaussian head with the same two-output interface is kept for ablation.

mod gaussian;
mod special;

pub use gaussian::{gaussian_nll, gaussian_nll_grad};
pub use special::{digamma, ln_beta, ln_gamma};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Bound on the argument of `exp` in [`map_params`].
pub const EXP_ARG_LIMIT: f64 = 30.0;

/// Default clamp applied to normalized scores before taking logs
/// (half a MUSHRA point).
pub const DEFAULT_SCORE_EPS: f64 = 5e-3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BetaError {
    #[error("argument must be positive and finite, got {0}")]
    NonPositiveArgument(f64),
    #[error("Beta shape parameters must both exceed 1, got ({0}, {1})")]
    NotUnimodal(f64, f64),
    #[error("normalized score must lie in the open interval (0, 1), got {0}")]
    ScoreOutOfRange(f64),
    #[error("mode must lie in (0, 1) and concentration exceed 2, got ({0}, {1})")]
    InvalidModeConcentration(f64, f64),
}

/// Raw two-dimensional network output.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RawParams {
    pub alpha_tilde: f64,
    pub beta_tilde: f64,
}

impl RawParams {
    pub fn new(alpha_tilde: f64, beta_tilde: f64) -> Self {
        Self { alpha_tilde, beta_tilde }
    }

    pub fn as_array(&self) -> [f64; 2] {
        [self.alpha_tilde, self.beta_tilde]
    }
}

/// Shape parameters of a unimodal Beta distribution (`alpha, beta > 1`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaParams {
    alpha: f64,
    beta: f64,
}

impl BetaParams {
    pub fn new(alpha: f64, beta: f64) -> Result<Self, BetaError> {
        if alpha > 1.0 && beta > 1.0 && alpha.is_finite() && beta.is_finite() {
            Ok(Self { alpha, beta })
        } else {
            Err(BetaError::NotUnimodal(alpha, beta))
        }
    }

    /// Inverse of [`BetaParams::mode_concentration`].
    pub fn from_mode_concentration(omega: f64, kappa: f64) -> Result<Self, BetaError> {
        if !(omega > 0.0 && omega < 1.0 && kappa > 2.0 && kappa.is_finite()) {
            return Err(BetaError::InvalidModeConcentration(omega, kappa));
        }
        Self::new(1.0 + omega * (kappa - 2.0), 1.0 + (1.0 - omega) * (kappa - 2.0))
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn mean(&self) -> f64 {
        self.alpha / (self.alpha + self.beta)
    }

    pub fn variance(&self) -> f64 {
        let s = self.alpha + self.beta;
        self.alpha * self.beta / (s * s * (s + 1.0))
    }

    /// Mode `omega = (alpha - 1) / (alpha + beta - 2)` and concentration
    /// `kappa = alpha + beta`.
    pub fn mode_concentration(&self) -> (f64, f64) {
        let kappa = self.alpha + self.beta;
        ((self.alpha - 1.0) / (kappa - 2.0), kappa)
    }

    pub fn ln_beta_fn(&self) -> f64 {
        special::ln_beta_pos(self.alpha, self.beta)
    }
}

/// A MUSHRA score mapped to the open unit interval.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct NormalizedScore(f64);

impl NormalizedScore {
    pub fn new(z: f64) -> Result<Self, BetaError> {
        if z > 0.0 && z < 1.0 {
            Ok(Self(z))
        } else {
            Err(BetaError::ScoreOutOfRange(z))
        }
    }

    /// Clamp `s` into `[eps, 1 - eps]`. `eps` must lie in (0, 0.5).
    pub fn clamped(s: f64, eps: f64) -> Self {
        debug_assert!(eps > 0.0 && eps < 0.5);
        let s = if s.is_nan() { 0.5 } else { s };
        Self(s.clamp(eps, 1.0 - eps))
    }

    /// Scale a 0..100 MUSHRA rating down and clamp it.
    pub fn from_mushra(points: f64, eps: f64) -> Self {
        Self::clamped(points / 100.0, eps)
    }

    pub fn value(&self) -> f64 {
        self.0
    }
}

fn clamped_exp(x: f64) -> (f64, f64) {
    // returns (exp(clamp(x)), d/dx of it)
    if x > EXP_ARG_LIMIT {
        (EXP_ARG_LIMIT.exp(), 0.0)
    } else if x < -EXP_ARG_LIMIT {
        ((-EXP_ARG_LIMIT).exp(), 0.0)
    } else if x.is_nan() {
        (f64::NAN, f64::NAN)
    } else {
        let e = x.exp();
        (e, e)
    }
}

/// `alpha = 1 + exp(a~)`, `beta = 1 + exp(b~)`, with the exponent clamped to
/// `[-EXP_ARG_LIMIT, EXP_ARG_LIMIT]` so both stay finite and strictly above 1.
pub fn map_params(raw: RawParams) -> Result<BetaParams, BetaError> {
    let (ea, _) = clamped_exp(raw.alpha_tilde);
    let (eb, _) = clamped_exp(raw.beta_tilde);
    BetaParams::new(1.0 + ea, 1.0 + eb)
}

pub fn ln_beta_fn(alpha: f64, beta: f64) -> Result<f64, BetaError> {
    special::ln_beta(alpha, beta)
}

/// Log density of the Beta distribution at `z`.
pub fn log_pdf(z: NormalizedScore, p: &BetaParams) -> f64 {
    let z = z.value();
    (p.alpha - 1.0) * z.ln() + (p.beta - 1.0) * (-z).ln_1p() - p.ln_beta_fn()
}

pub fn mean(p: &BetaParams) -> f64 {
    p.mean()
}

pub fn variance(p: &BetaParams) -> f64 {
    p.variance()
}

pub fn mode_concentration(p: &BetaParams) -> (f64, f64) {
    p.mode_concentration()
}

/// Per-listener training loss:
/// `-(alpha - 1) ln s - (beta - 1) ln(1 - s) + ln B(alpha, beta)`.
pub fn nll_loss(s: NormalizedScore, p: &BetaParams) -> f64 {
    -log_pdf(s, p)
}

/// Gradient of [`nll_loss`] composed with [`map_params`], with respect to
/// the raw outputs `(a~, b~)`.
pub fn nll_grad(s: NormalizedScore, raw: RawParams) -> (f64, f64) {
    let (ea, dea) = clamped_exp(raw.alpha_tilde);
    let (eb, deb) = clamped_exp(raw.beta_tilde);
    let alpha = 1.0 + ea;
    let beta = 1.0 + eb;
    let psi_sum = special::digamma_pos(alpha + beta);
    let s = s.value();
    let d_alpha = -s.ln() + special::digamma_pos(alpha) - psi_sum;
    let d_beta = -(-s).ln_1p() + special::digamma_pos(beta) - psi_sum;
    (d_alpha * dea, d_beta * deb)
}

/// Which likelihood the two network outputs parameterize.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum LossHead {
    #[default]
    Beta,
    /// Outputs are `(mean, ln sigma)` of a Gaussian on the normalized score.
    Gaussian,
}

impl LossHead {
    pub fn name(&self) -> &'static str {
        match self {
            LossHead::Beta => "beta",
            LossHead::Gaussian => "gaussian",
        }
    }

    /// Loss and its gradient with respect to the two raw outputs.
    pub fn loss_and_grad(&self, s: NormalizedScore, out: RawParams) -> Result<(f64, [f64; 2]), BetaError> {
        match self {
            LossHead::Beta => {
                let p = map_params(out)?;
                let (ga, gb) = nll_grad(s, out);
                Ok((nll_loss(s, &p), [ga, gb]))
            }
            LossHead::Gaussian => {
                let (m, ls) = (out.alpha_tilde, out.beta_tilde);
                let (gm, gs) = gaussian_nll_grad(s, m, ls);
                Ok((gaussian_nll(s, m, ls), [gm, gs]))
            }
        }
    }

    pub fn loss(&self, s: NormalizedScore, out: RawParams) -> Result<f64, BetaError> {
        match self {
            LossHead::Beta => Ok(nll_loss(s, &map_params(out)?)),
            LossHead::Gaussian => Ok(gaussian_nll(s, out.alpha_tilde, out.beta_tilde)),
        }
    }
}

impl std::fmt::Display for LossHead {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for LossHead {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "beta" => Ok(LossHead::Beta),
            "gaussian" => Ok(LossHead::Gaussian),
            other => Err(format!("unknown loss head '{other}' (expected beta or gaussian)")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bp(a: f64, b: f64) -> BetaParams {
        BetaParams::new(a, b).unwrap()
    }

    #[test]
    fn map_params_examples() {
        let p = map_params(RawParams::new(0.0, 0.0)).unwrap();
        assert_eq!((p.alpha(), p.beta()), (2.0, 2.0));
        let p = map_params(RawParams::new(0.693_147, 0.0)).unwrap();
        assert!((p.alpha() - 3.0).abs() < 1e-5 && p.beta() == 2.0);
        let p = map_params(RawParams::new(f64::NEG_INFINITY, 0.0)).unwrap();
        assert!(p.alpha() > 1.0 && p.alpha() < 1.0 + 1e-12);
        for x in [-1e6, -31.0, 31.0, 1e6, f64::INFINITY] {
            let p = map_params(RawParams::new(x, -x)).unwrap();
            assert!(p.alpha() > 1.0 && p.beta() > 1.0);
            assert!(p.alpha().is_finite() && p.beta().is_finite());
        }
        assert!(map_params(RawParams::new(f64::NAN, 0.0)).is_err());
    }

    #[test]
    fn map_params_is_monotone() {
        let mut prev = 1.0;
        for i in -300..=300 {
            let a = map_params(RawParams::new(i as f64 * 0.1, 0.0)).unwrap().alpha();
            assert!(a > prev);
            prev = a;
        }
    }

    #[test]
    fn log_pdf_examples() {
        let half = NormalizedScore::new(0.5).unwrap();
        assert!((log_pdf(half, &bp(2.0, 2.0)) - 1.5_f64.ln()).abs() < 1e-12);
        assert!((log_pdf(half, &bp(2.0, 2.0)) - 0.405_465).abs() < 1e-6);
        let z = NormalizedScore::new(0.3).unwrap();
        let zr = NormalizedScore::new(0.7).unwrap();
        assert!((log_pdf(z, &bp(3.5, 1.7)) - log_pdf(zr, &bp(1.7, 3.5))).abs() < 1e-12);
        assert!(NormalizedScore::new(0.0).is_err());
        assert!(NormalizedScore::new(1.0).is_err());
    }

    #[test]
    fn uniform_limit_has_zero_loss() {
        let p = bp(1.0 + 1e-12, 1.0 + 1e-12);
        for s in [0.01, 0.3, 0.77] {
            let s = NormalizedScore::new(s).unwrap();
            assert!(nll_loss(s, &p).abs() < 1e-9);
        }
    }

    #[test]
    fn moments_and_mode() {
        assert_eq!(mean(&bp(2.0, 2.0)), 0.5);
        assert!((mean(&bp(3.0, 1.0 + 1e-15)) - 0.75).abs() < 1e-12);
        assert!((variance(&bp(2.0, 2.0)) - 0.05).abs() < 1e-15);
        assert!(variance(&bp(101.0, 101.0)) < variance(&bp(2.0, 2.0)));
        assert_eq!(variance(&bp(2.5, 7.0)), variance(&bp(7.0, 2.5)));
        assert_eq!(mode_concentration(&bp(2.0, 2.0)), (0.5, 4.0));
        let (w, k) = mode_concentration(&bp(3.0, 2.0));
        assert!((w - 2.0 / 3.0).abs() < 1e-15 && k == 5.0);
        assert!(BetaParams::new(1.0, 2.0).is_err());
        assert!(BetaParams::new(2.0, 0.5).is_err());
    }

    #[test]
    fn nll_examples() {
        let half = NormalizedScore::new(0.5).unwrap();
        let want = 4.0 * std::f64::consts::LN_2 * 0.5 + (1.0_f64 / 6.0).ln();
        assert!((nll_loss(half, &bp(2.0, 2.0)) - want).abs() < 1e-12);
        assert!((want + 0.405_465).abs() < 1e-6);
    }

    #[test]
    fn nll_is_minimized_at_the_mode() {
        let p = bp(4.0, 2.5);
        let (omega, _) = p.mode_concentration();
        let at_mode = nll_loss(NormalizedScore::new(omega).unwrap(), &p);
        for i in 1..1000 {
            let s = NormalizedScore::new(i as f64 / 1000.0).unwrap();
            assert!(nll_loss(s, &p) >= at_mode - 1e-12);
        }
    }

    #[test]
    fn gradient_symmetry_at_half() {
        for t in [-2.0, -0.3, 0.0, 1.1, 3.0] {
            let (ga, gb) = nll_grad(NormalizedScore::new(0.5).unwrap(), RawParams::new(t, t));
            assert!((ga - gb).abs() < 1e-12 && (ga.abs() - gb.abs()).abs() < 1e-12);
        }
        let (ga, gb) = nll_grad(NormalizedScore::new(0.2).unwrap(), RawParams::new(0.4, -1.3));
        let (ha, hb) = nll_grad(NormalizedScore::new(0.8).unwrap(), RawParams::new(-1.3, 0.4));
        assert!((ga - hb).abs() < 1e-12 && (gb - ha).abs() < 1e-12);
    }

    #[test]
    fn gradient_vanishes_beyond_clamp() {
        let (ga, gb) = nll_grad(NormalizedScore::new(0.4).unwrap(), RawParams::new(40.0, -40.0));
        assert_eq!((ga, gb), (0.0, 0.0));
    }

    #[test]
    fn clamping() {
        assert_eq!(NormalizedScore::from_mushra(0.0, DEFAULT_SCORE_EPS).value(), 0.005);
        assert_eq!(NormalizedScore::from_mushra(100.0, DEFAULT_SCORE_EPS).value(), 0.995);
        assert_eq!(NormalizedScore::from_mushra(40.0, DEFAULT_SCORE_EPS).value(), 0.4);
    }

    #[test]
    fn loss_head_parses() {
        assert_eq!("beta".parse::<LossHead>().unwrap(), LossHead::Beta);
        assert_eq!("gaussian".parse::<LossHead>().unwrap(), LossHead::Gaussian);
        assert!("logistic".parse::<LossHead>().is_err());
    }
}
