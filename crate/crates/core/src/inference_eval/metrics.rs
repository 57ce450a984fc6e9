//! Correlation and outlier statistics.

use statrs::distribution::{ContinuousCDF, StudentsT};

use super::EvalError;

fn check_pair(x: &[f64], y: &[f64]) -> Result<(), EvalError> {
    if x.len() != y.len() {
        return Err(EvalError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 3 {
        return Err(EvalError::TooFewPoints(x.len()));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(EvalError::NonFinite);
    }
    Ok(())
}

/// Sample Pearson correlation.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, EvalError> {
    check_pair(x, y)?;
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(EvalError::ZeroVariance);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// 1-based ranks with ties sharing the average of the positions they span.
pub fn fractional_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Pearson correlation of fractional ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64, EvalError> {
    check_pair(x, y)?;
    pearson(&fractional_ranks(x), &fractional_ranks(y))
}

/// Two-sided Student-t critical value `t_{(1 + level) / 2, dof}`.
pub fn t_critical(level: f64, dof: usize) -> Result<f64, EvalError> {
    if !(level > 0.0 && level < 1.0) {
        return Err(EvalError::InvalidLevel(level));
    }
    if dof == 0 {
        return Err(EvalError::TooFewListeners(1));
    }
    let t = StudentsT::new(0.0, 1.0, dof as f64).expect("positive dof");
    Ok(t.inverse_cdf((1.0 + level) / 2.0))
}

/// Half-width of the t confidence interval of the mean of `scores`.
pub fn sample_ci_halfwidth(scores: &[f64], level: f64) -> Result<f64, EvalError> {
    let n = scores.len();
    if n < 2 {
        return Err(EvalError::TooFewListeners(n));
    }
    let mean = scores.iter().sum::<f64>() / n as f64;
    let var = scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    Ok(t_critical(level, n - 1)? * var.sqrt() / (n as f64).sqrt())
}

/// Fraction of `(prediction, listener mean, listener CI half-width)` triples
/// whose prediction falls outside the listener interval.
pub fn outlier_fraction(points: &[(f64, f64, f64)]) -> Result<f64, EvalError> {
    if points.is_empty() {
        return Err(EvalError::TooFewPoints(0));
    }
    let outside = points.iter().filter(|(p, m, h)| (p - m).abs() > *h).count();
    Ok(outside as f64 / points.len() as f64)
}
