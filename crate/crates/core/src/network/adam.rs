use serde::{Deserialize, Serialize};

use super::{Gradients, NetworkError, ParameterSet, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    step: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(p: &ParameterSet<T>, config: AdamConfig) -> Self {
        let zeros: Vec<Vec<T>> = p.tensors().iter().map(|t| vec![T::zero(); t.len()]).collect();
        Self { config, m: zeros.clone(), v: zeros, step: 0 }
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self) -> &[Vec<T>] {
        &self.m
    }

    pub fn second_moment(&self) -> &[Vec<T>] {
        &self.v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateOutcome {
    Applied,
    /// The gradient held non-finite entries; nothing was changed.
    Skipped { non_finite: usize },
}

/// One bias-corrected Adam step. A gradient containing NaN or infinity is
/// skipped as a whole so the moments are not poisoned.
pub fn apply_update<T: Scalar>(
    p: &mut ParameterSet<T>,
    g: &Gradients<T>,
    state: &mut AdamState<T>,
    lr: f64,
) -> Result<UpdateOutcome, NetworkError> {
    if !g.is_congruent(p) || state.m.len() != p.tensors().len() {
        return Err(NetworkError::ShapeMismatch);
    }
    let bad = g.non_finite_count();
    if bad > 0 {
        return Ok(UpdateOutcome::Skipped { non_finite: bad });
    }
    state.step += 1;
    let c = state.config;
    let t = state.step as i32;
    let corr1 = 1.0 - c.beta1.powi(t);
    let corr2 = 1.0 - c.beta2.powi(t);
    let f = |x: f64| T::from_f64(x).unwrap();
    let (b1, b2, eps) = (f(c.beta1), f(c.beta2), f(c.eps));
    let (one_b1, one_b2) = (f(1.0 - c.beta1), f(1.0 - c.beta2));
    let step_size = f(lr / corr1);
    let inv_corr2 = f(1.0 / corr2);
    for (((theta, grad), m), v) in p.tensors_mut().iter_mut().zip(g.tensors()).zip(&mut state.m).zip(&mut state.v) {
        for i in 0..theta.len() {
            m[i] = b1 * m[i] + one_b1 * grad[i];
            v[i] = b2 * v[i] + one_b2 * grad[i] * grad[i];
            let v_hat = v[i] * inv_corr2;
            theta[i] = theta[i] - step_size * m[i] / (v_hat.sqrt() + eps);
        }
    }
    Ok(UpdateOutcome::Applied)
}
