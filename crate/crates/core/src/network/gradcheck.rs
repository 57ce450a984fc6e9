//! Finite-difference verification of the full pipeline gradient
//! `d loss(map(forward(theta, x)), s) / d theta`, run in `f64`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::layers::Act;
use super::{backward, forward, NetworkConfig, NetworkError, ParameterSet, INPUT_BANDS};
use crate::gammatone::FEATURE_PLANES;
use crate::prob_beta::{LossHead, NormalizedScore, RawParams};

/// Relative errors are measured against `max(|analytic|, |numeric|, floor)`.
const REL_FLOOR: f64 = 1e-6;

/// Draws whose raw outputs leave this range are replaced: past the exp clamp
/// the loss is flat in one output and so large that differences of it lose
/// all precision.
const OUTPUT_RANGE: f64 = 10.0;

#[derive(Debug, Clone, Serialize)]
pub struct GradcheckReport {
    pub head: LossHead,
    pub draws: usize,
    pub params_per_draw: usize,
    pub checked: usize,
    /// Parameters whose perturbation flipped a ReLU or max-pool decision;
    /// the loss is not differentiable across such points.
    pub skipped_kinks: usize,
    /// Candidate draws discarded because the outputs left the resolvable range.
    pub redrawn: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
}

#[derive(Debug, Clone)]
pub struct GradcheckOptions {
    pub draws: usize,
    pub step: f64,
    pub seed: u64,
    pub head: LossHead,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self { draws: 20, step: 1e-3, seed: 0, head: LossHead::Beta }
    }
}

fn loss_at(p: &ParameterSet<f64>, x: &Act<f64>, s: NormalizedScore, head: LossHead) -> Result<(f64, Vec<u32>), NetworkError> {
    let (o, cache) = forward(p, x)?;
    let l = head.loss(s, RawParams::new(o[0], o[1])).expect("finite outputs");
    Ok((l, cache.signature()))
}

pub fn gradcheck(cfg: &NetworkConfig, opts: &GradcheckOptions) -> Result<GradcheckReport, NetworkError> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut report = GradcheckReport {
        head: opts.head,
        draws: opts.draws,
        params_per_draw: cfg.num_params(),
        checked: 0,
        skipped_kinks: 0,
        redrawn: 0,
        max_rel_error: 0.0,
        max_abs_error: 0.0,
    };
    let mut done = 0;
    while done < opts.draws {
        let draw_cfg = NetworkConfig { seed: rng.gen(), ..cfg.clone() };
        let mut p = ParameterSet::<f64>::init(&draw_cfg)?;
        let frames = rng.gen_range(1..=6);
        let data = (0..FEATURE_PLANES * frames * INPUT_BANDS).map(|_| rng.gen_range(-10.0..2.0)).collect();
        let x = Act { c: FEATURE_PLANES, h: frames, w: INPUT_BANDS, data };
        let s = NormalizedScore::new(rng.gen_range(0.02..0.98)).unwrap();

        let (o, cache) = forward(&p, &x)?;
        if o.iter().any(|v| v.abs() > OUTPUT_RANGE) {
            report.redrawn += 1;
            continue;
        }
        done += 1;
        let (_, up) = opts.head.loss_and_grad(s, RawParams::new(o[0], o[1])).expect("finite outputs");
        let analytic = backward(&p, &cache, up)?;
        let base_sig = cache.signature();

        for ti in 0..p.tensors().len() {
            for k in 0..p.tensors()[ti].len() {
                let orig = p.tensors()[ti][k];
                // fourth-order central stencil at offsets -2h, -h, h, 2h
                let mut vals = [0.0; 4];
                let mut kink = false;
                for (v, m) in vals.iter_mut().zip([-2.0, -1.0, 1.0, 2.0]) {
                    p.tensors_mut()[ti][k] = orig + m * opts.step;
                    let (l, sig) = loss_at(&p, &x, s, opts.head)?;
                    kink |= sig != base_sig;
                    *v = l;
                }
                p.tensors_mut()[ti][k] = orig;
                if kink {
                    report.skipped_kinks += 1;
                    continue;
                }
                let numeric = (vals[0] - 8.0 * vals[1] + 8.0 * vals[2] - vals[3]) / (12.0 * opts.step);
                let a = analytic.tensors()[ti][k];
                let abs = (a - numeric).abs();
                let rel = abs / a.abs().max(numeric.abs()).max(REL_FLOOR);
                report.checked += 1;
                report.max_abs_error = report.max_abs_error.max(abs);
                report.max_rel_error = report.max_rel_error.max(rel);
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gradient_matches_finite_differences() {
        for head in [LossHead::Beta, LossHead::Gaussian] {
            let opts = GradcheckOptions { draws: 20, seed: 3, head, ..Default::default() };
            let r = gradcheck(&NetworkConfig::gradcheck_toy(), &opts).unwrap();
            assert!(r.max_rel_error < 1e-3, "{r:?}");
            assert!(r.checked > r.skipped_kinks * 4, "{r:?}");
        }
    }

    #[test]
    fn broken_gradient_is_caught() {
        // perturbing the analytic side must be visible to the checker
        let cfg = NetworkConfig::gradcheck_toy();
        let p = ParameterSet::<f64>::init(&cfg).unwrap();
        let x = Act { c: 8, h: 2, w: 32, data: (0..512).map(|i| -((i % 9) as f64)).collect() };
        let (o, cache) = forward(&p, &x).unwrap();
        let g1 = backward(&p, &cache, [1.0, 0.0]).unwrap();
        let g2 = backward(&p, &cache, [1.001, 0.0]).unwrap();
        assert!(o.iter().all(|v| v.is_finite()));
        assert_ne!(g1, g2);
    }
}
