//! Score prediction with confidence intervals, and evaluation of a model
//! against listener panels.

pub mod metrics;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio_io::SignalPair;
use crate::gammatone::{FeatureError, Filterbank, GammatoneConfig};
use crate::network::{load_checkpoint, CheckpointMetadata, NetworkError, ParameterSet, ScorePredictor};
use crate::prob_beta::{map_params, BetaError, BetaParams, LossHead, NormalizedScore, RawParams};
use crate::trainer::{FeatureStore, ManifestEntry, TrainError};

pub use metrics::{fractional_ranks, outlier_fraction, pearson, sample_ci_halfwidth, spearman, t_critical};

/// Listener count assumed for model intervals when none is known.
pub const DEFAULT_LISTENERS: usize = 12;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least 3 points, got {0}")]
    TooFewPoints(usize),
    #[error("correlation undefined: zero variance")]
    ZeroVariance,
    #[error("non-finite value in metric input")]
    NonFinite,
    #[error("confidence level {0} outside (0, 1)")]
    InvalidLevel(f64),
    #[error("need at least 2 listeners, got {0}")]
    TooFewListeners(usize),
    #[error(transparent)]
    Beta(#[from] BetaError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Pipeline(#[from] Box<TrainError>),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub mushra: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub ci_level: f64,
    pub n_listeners: usize,
    pub head: LossHead,
    /// Present for the Beta head.
    pub beta_params: Option<BetaParams>,
    /// Mean and standard deviation of the predicted score distribution on
    /// the normalized scale.
    pub mean: f64,
    pub std_dev: f64,
}

/// Symmetric interval half-width in MUSHRA points:
/// `t_{(1 + level) / 2, n - 1} * 100 sd / sqrt(n)`.
fn half_width(sd: f64, n_listeners: usize, level: f64) -> Result<f64, EvalError> {
    if n_listeners < 2 {
        return Err(EvalError::TooFewListeners(n_listeners));
    }
    Ok(t_critical(level, n_listeners - 1)? * 100.0 * sd / (n_listeners as f64).sqrt())
}

pub fn ci_half_width(p: &BetaParams, n_listeners: usize, level: f64) -> Result<f64, EvalError> {
    half_width(p.variance().sqrt(), n_listeners, level)
}

/// Interval around `100 * mean(p)`, clipped to `[0, 100]` after construction.
pub fn confidence_interval(p: &BetaParams, n_listeners: usize, level: f64) -> Result<(f64, f64), EvalError> {
    let h = ci_half_width(p, n_listeners, level)?;
    let c = 100.0 * p.mean();
    Ok(((c - h).max(0.0), (c + h).min(100.0)))
}

pub fn prediction_from_raw(raw: RawParams, head: LossHead, n_listeners: usize, level: f64) -> Result<Prediction, EvalError> {
    match head {
        LossHead::Beta => {
            let p = map_params(raw)?;
            let mushra = 100.0 * p.alpha() / (p.alpha() + p.beta());
            let (ci_low, ci_high) = confidence_interval(&p, n_listeners, level)?;
            Ok(Prediction {
                mushra,
                ci_low,
                ci_high,
                ci_level: level,
                n_listeners,
                head,
                beta_params: Some(p),
                mean: p.mean(),
                std_dev: p.variance().sqrt(),
            })
        }
        LossHead::Gaussian => {
            if !raw.alpha_tilde.is_finite() || !raw.beta_tilde.is_finite() {
                return Err(EvalError::NonFinite);
            }
            let mean = raw.alpha_tilde;
            let sd = raw.beta_tilde.exp();
            // the Gaussian mean is unbounded; report it on the rating scale
            let mushra = (100.0 * mean).clamp(0.0, 100.0);
            let h = half_width(sd, n_listeners, level)?;
            Ok(Prediction {
                mushra,
                ci_low: (mushra - h).max(0.0),
                ci_high: (mushra + h).min(100.0),
                ci_level: level,
                n_listeners,
                head,
                beta_params: None,
                mean,
                std_dev: sd,
            })
        }
    }
}

/// A trained network together with its checkpoint metadata.
pub struct Model {
    pub params: ParameterSet<f32>,
    pub meta: CheckpointMetadata,
}

impl Model {
    pub fn load(path: &Path) -> Result<Self, NetworkError> {
        let (params, _, meta) = load_checkpoint(path)?;
        Ok(Self { params, meta })
    }
}

impl ScorePredictor for Model {
    fn predict_raw(&self, f: &crate::gammatone::GammatoneSpectrogram) -> Result<RawParams, NetworkError> {
        self.params.predict_raw(f)
    }

    fn head(&self) -> LossHead {
        self.meta.loss_head
    }
}

pub fn predict(
    model: &dyn ScorePredictor,
    pair: &SignalPair,
    gammatone: &GammatoneConfig,
    n_listeners: usize,
    level: f64,
) -> Result<Prediction, EvalError> {
    let features = Filterbank::new(gammatone)?.build_features(pair)?;
    let raw = model.predict_raw(&features)?;
    prediction_from_raw(raw, model.head(), n_listeners, level)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub item_id: String,
    pub condition_id: String,
    pub prediction: Prediction,
    pub subjective_scores: Vec<f64>,
    pub subjective_mean: f64,
    pub subjective_ci_halfwidth: f64,
}

impl EvalRecord {
    pub fn new(item_id: String, condition_id: String, prediction: Prediction, scores: Vec<f64>, level: f64) -> Result<Self, EvalError> {
        let h = sample_ci_halfwidth(&scores, level)?;
        let mean = scores.iter().sum::<f64>() / scores.len() as f64;
        Ok(Self { item_id, condition_id, prediction, subjective_scores: scores, subjective_mean: mean, subjective_ci_halfwidth: h })
    }
}

/// Fraction of records whose prediction lies outside the listener-mean
/// confidence interval.
pub fn outlier_ratio(records: &[EvalRecord]) -> Result<f64, EvalError> {
    let pts: Vec<(f64, f64, f64)> =
        records.iter().map(|r| (r.prediction.mushra, r.subjective_mean, r.subjective_ci_halfwidth)).collect();
    outlier_fraction(&pts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthMetrics {
    pub rp: f64,
    pub rs: f64,
    pub mae: f64,
    pub n_points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub rp: f64,
    pub rs: f64,
    pub outlier_ratio: f64,
    pub n_points: usize,
    pub loss_head: LossHead,
    /// Mean per-listener likelihood loss of the active head on clamped scores.
    pub mean_nll: f64,
    /// Against known generating means, when available.
    pub ground_truth: Option<GroundTruthMetrics>,
    /// Against known generating modes (`100 omega`), when available.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth_mode: Option<GroundTruthMetrics>,
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub level: f64,
    /// Listener count for model intervals; `None` uses each group's panel size.
    pub n_listeners: Option<usize>,
    pub score_eps: f64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self { level: 0.95, n_listeners: None, score_eps: crate::prob_beta::DEFAULT_SCORE_EPS }
    }
}

pub struct EvalOutput {
    pub summary: MetricsSummary,
    pub records: Vec<EvalRecord>,
}

/// Per (item, condition) predictions against listener means.
pub fn evaluate(
    model: &dyn ScorePredictor,
    entries: &[ManifestEntry],
    store: &FeatureStore,
    opts: &EvalOptions,
) -> Result<EvalOutput, EvalError> {
    let mut groups: BTreeMap<(String, String), Vec<&ManifestEntry>> = BTreeMap::new();
    for e in entries {
        groups.entry(e.group_key()).or_default().push(e);
    }
    if groups.len() < 3 {
        return Err(EvalError::TooFewPoints(groups.len()));
    }
    let keyed: Vec<_> = groups.into_iter().collect();
    let head = model.head();
    let per_group: Vec<(EvalRecord, f64)> = keyed
        .par_iter()
        .map(|((item, cond), rows)| {
            let f = store.get(&rows[0].ref_path, &rows[0].test_path).map_err(Box::new)?;
            let raw = model.predict_raw(&f)?;
            let n = opts.n_listeners.unwrap_or(if rows.len() >= 2 { rows.len() } else { DEFAULT_LISTENERS });
            let pred = prediction_from_raw(raw, head, n, opts.level)?;
            let mut nll = 0.0;
            for r in rows {
                nll += head.loss(NormalizedScore::from_mushra(r.listener_score, opts.score_eps), raw)?;
            }
            let scores = rows.iter().map(|r| r.listener_score).collect();
            Ok((EvalRecord::new(item.clone(), cond.clone(), pred, scores, opts.level)?, nll))
        })
        .collect::<Result<_, EvalError>>()?;
    let n_rows: usize = per_group.iter().map(|(r, _)| r.subjective_scores.len()).sum();
    let mean_nll = per_group.iter().map(|(_, l)| l).sum::<f64>() / n_rows as f64;
    let records: Vec<EvalRecord> = per_group.into_iter().map(|(r, _)| r).collect();
    let pred: Vec<f64> = records.iter().map(|r| r.prediction.mushra).collect();
    let truth: Vec<f64> = records.iter().map(|r| r.subjective_mean).collect();
    let summary = MetricsSummary {
        rp: pearson(&pred, &truth)?,
        rs: spearman(&pred, &truth)?,
        outlier_ratio: outlier_ratio(&records)?,
        n_points: records.len(),
        loss_head: head,
        mean_nll,
        ground_truth: None,
        ground_truth_mode: None,
    };
    Ok(EvalOutput { summary, records })
}

/// Compare predictions with known generating means keyed by (item, condition).
pub fn ground_truth_metrics(
    records: &[EvalRecord],
    truth: &BTreeMap<(String, String), f64>,
) -> Result<GroundTruthMetrics, EvalError> {
    let (mut p, mut t) = (Vec::new(), Vec::new());
    for r in records {
        if let Some(&m) = truth.get(&(r.item_id.clone(), r.condition_id.clone())) {
            p.push(r.prediction.mushra);
            t.push(m);
        }
    }
    let mae = p.iter().zip(&t).map(|(a, b)| (a - b).abs()).sum::<f64>() / p.len().max(1) as f64;
    Ok(GroundTruthMetrics { rp: pearson(&p, &t)?, rs: spearman(&p, &t)?, mae, n_points: p.len() })
}

/// Write `metrics.json`, `scatter.csv` and a gnuplot script `scatter.gp`.
pub fn write_outputs(dir: &Path, out: &EvalOutput) -> Result<Vec<PathBuf>, EvalError> {
    std::fs::create_dir_all(dir)?;
    let metrics = dir.join("metrics.json");
    std::fs::write(&metrics, serde_json::to_vec_pretty(&out.summary).expect("metrics serialize"))?;
    let scatter = dir.join("scatter.csv");
    let mut f = std::io::BufWriter::new(std::fs::File::create(&scatter)?);
    writeln!(f, "group_id,item_id,condition_id,ground_truth,prediction,ci_low,ci_high")?;
    for r in &out.records {
        writeln!(
            f,
            "{}/{},{},{},{},{},{},{}",
            r.item_id,
            r.condition_id,
            r.item_id,
            r.condition_id,
            r.subjective_mean,
            r.prediction.mushra,
            r.prediction.ci_low,
            r.prediction.ci_high
        )?;
    }
    f.flush()?;
    let gp = dir.join("scatter.gp");
    std::fs::write(
        &gp,
        "set datafile separator ','\n\
         set key off\n\
         set xrange [0:100]\nset yrange [0:100]\n\
         set xlabel 'listener mean (MUSHRA)'\nset ylabel 'predicted (MUSHRA)'\n\
         set terminal pngcairo size 600,600\nset output 'scatter.png'\n\
         plot 'scatter.csv' every ::1 using 4:5:6:7 with yerrorbars pt 7, x with lines dt 2\n",
    )?;
    Ok(vec![metrics, scatter, gp])
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Beta as BetaDist, Distribution};

    #[test]
    fn ci_example() {
        let p = BetaParams::new(2.0, 2.0).unwrap();
        let (lo, hi) = confidence_interval(&p, 12, 0.95).unwrap();
        let h = 2.200_985 * 100.0 * 0.05f64.sqrt() / 12f64.sqrt();
        assert!((lo - (50.0 - h)).abs() < 1e-4 && (hi - (50.0 + h)).abs() < 1e-4);
        assert!((lo - 35.79).abs() < 0.01 && (hi - 64.21).abs() < 0.01);
        assert!(confidence_interval(&p, 1, 0.95).is_err());
    }

    #[test]
    fn ci_shrinks_with_more_listeners() {
        let p = BetaParams::new(3.5, 2.25).unwrap();
        let mut prev = f64::INFINITY;
        for n in 2..60 {
            let h = ci_half_width(&p, n, 0.9).unwrap();
            assert!(h < prev);
            prev = h;
        }
    }

    #[test]
    fn eq6_examples() {
        let sym = prediction_from_raw(RawParams::new(0.7, 0.7), LossHead::Beta, 12, 0.95).unwrap();
        assert!((sym.mushra - 50.0).abs() < 1e-12);
        // alpha = 1 + 2 = 3 and beta = 1 + exp(-30), the closest the head gets to (3, 1)
        let p = prediction_from_raw(RawParams::new(2f64.ln(), -30.0), LossHead::Beta, 12, 0.95).unwrap();
        assert!((p.mushra - 75.0).abs() < 1e-9);
    }

    #[test]
    fn gaussian_prediction_stays_on_scale() {
        let p = prediction_from_raw(RawParams::new(1.3, -2.0), LossHead::Gaussian, 10, 0.95).unwrap();
        assert_eq!(p.mushra, 100.0);
        assert!(p.ci_low <= p.mushra && p.mushra <= p.ci_high);
        assert!(p.beta_params.is_none());
    }

    #[test]
    fn interval_matches_simulated_panels() {
        // median half-width of per-panel t intervals from Beta(4, 3) panels
        let (a, b, n) = (4.0, 3.0, 12);
        let dist = BetaDist::new(a, b).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut hws: Vec<f64> = (0..1000)
            .map(|_| {
                let panel: Vec<f64> = (0..n).map(|_| 100.0 * dist.sample(&mut rng)).collect();
                sample_ci_halfwidth(&panel, 0.95).unwrap()
            })
            .collect();
        hws.sort_by(f64::total_cmp);
        let median = 0.5 * (hws[499] + hws[500]);
        let model = ci_half_width(&BetaParams::new(a, b).unwrap(), n, 0.95).unwrap();
        assert!((model - median).abs() <= 0.1 * median, "{model} vs {median}");
    }

    fn record(pred: f64, scores: Vec<f64>) -> EvalRecord {
        let p = Prediction {
            mushra: pred,
            ci_low: pred,
            ci_high: pred,
            ci_level: 0.95,
            n_listeners: 12,
            head: LossHead::Beta,
            beta_params: None,
            mean: pred / 100.0,
            std_dev: 0.0,
        };
        EvalRecord::new("i".into(), "c".into(), p, scores, 0.95).unwrap()
    }

    #[test]
    fn outlier_ratio_examples() {
        let recs: Vec<_> = (0..4).map(|i| record(20.0 * i as f64 + 11.0, vec![20.0 * i as f64 + 10.0, 20.0 * i as f64 + 12.0])).collect();
        assert_eq!(outlier_ratio(&recs).unwrap(), 0.0);
        let far: Vec<_> = (0..4).map(|i| record(-89.0 + 20.0 * i as f64, vec![10.0 + 20.0 * i as f64, 12.0 + 20.0 * i as f64])).collect();
        assert_eq!(outlier_ratio(&far).unwrap(), 1.0);
        let mut mixed = recs.clone();
        mixed[2] = far[2].clone();
        assert_eq!(outlier_ratio(&mixed).unwrap(), 0.25);
        assert!(outlier_ratio(&[]).is_err());
        assert!(EvalRecord::new("i".into(), "c".into(), recs[0].prediction.clone(), vec![3.0], 0.95).is_err());
    }

    proptest! {
        #[test]
        fn prediction_invariants(a in -40.0f64..40.0, b in -40.0f64..40.0, n in 2usize..40) {
            let p = prediction_from_raw(RawParams::new(a, b), LossHead::Beta, n, 0.95).unwrap();
            prop_assert!(p.mushra > 0.0 && p.mushra < 100.0);
            prop_assert!(p.ci_low <= p.mushra && p.mushra <= p.ci_high);
            let bp = p.beta_params.unwrap();
            prop_assert!((p.mushra - 100.0 * bp.mean()).abs() < 1e-9);
            let h = ci_half_width(&bp, n, 0.95).unwrap();
            let c = 100.0 * bp.mean();
            // symmetric unless clipped
            if c - h > 0.0 && c + h < 100.0 {
                prop_assert!(((p.ci_high - c) - (c - p.ci_low)).abs() < 1e-9);
                prop_assert!((p.ci_high - c - h).abs() < 1e-9);
            }
        }
    }
}
