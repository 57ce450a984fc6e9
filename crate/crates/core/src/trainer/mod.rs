//! Training loop: uniform sampling of listener rows, random frame crops,
//! batched Adam on the per-listener likelihood, periodic validation and
//! best-checkpoint selection by `Rp * Rs`.

pub mod cache;
pub mod manifest;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio_io::AudioError;
use crate::gammatone::{FeatureError, GammatoneConfig, GammatoneSpectrogram};
use crate::inference_eval::{metrics, prediction_from_raw, EvalError};
use crate::network::layers::Act;
use crate::network::{
    apply_update, backward, forward, save_checkpoint, AdamConfig, AdamState, CheckpointMetadata, Gradients,
    NetworkConfig, NetworkError, ParameterSet, UpdateOutcome,
};
use crate::prob_beta::{BetaError, LossHead, NormalizedScore, RawParams, DEFAULT_SCORE_EPS};

pub use cache::{default_cache_dir, FeatureStore};
pub use manifest::{load_manifest, make_split, parse_manifest, write_manifest, ManifestEntry, Split};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("{path}:{line}: {message}")]
    Manifest { path: PathBuf, line: usize, message: String },
    #[error("split: {0}")]
    Split(String),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("feature cache: {0}")]
    Cache(String),
    #[error("non-finite loss {loss} at step {step} ({detail})")]
    NonFinite { step: usize, loss: f64, detail: String },
    #[error("validation: {0}")]
    Validation(String),
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Beta(#[from] BetaError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub max_steps: usize,
    pub valid_every: usize,
    pub seed: u64,
    pub loss_head: LossHead,
    /// Length of the random training excerpt.
    pub crop_seconds: f64,
    pub train_frac: f64,
    pub score_eps: f64,
    /// Progress lines on stderr every this many steps; 0 is silent.
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 8,
            learning_rate: 1e-4,
            max_steps: 20_000,
            valid_every: 500,
            seed: 0,
            loss_head: LossHead::Beta,
            crop_seconds: 3.0,
            train_frac: 0.9,
            score_eps: DEFAULT_SCORE_EPS,
            log_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.to_string()));
        if self.batch_size == 0 || self.max_steps == 0 || self.valid_every == 0 {
            return bad("batch_size, max_steps and valid_every must be positive");
        }
        if self.valid_every > self.max_steps {
            return bad("valid_every must not exceed max_steps");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(self.crop_seconds > 0.0) {
            return bad("crop_seconds must be positive");
        }
        if !(self.train_frac > 0.0 && self.train_frac < 1.0) {
            return bad("train_frac must lie in (0, 1)");
        }
        if !(self.score_eps > 0.0 && self.score_eps < 0.5) {
            return bad("score_eps must lie in (0, 0.5)");
        }
        Ok(())
    }

    pub fn crop_frames(&self, g: &GammatoneConfig) -> usize {
        g.frame_count((self.crop_seconds * g.sample_rate as f64).round() as usize).max(1)
    }
}

/// Listener rows pointing into a shared feature table.
pub struct TrainingSet {
    pub features: Vec<GammatoneSpectrogram>,
    pub rows: Vec<(usize, NormalizedScore)>,
}

#[derive(Debug, Clone)]
pub struct ValidGroup {
    pub item_id: String,
    pub condition_id: String,
    pub feature: usize,
    pub mean_score: f64,
}

pub struct ValidationSet {
    pub features: Vec<GammatoneSpectrogram>,
    pub groups: Vec<ValidGroup>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationPoint {
    pub step: usize,
    pub rp: Option<f64>,
    pub rs: Option<f64>,
    pub product: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    #[serde(skip)]
    pub loss_trace: Vec<f64>,
    pub steps: usize,
    pub num_params: usize,
    pub loss_head: LossHead,
    pub final_loss: f64,
    pub validations: Vec<ValidationPoint>,
    pub best_step: Option<usize>,
    pub best_checkpoint_path: Option<PathBuf>,
    pub last_checkpoint_path: Option<PathBuf>,
    pub skipped_updates: usize,
    pub train_items: Vec<String>,
    pub valid_items: Vec<String>,
}

pub struct TrainOutcome {
    pub report: TrainReport,
    pub best: ParameterSet<f32>,
    pub last: ParameterSet<f32>,
}

/// Frames `start..start + len` of a feature stack as network input.
pub fn crop_input(f: &GammatoneSpectrogram, start: usize, len: usize) -> Act<f32> {
    let len = len.min(f.frames - start);
    let mut data = Vec::with_capacity(f.planes * len * f.bands);
    for p in 0..f.planes {
        let plane = f.plane(p);
        data.extend_from_slice(&plane[start * f.bands..(start + len) * f.bands]);
    }
    Act { c: f.planes, h: len, w: f.bands, data }
}

fn sample_loss_grad(
    p: &ParameterSet<f32>,
    x: &Act<f32>,
    s: NormalizedScore,
    head: LossHead,
) -> Result<(f64, Gradients<f32>), TrainError> {
    let (o, cache) = forward(p, x)?;
    let raw = RawParams::new(o[0] as f64, o[1] as f64);
    let (loss, up) = head.loss_and_grad(s, raw)?;
    let g = backward(p, &cache, [up[0] as f32, up[1] as f32])?;
    Ok((loss, g))
}

/// Predicted MUSHRA points for every validation group.
pub fn predict_groups(p: &ParameterSet<f32>, head: LossHead, v: &ValidationSet) -> Result<Vec<f64>, TrainError> {
    v.groups
        .par_iter()
        .map(|g| {
            let f = &v.features[g.feature];
            let (o, _) = forward(p, &crop_input(f, 0, f.frames))?;
            let pred = prediction_from_raw(RawParams::new(o[0] as f64, o[1] as f64), head, 12, 0.95)?;
            Ok(pred.mushra)
        })
        .collect()
}

/// Pearson and Spearman correlation of group predictions with listener means.
pub fn validate(p: &ParameterSet<f32>, head: LossHead, v: &ValidationSet) -> Result<(f64, f64), TrainError> {
    if v.groups.len() < 3 {
        return Err(TrainError::Validation(format!("need at least 3 (item, condition) groups, got {}", v.groups.len())));
    }
    let pred = predict_groups(p, head, v)?;
    let truth: Vec<f64> = v.groups.iter().map(|g| g.mean_score).collect();
    Ok((metrics::pearson(&pred, &truth)?, metrics::spearman(&pred, &truth)?))
}

/// Optimise `params` in place. Checkpoints go to `out_dir` when given.
pub fn fit(
    mut params: ParameterSet<f32>,
    data: &TrainingSet,
    valid: Option<&ValidationSet>,
    cfg: &TrainConfig,
    gammatone: &GammatoneConfig,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if data.rows.is_empty() {
        return Err(TrainError::Split("training set is empty".into()));
    }
    let crop = cfg.crop_frames(gammatone);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = AdamState::new(&params, AdamConfig::default());
    let meta = |step: usize, rp: Option<f64>, rs: Option<f64>| CheckpointMetadata {
        step: step as u64,
        valid_rp: rp,
        valid_rs: rs,
        loss_head: cfg.loss_head,
        gammatone: gammatone.clone(),
        score_eps: cfg.score_eps,
    };
    let best_path = out_dir.map(|d| d.join("best.gml2"));
    let last_path = out_dir.map(|d| d.join("last.gml2"));
    let mut report = TrainReport {
        loss_trace: Vec::with_capacity(cfg.max_steps),
        steps: cfg.max_steps,
        num_params: params.num_params(),
        loss_head: cfg.loss_head,
        final_loss: f64::NAN,
        validations: Vec::new(),
        best_step: None,
        best_checkpoint_path: None,
        last_checkpoint_path: last_path.clone(),
        skipped_updates: 0,
        train_items: Vec::new(),
        valid_items: Vec::new(),
    };
    let mut best = params.clone();
    let mut best_product = f64::NEG_INFINITY;
    let inv_batch = 1.0 / cfg.batch_size as f32;

    for step in 1..=cfg.max_steps {
        // all randomness is drawn up front, in order, so the parallel part
        // cannot perturb it
        let batch: Vec<(usize, usize)> = (0..cfg.batch_size)
            .map(|_| {
                let row = rng.gen_range(0..data.rows.len());
                let frames = data.features[data.rows[row].0].frames;
                let start = if frames > crop { rng.gen_range(0..=frames - crop) } else { 0 };
                (row, start)
            })
            .collect();
        let results: Vec<(f64, Gradients<f32>)> = batch
            .par_iter()
            .map(|&(row, start)| {
                let (fi, s) = data.rows[row];
                sample_loss_grad(&params, &crop_input(&data.features[fi], start, crop), s, cfg.loss_head)
            })
            .collect::<Result<_, _>>()?;
        let mut grad = Gradients::zeros_like(&params);
        let mut loss = 0.0;
        for (l, g) in &results {
            loss += l;
            grad.add_assign(g);
        }
        loss /= cfg.batch_size as f64;
        if !loss.is_finite() {
            let bad: Vec<String> = results
                .iter()
                .zip(&batch)
                .filter(|((l, _), _)| !l.is_finite())
                .map(|((l, _), (row, start))| format!("row {row} crop {start}: {l}"))
                .collect();
            return Err(TrainError::NonFinite { step, loss, detail: bad.join("; ") });
        }
        grad.scale(inv_batch);
        if let UpdateOutcome::Skipped { .. } = apply_update(&mut params, &grad, &mut adam, cfg.learning_rate)? {
            report.skipped_updates += 1;
        }
        report.loss_trace.push(loss);
        if cfg.log_every > 0 && step % cfg.log_every == 0 {
            eprintln!("step {step} loss {loss:.4}");
        }

        if let Some(v) = valid {
            if step % cfg.valid_every == 0 || step == cfg.max_steps {
                let point = match validate(&params, cfg.loss_head, v) {
                    Ok((rp, rs)) => ValidationPoint { step, rp: Some(rp), rs: Some(rs), product: Some(rp * rs) },
                    Err(TrainError::Eval(_)) => ValidationPoint { step, rp: None, rs: None, product: None },
                    Err(e) => return Err(e),
                };
                if cfg.log_every > 0 {
                    eprintln!("step {step} validation rp {:?} rs {:?}", point.rp, point.rs);
                }
                if let Some(prod) = point.product {
                    if prod > best_product {
                        best_product = prod;
                        best = params.clone();
                        report.best_step = Some(step);
                        if let Some(path) = &best_path {
                            save_checkpoint(&params, &meta(step, point.rp, point.rs), path)?;
                            report.best_checkpoint_path = Some(path.clone());
                        }
                    }
                }
                report.validations.push(point);
            }
        }
    }
    report.final_loss = *report.loss_trace.last().unwrap();
    let last_val = report.validations.last().cloned();
    if let Some(path) = &last_path {
        save_checkpoint(
            &params,
            &meta(cfg.max_steps, last_val.as_ref().and_then(|v| v.rp), last_val.as_ref().and_then(|v| v.rs)),
            path,
        )?;
    }
    if report.best_step.is_none() {
        best = params.clone();
        report.best_checkpoint_path = last_path;
    }
    Ok(TrainOutcome { report, best, last: params })
}

fn pair_table(
    entries: &[ManifestEntry],
    store: &FeatureStore,
) -> Result<(Vec<GammatoneSpectrogram>, BTreeMap<(PathBuf, PathBuf), usize>), TrainError> {
    let mut index = BTreeMap::new();
    let mut pairs = Vec::new();
    for e in entries {
        let key = (e.ref_path.clone(), e.test_path.clone());
        if !index.contains_key(&key) {
            index.insert(key.clone(), pairs.len());
            pairs.push(key);
        }
    }
    Ok((store.get_many(&pairs)?, index))
}

pub fn training_set(entries: &[ManifestEntry], store: &FeatureStore, eps: f64) -> Result<TrainingSet, TrainError> {
    let (features, index) = pair_table(entries, store)?;
    let rows = entries
        .iter()
        .map(|e| (index[&(e.ref_path.clone(), e.test_path.clone())], NormalizedScore::from_mushra(e.listener_score, eps)))
        .collect();
    Ok(TrainingSet { features, rows })
}

/// Group rows by (item, condition) with the mean listener score as target.
pub fn validation_set(entries: &[ManifestEntry], store: &FeatureStore) -> Result<ValidationSet, TrainError> {
    let (features, index) = pair_table(entries, store)?;
    let mut groups: BTreeMap<(String, String), (usize, f64, usize)> = BTreeMap::new();
    for e in entries {
        let fi = index[&(e.ref_path.clone(), e.test_path.clone())];
        let g = groups.entry(e.group_key()).or_insert((fi, 0.0, 0));
        g.1 += e.listener_score;
        g.2 += 1;
    }
    let groups = groups
        .into_iter()
        .map(|((item_id, condition_id), (feature, sum, n))| ValidGroup {
            item_id,
            condition_id,
            feature,
            mean_score: sum / n as f64,
        })
        .collect();
    Ok(ValidationSet { features, groups })
}

/// Full pipeline from manifest rows: split, feature extraction, fitting and
/// output files (`best.gml2`, `last.gml2`, `loss.csv`, `report.json`).
pub fn train(
    entries: &[ManifestEntry],
    cfg: &TrainConfig,
    net: &NetworkConfig,
    store: &FeatureStore,
    out_dir: &Path,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    let usable: Vec<ManifestEntry> = entries.iter().filter(|e| e.split != Split::Test).cloned().collect();
    let explicit_valid: Vec<ManifestEntry> = usable.iter().filter(|e| e.split == Split::Valid).cloned().collect();
    let (train_rows, valid_rows) = if explicit_valid.is_empty() {
        make_split(&usable, cfg.train_frac, cfg.seed)?
    } else {
        (usable.iter().filter(|e| e.split == Split::Train).cloned().collect(), explicit_valid)
    };
    let items = |v: &[ManifestEntry]| {
        v.iter().map(|e| e.item_id.clone()).collect::<std::collections::BTreeSet<_>>().into_iter().collect::<Vec<_>>()
    };
    let (train_items, valid_items) = (items(&train_rows), items(&valid_rows));
    if train_items.iter().any(|i| valid_items.contains(i)) {
        return Err(TrainError::Split("an item appears in both training and validation".into()));
    }
    if train_rows.is_empty() || valid_rows.is_empty() {
        return Err(TrainError::Split("training and validation splits must both be nonempty".into()));
    }
    std::fs::create_dir_all(out_dir)?;
    let data = training_set(&train_rows, store, cfg.score_eps)?;
    let valid = validation_set(&valid_rows, store)?;
    if valid.groups.len() < 3 {
        return Err(TrainError::Validation(format!(
            "need at least 3 (item, condition) groups, got {}",
            valid.groups.len()
        )));
    }
    let params = ParameterSet::<f32>::init(net)?;
    let mut outcome = fit(params, &data, Some(&valid), cfg, store.config(), Some(out_dir))?;
    outcome.report.train_items = train_items;
    outcome.report.valid_items = valid_items;
    write_loss_csv(&out_dir.join("loss.csv"), &outcome.report.loss_trace)?;
    std::fs::write(out_dir.join("report.json"), serde_json::to_vec_pretty(&outcome.report).expect("report serializes"))?;
    Ok(outcome)
}

pub fn write_loss_csv(path: &Path, trace: &[f64]) -> std::io::Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "step,loss")?;
    for (i, l) in trace.iter().enumerate() {
        writeln!(f, "{},{}", i + 1, l)?;
    }
    f.flush()
}
