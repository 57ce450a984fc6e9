//! Synthetic datasets with known ground truth: parametric degradations of
//! generated source signals and listener panels drawn from known Beta
//! distributions.

pub mod dsp;
pub mod signals;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio_io::{write_wav, AudioError, WavEncoding, Waveform};
use crate::prob_beta::{BetaError, BetaParams};
use crate::trainer::{write_manifest, ManifestEntry, Split};

pub use signals::{generate, SourceKind, SOURCE_RMS};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthesis setting: {0}")]
    Invalid(String),
    #[error("need at least 4 source items, got {0}")]
    TooFewItems(usize),
    #[error(transparent)]
    Beta(#[from] BetaError),
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> SynthError {
    SynthError::Io { path: path.to_path_buf(), message: e.to_string() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DegradationKind {
    AdditiveNoise,
    Lowpass,
    BitCrush,
    BandDropout,
}

impl DegradationKind {
    pub const ALL: [DegradationKind; 4] = [Self::AdditiveNoise, Self::Lowpass, Self::BitCrush, Self::BandDropout];

    pub fn name(&self) -> &'static str {
        match self {
            Self::AdditiveNoise => "additive_noise",
            Self::Lowpass => "lowpass",
            Self::BitCrush => "bit_crush",
            Self::BandDropout => "band_dropout",
        }
    }
}

impl std::str::FromStr for DegradationKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown degradation '{s}'"))
    }
}

/// A degradation of strength `d` in [0, 1]; `d = 0` is transparent.
/// Out-of-range strengths are clamped.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DegradationSpec {
    pub kind: DegradationKind,
    pub strength: f64,
    pub seed: u64,
}

impl DegradationSpec {
    pub fn new(kind: DegradationKind, strength: f64, seed: u64) -> Self {
        Self { kind, strength, seed }
    }

    fn d(&self) -> f64 {
        if self.strength.is_nan() {
            0.0
        } else {
            self.strength.clamp(0.0, 1.0)
        }
    }

    pub fn snr_db(&self) -> f64 {
        60.0 * (1.0 - self.d())
    }

    /// 20 kHz at `d = 0` down to 1 kHz at `d = 1`, log-spaced.
    pub fn cutoff_hz(&self) -> f64 {
        20_000.0 * 0.05f64.powf(self.d())
    }

    pub fn bits(&self) -> u32 {
        (16.0 - 14.0 * self.d()).round() as u32
    }

    /// Width of the dropped region in octaves.
    pub fn dropout_octaves(&self) -> f64 {
        6.0 * self.d()
    }
}

fn to_f64(x: &[f32]) -> Vec<f64> {
    x.iter().map(|&v| v as f64).collect()
}

fn to_f32_clipped(x: &[f64]) -> Vec<f32> {
    x.iter().map(|&v| v.clamp(-1.0, 1.0) as f32).collect()
}

/// Apply one degradation. Deterministic given `spec.seed`; the result is
/// hard-clipped to [-1, 1].
pub fn degrade(w: &Waveform, spec: &DegradationSpec) -> Waveform {
    let d = spec.d();
    if d == 0.0 {
        return w.clone();
    }
    let rate = w.sample_rate() as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let planes: Vec<Vec<f32>> = match spec.kind {
        DegradationKind::AdditiveNoise => {
            let noise: Vec<Vec<f64>> =
                w.planes().iter().map(|c| c.iter().map(|_| StandardNormal.sample(&mut rng)).collect()).collect();
            let noise_power = noise.iter().flatten().map(|v| v * v).sum::<f64>();
            let target = w.rms().powi(2) * (w.len() * w.channels()) as f64 / 10f64.powf(spec.snr_db() / 10.0);
            let g = if noise_power > 0.0 { (target / noise_power).sqrt() } else { 0.0 };
            w.planes()
                .iter()
                .zip(&noise)
                .map(|(c, n)| to_f32_clipped(&c.iter().zip(n).map(|(&x, v)| x as f64 + g * v).collect::<Vec<_>>()))
                .collect()
        }
        DegradationKind::Lowpass => {
            let sections = dsp::butterworth8(spec.cutoff_hz().min(0.45 * rate), rate);
            w.planes()
                .iter()
                .map(|c| {
                    let mut x = to_f64(c);
                    sections.iter().for_each(|s| s.process(&mut x));
                    to_f32_clipped(&x)
                })
                .collect()
        }
        DegradationKind::BitCrush => {
            let q = 2f64.powi(spec.bits() as i32 - 1);
            let top = (q - 1.0) / q;
            w.planes()
                .iter()
                .map(|c| c.iter().map(|&x| ((x as f64 * q).round() / q).clamp(-1.0, top) as f32).collect())
                .collect()
        }
        DegradationKind::BandDropout => {
            // the centre depends only on the seed, so regions nest as d grows
            let centre = (rng.gen_range(200f64.ln()..8000f64.ln())).exp();
            let half = spec.dropout_octaves() / 2.0;
            let lo = (centre * 2f64.powf(-half)).max(20.0);
            let hi = (centre * 2f64.powf(half)).min(rate / 2.0);
            w.planes()
                .iter()
                .map(|c| dsp::band_stop(c, lo, hi, rate).into_iter().map(|v| v.clamp(-1.0, 1.0)).collect())
                .collect()
        }
    };
    Waveform::new(planes, w.sample_rate()).expect("degraded planes keep layout and range")
}

/// Listener panel generator: scores are Beta draws with mode `omega(d)` and
/// concentration `kappa`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ListenerModel {
    pub kappa: f64,
    pub n_listeners: usize,
}

impl Default for ListenerModel {
    fn default() -> Self {
        Self { kappa: 20.0, n_listeners: 10 }
    }
}

impl ListenerModel {
    /// `0.95 (1 - d) + 0.05 d`
    pub fn mode(d: f64) -> f64 {
        0.95 * (1.0 - d) + 0.05 * d
    }

    pub fn params(&self, d: f64) -> Result<BetaParams, BetaError> {
        BetaParams::from_mode_concentration(Self::mode(d.clamp(0.0, 1.0)), self.kappa)
    }
}

/// MUSHRA scores (0..100) of one synthetic panel.
pub fn sample_listeners(d: f64, lm: &ListenerModel, seed: u64) -> Result<Vec<f64>, SynthError> {
    let p = lm.params(d)?;
    let dist = Beta::new(p.alpha(), p.beta()).map_err(|e| SynthError::Invalid(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..lm.n_listeners).map(|_| 100.0 * dist.sample(&mut rng)).collect())
}

/// One column of the condition grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub id: String,
    pub kind: DegradationKind,
    pub strength: f64,
    pub listener: ListenerModel,
}

/// Condition `j` of `n` gets strength `j / (n - 1)` and cycles through the
/// degradation kinds. With `heteroscedastic`, kappa runs linearly from 6 to
/// 40 across the grid instead of the fixed `lm.kappa`.
pub fn condition_grid(n: usize, lm: &ListenerModel, heteroscedastic: bool) -> Result<Vec<Condition>, SynthError> {
    if n < 2 {
        return Err(SynthError::Invalid(format!("need at least 2 conditions, got {n}")));
    }
    if !(lm.kappa > 2.0) || lm.n_listeners == 0 {
        return Err(SynthError::Invalid("kappa must exceed 2 and the panel must be nonempty".into()));
    }
    Ok((0..n)
        .map(|j| {
            let t = j as f64 / (n - 1) as f64;
            let kappa = if heteroscedastic { 6.0 + 34.0 * t } else { lm.kappa };
            Condition {
                id: format!("c{j:02}"),
                kind: DegradationKind::ALL[j % 4],
                strength: t,
                listener: ListenerModel { kappa, ..*lm },
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionTruth {
    pub condition_id: String,
    pub kind: DegradationKind,
    pub strength: f64,
    pub kappa: f64,
    pub omega: f64,
    pub alpha: f64,
    pub beta: f64,
    /// `100 alpha / (alpha + beta)`
    pub true_mean: f64,
    /// `100 omega`
    pub true_mode: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupTruth {
    pub item_id: String,
    pub condition_id: String,
    pub split: Split,
    pub strength: f64,
    pub alpha: f64,
    pub beta: f64,
    pub true_mean: f64,
    pub true_mode: f64,
    pub panel_mean: f64,
}

/// Hidden generating parameters, written next to the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub seed: u64,
    pub conditions: Vec<ConditionTruth>,
    pub groups: Vec<GroupTruth>,
}

impl GroundTruth {
    pub fn load(path: &Path) -> Result<Self, SynthError> {
        let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        serde_json::from_str(&text).map_err(|e| io_err(path, e))
    }

    pub fn means(&self) -> BTreeMap<(String, String), f64> {
        self.groups.iter().map(|g| ((g.item_id.clone(), g.condition_id.clone()), g.true_mean)).collect()
    }

    pub fn modes(&self) -> BTreeMap<(String, String), f64> {
        self.groups.iter().map(|g| ((g.item_id.clone(), g.condition_id.clone()), g.true_mode)).collect()
    }
}

#[derive(Debug, Clone)]
pub struct DatasetSummary {
    pub manifest: PathBuf,
    pub groundtruth: PathBuf,
    pub rows: usize,
    pub items: usize,
    pub conditions: usize,
}

pub const MANIFEST_NAME: &str = "manifest.jsonl";
pub const GROUNDTRUTH_NAME: &str = "groundtruth.json";

/// `n` bundled sources named `item00..`, cycling through [`SourceKind`].
pub fn generate_sources(n: usize, seconds: f64, seed: u64, rate: u32) -> Vec<(String, Waveform)> {
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    let seeds: Vec<u64> = (0..n).map(|_| master.gen()).collect();
    seeds
        .par_iter()
        .enumerate()
        .map(|(i, &s)| (format!("item{i:02}"), generate(SourceKind::for_item(i), &mut ChaCha8Rng::seed_from_u64(s), seconds, rate)))
        .collect()
}

/// Degrade every source under every condition, sample a panel per pair and
/// write WAVs, `manifest.jsonl` and `groundtruth.json` into `out_dir`. The
/// last `test_items` sources are marked as the test split.
pub fn build_dataset(
    sources: &[(String, Waveform)],
    conditions: &[Condition],
    seed: u64,
    test_items: usize,
    out_dir: &Path,
) -> Result<DatasetSummary, SynthError> {
    if sources.len() < 4 {
        return Err(SynthError::TooFewItems(sources.len()));
    }
    if test_items >= sources.len() {
        return Err(SynthError::Invalid(format!("test_items {test_items} leaves no training items")));
    }
    if conditions.is_empty() {
        return Err(SynthError::Invalid("empty condition grid".into()));
    }
    let audio = out_dir.join("audio");
    std::fs::create_dir_all(&audio).map_err(|e| io_err(&audio, e))?;

    // one degradation seed per condition, as a test condition applies the
    // same processing to every item
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    let degrade_seeds: Vec<u64> = conditions.iter().map(|_| master.gen()).collect();
    let panel_seeds: Vec<Vec<u64>> = sources.iter().map(|_| conditions.iter().map(|_| master.gen()).collect()).collect();

    let condition_truth = conditions
        .iter()
        .map(|c| {
            let p = c.listener.params(c.strength)?;
            let omega = ListenerModel::mode(c.strength);
            Ok(ConditionTruth {
                condition_id: c.id.clone(),
                kind: c.kind,
                strength: c.strength,
                kappa: c.listener.kappa,
                omega,
                alpha: p.alpha(),
                beta: p.beta(),
                true_mean: 100.0 * p.mean(),
                true_mode: 100.0 * omega,
            })
        })
        .collect::<Result<Vec<_>, SynthError>>()?;

    let n_train = sources.len() - test_items;
    type ItemOut = (Vec<ManifestEntry>, Vec<GroupTruth>);
    let per_item: Vec<ItemOut> = sources
        .par_iter()
        .enumerate()
        .map(|(i, (item, w))| -> Result<ItemOut, SynthError> {
            let split = if i < n_train { Split::Train } else { Split::Test };
            let ref_rel = PathBuf::from("audio").join(format!("{item}_ref.wav"));
            write_wav(&out_dir.join(&ref_rel), w, WavEncoding::Float32)?;
            let mut rows = Vec::new();
            let mut truth = Vec::new();
            for (j, (c, ct)) in conditions.iter().zip(&condition_truth).enumerate() {
                let test_rel = PathBuf::from("audio").join(format!("{item}_{}.wav", c.id));
                let degraded = degrade(w, &DegradationSpec::new(c.kind, c.strength, degrade_seeds[j]));
                write_wav(&out_dir.join(&test_rel), &degraded, WavEncoding::Float32)?;
                let panel = sample_listeners(c.strength, &c.listener, panel_seeds[i][j])?;
                for (k, &score) in panel.iter().enumerate() {
                    rows.push(ManifestEntry {
                        ref_path: ref_rel.clone(),
                        test_path: test_rel.clone(),
                        listener_score: score,
                        listener_id: format!("L{k:02}"),
                        item_id: item.clone(),
                        condition_id: c.id.clone(),
                        split,
                    });
                }
                truth.push(GroupTruth {
                    item_id: item.clone(),
                    condition_id: c.id.clone(),
                    split,
                    strength: c.strength,
                    alpha: ct.alpha,
                    beta: ct.beta,
                    true_mean: ct.true_mean,
                    true_mode: ct.true_mode,
                    panel_mean: panel.iter().sum::<f64>() / panel.len() as f64,
                });
            }
            Ok((rows, truth))
        })
        .collect::<Result<_, _>>()?;

    let (rows, groups): (Vec<Vec<ManifestEntry>>, Vec<Vec<GroupTruth>>) = per_item.into_iter().unzip();
    let rows: Vec<ManifestEntry> = rows.into_iter().flatten().collect();
    let manifest = out_dir.join(MANIFEST_NAME);
    write_manifest(&manifest, &rows).map_err(|e| io_err(&manifest, e))?;
    let truth = GroundTruth { seed, conditions: condition_truth, groups: groups.into_iter().flatten().collect() };
    let groundtruth = out_dir.join(GROUNDTRUTH_NAME);
    let json = serde_json::to_string_pretty(&truth).map_err(|e| io_err(&groundtruth, e))?;
    std::fs::write(&groundtruth, json).map_err(|e| io_err(&groundtruth, e))?;
    Ok(DatasetSummary { manifest, groundtruth, rows: rows.len(), items: sources.len(), conditions: conditions.len() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio_io::{align_pair, SignalPair};
    use crate::gammatone::{Filterbank, GammatoneConfig};
    use crate::trainer::load_manifest;

    fn noise(n: usize, seed: u64) -> Waveform {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = (0..n).map(|_| (0.1 * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)).clamp(-1.0, 1.0) as f32).collect();
        Waveform::mono(x, 48_000).unwrap()
    }

    fn power(x: &[f32]) -> f64 {
        x.iter().map(|&v| v as f64 * v as f64).sum()
    }

    #[test]
    fn zero_strength_is_identity() {
        let w = generate(SourceKind::Stereo, &mut ChaCha8Rng::seed_from_u64(1), 0.2, 48_000);
        for kind in DegradationKind::ALL {
            assert_eq!(degrade(&w, &DegradationSpec::new(kind, 0.0, 9)), w, "{kind:?}");
        }
    }

    #[test]
    fn degradation_is_seeded() {
        let w = noise(4800, 0);
        for kind in DegradationKind::ALL {
            let a = degrade(&w, &DegradationSpec::new(kind, 0.5, 3));
            assert_eq!(a, degrade(&w, &DegradationSpec::new(kind, 0.5, 3)));
            assert_ne!(a, w);
        }
    }

    #[test]
    fn zero_db_noise_matches_signal_power() {
        let w = generate(SourceKind::SpeechLike, &mut ChaCha8Rng::seed_from_u64(2), 1.0, 48_000);
        let y = degrade(&w, &DegradationSpec::new(DegradationKind::AdditiveNoise, 1.0, 4));
        let n: Vec<f32> = y.channel(0).iter().zip(w.channel(0)).map(|(a, b)| a - b).collect();
        let ratio = power(&n) / power(w.channel(0));
        assert!((ratio - 1.0).abs() < 0.05, "{ratio}");
        let y = degrade(&w, &DegradationSpec::new(DegradationKind::AdditiveNoise, 0.5, 4));
        let n: Vec<f32> = y.channel(0).iter().zip(w.channel(0)).map(|(a, b)| a - b).collect();
        assert!((10.0 * (power(w.channel(0)) / power(&n)).log10() - 30.0).abs() < 0.1);
    }

    #[test]
    fn full_lowpass_attenuates_above_2khz() {
        let w = noise(48_000, 5);
        let y = degrade(&w, &DegradationSpec::new(DegradationKind::Lowpass, 1.0, 0));
        let (px, py) = (dsp::power_spectrum(w.channel(0)), dsp::power_spectrum(y.channel(0)));
        // 1 Hz bins
        let above = |p: &[f64]| p[2000..].iter().sum::<f64>();
        let atten = 10.0 * (above(&px) / above(&py)).log10();
        assert!(atten >= 40.0, "{atten}");
        let below = |p: &[f64]| p[20..500].iter().sum::<f64>();
        assert!((below(&py) / below(&px) - 1.0).abs() < 0.05);
    }

    #[test]
    fn bit_crush_levels() {
        let w = noise(4800, 6);
        let spec = DegradationSpec::new(DegradationKind::BitCrush, 1.0, 0);
        assert_eq!(spec.bits(), 2);
        assert_eq!(DegradationSpec::new(DegradationKind::BitCrush, 0.5, 0).bits(), 9);
        let y = degrade(&w, &spec);
        let mut levels: Vec<i32> = y.channel(0).iter().map(|&v| (v * 2.0) as i32).collect();
        levels.sort();
        levels.dedup();
        assert!(levels.len() <= 4);
    }

    #[test]
    fn band_dropout_regions_nest() {
        let w = noise(48_000, 7);
        let lost = |d: f64| {
            let y = degrade(&w, &DegradationSpec::new(DegradationKind::BandDropout, d, 11));
            let (px, py) = (dsp::power_spectrum(w.channel(0)), dsp::power_spectrum(y.channel(0)));
            px.iter().zip(&py).filter(|(a, b)| **b < 1e-12 * **a).count()
        };
        let counts: Vec<usize> = [0.1, 0.4, 0.7, 1.0].into_iter().map(lost).collect();
        assert!(counts.windows(2).all(|c| c[0] < c[1]), "{counts:?}");
    }

    #[test]
    fn feature_distance_grows_with_strength() {
        let fb = Filterbank::new(&GammatoneConfig::default()).unwrap();
        for (i, kind) in DegradationKind::ALL.into_iter().enumerate() {
            let w = generate(SourceKind::for_item(i), &mut ChaCha8Rng::seed_from_u64(20 + i as u64), 0.5, 48_000);
            let dist: Vec<f64> = [0.0, 0.25, 0.5, 0.75, 1.0]
                .into_iter()
                .map(|d| {
                    let y = degrade(&w, &DegradationSpec::new(kind, d, 13));
                    let pair: SignalPair = align_pair(w.clone(), y).unwrap();
                    let f = fb.build_features(&pair).unwrap();
                    let half = f.data.len() / 2;
                    f.data[..half].iter().zip(&f.data[half..]).map(|(a, b)| ((a - b) as f64).powi(2)).sum::<f64>().sqrt()
                })
                .collect();
            assert_eq!(dist[0], 0.0);
            assert!(dist.windows(2).all(|p| p[0] < p[1]), "{kind:?} {dist:?}");
        }
    }

    #[test]
    fn panel_moments_match_beta() {
        let lm = ListenerModel { kappa: 20.0, n_listeners: 100_000 };
        let x = sample_listeners(0.0, &lm, 42).unwrap();
        assert!(x.iter().all(|&v| v > 0.0 && v < 100.0));
        let n = x.len() as f64;
        let mean = x.iter().sum::<f64>() / n;
        assert!((mean - 90.5).abs() < 0.3, "{mean}");
        let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let m4 = x.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / n;
        let se = ((m4 - var * var) / n).sqrt();
        let p = lm.params(0.0).unwrap();
        let target = 1e4 * p.variance();
        assert!((var - target).abs() < 3.0 * se, "{var} vs {target} (se {se})");
        let small = ListenerModel { n_listeners: 10, ..lm };
        assert_eq!(sample_listeners(0.3, &small, 1).unwrap(), sample_listeners(0.3, &small, 1).unwrap());
    }

    #[test]
    fn grid_layout() {
        let g = condition_grid(6, &ListenerModel::default(), false).unwrap();
        assert_eq!(g.iter().map(|c| c.strength).collect::<Vec<_>>(), vec![0.0, 0.2, 0.4, 0.6, 0.8, 1.0]);
        assert_eq!(g[4].kind, DegradationKind::AdditiveNoise);
        assert!(g.iter().all(|c| c.listener.kappa == 20.0));
        let h = condition_grid(6, &ListenerModel::default(), true).unwrap();
        assert_eq!((h[0].listener.kappa, h[5].listener.kappa), (6.0, 40.0));
        assert!(condition_grid(1, &ListenerModel::default(), false).is_err());
    }

    #[test]
    fn dataset_rows_files_and_truth() {
        let dir = tempfile::tempdir().unwrap();
        let sources = generate_sources(4, 0.1, 3, 48_000);
        let grid = condition_grid(5, &ListenerModel::default(), false).unwrap();
        let s = build_dataset(&sources, &grid, 8, 1, dir.path()).unwrap();
        assert_eq!(s.rows, 200);
        let rows = load_manifest(&s.manifest).unwrap();
        assert_eq!(rows.len(), 200);
        assert!(rows.iter().all(|r| r.ref_path.is_file() && r.test_path.is_file()));
        assert_eq!(rows.iter().filter(|r| r.split == Split::Test).count(), 50);
        assert!(rows.iter().filter(|r| r.split == Split::Test).all(|r| r.item_id == "item03"));
        let truth = GroundTruth::load(&s.groundtruth).unwrap();
        assert_eq!(truth.groups.len(), 20);
        for item in ["item00", "item01", "item02", "item03"] {
            let m: Vec<f64> = truth.groups.iter().filter(|g| g.item_id == item).map(|g| g.true_mean).collect();
            assert!(m.windows(2).all(|p| p[0] > p[1]), "{m:?}");
        }
        assert!((truth.conditions[0].true_mean - 90.5).abs() < 1e-9);

        let again = tempfile::tempdir().unwrap();
        build_dataset(&sources, &grid, 8, 1, again.path()).unwrap();
        for name in [MANIFEST_NAME, GROUNDTRUTH_NAME, "audio/item02_c03.wav"] {
            assert_eq!(std::fs::read(dir.path().join(name)).unwrap(), std::fs::read(again.path().join(name)).unwrap());
        }
        assert!(matches!(build_dataset(&sources[..3], &grid, 8, 1, dir.path()), Err(SynthError::TooFewItems(3))));
    }
}
