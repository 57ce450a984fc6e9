//! Inception-style convolutional regressor from the 8-plane feature stack to
//! the two raw Beta parameters.
//!
//! Everything is generic over the float type: training runs in `f32`, the
//! gradient check runs the same code in `f64`.

pub mod adam;
pub mod checkpoint;
pub mod gradcheck;
pub mod layers;

use std::fmt::Debug;

use num_traits::{Float, FromPrimitive, ToPrimitive};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gammatone::{GammatoneSpectrogram, FEATURE_PLANES};
use crate::prob_beta::{LossHead, RawParams};
use layers::Act;

pub use adam::{apply_update, AdamConfig, AdamState, UpdateOutcome};
pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMetadata};

/// Band count the network accepts.
pub const INPUT_BANDS: usize = 32;

/// Fixed affine map applied to the log-power input, `(x - center) / spread`,
/// so the log floor of -10 lands near -1 and typical levels near 0.
pub const INPUT_CENTER: f64 = -5.0;
pub const INPUT_SPREAD: f64 = 5.0;

/// Kernel sizes of the four Inception branches; the last one follows a 3x3
/// max pool.
const BRANCH_KERNELS: [usize; 4] = [1, 3, 5, 1];
const BRANCH_NAMES: [&str; 4] = ["b1x1", "b3x3", "b5x5", "pool_proj"];

pub trait Scalar: Float + FromPrimitive + ToPrimitive + Send + Sync + Debug + 'static {}
impl Scalar for f32 {}
impl Scalar for f64 {}

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("invalid network config: {0}")]
    InvalidConfig(String),
    #[error("expected features with {FEATURE_PLANES} planes and {INPUT_BANDS} bands, got {planes} planes, {bands} bands")]
    InputShape { planes: usize, bands: usize },
    #[error("feature stack has no frames")]
    NoFrames,
    #[error("forward cache was produced by different parameters")]
    CacheMismatch,
    #[error("gradient set is not congruent with the parameter set")]
    ShapeMismatch,
    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: String, message: String },
    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("checkpoint checksum mismatch (stored {stored:08x}, computed {computed:08x})")]
    Checksum { stored: u32, computed: u32 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub stem_channels: usize,
    pub inception_blocks: usize,
    pub branch_channels: usize,
    pub fc_hidden: usize,
    pub seed: u64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self { stem_channels: 16, inception_blocks: 3, branch_channels: 8, fc_hidden: 32, seed: 0 }
    }
}

impl NetworkConfig {
    /// Small network used for desk-scale training runs.
    pub fn toy() -> Self {
        Self { stem_channels: 4, inception_blocks: 1, branch_channels: 4, fc_hidden: 8, seed: 0 }
    }

    /// The smallest topology (122 parameters), used for finite-difference
    /// checks of every parameter.
    pub fn gradcheck_toy() -> Self {
        Self { stem_channels: 1, inception_blocks: 1, branch_channels: 1, fc_hidden: 1, seed: 0 }
    }

    pub fn validate(&self) -> Result<(), NetworkError> {
        let counts = [
            ("stem_channels", self.stem_channels),
            ("inception_blocks", self.inception_blocks),
            ("branch_channels", self.branch_channels),
            ("fc_hidden", self.fc_hidden),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(NetworkError::InvalidConfig(format!("{name} must be at least 1")));
            }
        }
        Ok(())
    }

    fn block_in_channels(&self, i: usize) -> usize {
        if i == 0 {
            self.stem_channels
        } else {
            4 * self.branch_channels
        }
    }

    /// Names and shapes of every parameter tensor, in storage order.
    pub fn layout(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = vec![
            ("stem.weight".to_string(), vec![self.stem_channels, FEATURE_PLANES, 3, 3]),
            ("stem.bias".to_string(), vec![self.stem_channels]),
        ];
        for i in 0..self.inception_blocks {
            let cin = self.block_in_channels(i);
            for (name, k) in BRANCH_NAMES.iter().zip(BRANCH_KERNELS) {
                out.push((format!("block{i}.{name}.weight"), vec![self.branch_channels, cin, k, k]));
                out.push((format!("block{i}.{name}.bias"), vec![self.branch_channels]));
            }
        }
        let gap = 4 * self.branch_channels;
        out.push(("fc1.weight".into(), vec![self.fc_hidden, gap]));
        out.push(("fc1.bias".into(), vec![self.fc_hidden]));
        out.push(("fc2.weight".into(), vec![2, self.fc_hidden]));
        out.push(("fc2.bias".into(), vec![2]));
        out
    }

    pub fn num_params(&self) -> usize {
        self.layout().iter().map(|(_, s)| s.iter().product::<usize>()).sum()
    }
}

// tensor indices in the layout
const STEM: usize = 0;
fn branch_idx(block: usize, branch: usize) -> usize {
    2 + block * 8 + branch * 2
}
fn fc1_idx(cfg: &NetworkConfig) -> usize {
    2 + cfg.inception_blocks * 8
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSet<T> {
    config: NetworkConfig,
    names: Vec<String>,
    shapes: Vec<Vec<usize>>,
    tensors: Vec<Vec<T>>,
}

impl<T: Scalar> ParameterSet<T> {
    /// He-normal weights (std `sqrt(2 / fan_in)`) drawn from a ChaCha stream
    /// seeded by `cfg.seed`; biases zero.
    pub fn init(cfg: &NetworkConfig) -> Result<Self, NetworkError> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let (names, shapes): (Vec<_>, Vec<_>) = cfg.layout().into_iter().unzip();
        let tensors = names
            .iter()
            .zip(&shapes)
            .map(|(name, shape)| {
                let n: usize = shape.iter().product();
                if name.ends_with(".bias") {
                    return vec![T::zero(); n];
                }
                let fan_in: usize = shape[1..].iter().product();
                let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).unwrap();
                (0..n).map(|_| T::from_f64(normal.sample(&mut rng)).unwrap()).collect()
            })
            .collect();
        Ok(Self { config: cfg.clone(), names, shapes, tensors })
    }

    pub(crate) fn from_parts(cfg: NetworkConfig, tensors: Vec<Vec<T>>) -> Result<Self, NetworkError> {
        cfg.validate()?;
        let (names, shapes): (Vec<_>, Vec<Vec<usize>>) = cfg.layout().into_iter().unzip();
        if tensors.len() != shapes.len()
            || tensors.iter().zip(&shapes).any(|(t, s)| t.len() != s.iter().product::<usize>())
        {
            return Err(NetworkError::ShapeMismatch);
        }
        Ok(Self { config: cfg, names, shapes, tensors })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn num_params(&self) -> usize {
        self.tensors.iter().map(Vec::len).sum()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn shapes(&self) -> &[Vec<usize>] {
        &self.shapes
    }

    pub fn tensors(&self) -> &[Vec<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Vec<T>] {
        &mut self.tensors
    }

    pub fn tensor(&self, name: &str) -> Option<&[T]> {
        self.names.iter().position(|n| n == name).map(|i| self.tensors[i].as_slice())
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().flatten().all(|v| v.is_finite())
    }

    pub fn cast<U: Scalar>(&self) -> ParameterSet<U> {
        ParameterSet {
            config: self.config.clone(),
            names: self.names.clone(),
            shapes: self.shapes.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|t| t.iter().map(|v| U::from_f64(v.to_f64().unwrap()).unwrap()).collect())
                .collect(),
        }
    }

    /// FNV-1a over the parameter bit patterns; ties caches to parameters.
    fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for v in self.tensors.iter().flatten() {
            let bits = v.to_f64().unwrap().to_bits();
            h ^= bits;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        h
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    tensors: Vec<Vec<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn zeros_like(p: &ParameterSet<T>) -> Self {
        Self { tensors: p.tensors.iter().map(|t| vec![T::zero(); t.len()]).collect() }
    }

    pub fn tensors(&self) -> &[Vec<T>] {
        &self.tensors
    }

    pub fn is_congruent(&self, p: &ParameterSet<T>) -> bool {
        self.tensors.len() == p.tensors.len() && self.tensors.iter().zip(&p.tensors).all(|(a, b)| a.len() == b.len())
    }

    pub fn add_assign(&mut self, other: &Gradients<T>) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, &y) in a.iter_mut().zip(b) {
                *x = *x + y;
            }
        }
    }

    pub fn scale(&mut self, k: T) {
        self.tensors.iter_mut().flatten().for_each(|v| *v = *v * k);
    }

    pub fn non_finite_count(&self) -> usize {
        self.tensors.iter().flatten().filter(|v| !v.is_finite()).count()
    }

    pub fn flat(&self) -> Vec<T> {
        self.tensors.iter().flatten().copied().collect()
    }
}

struct BlockCache<T> {
    branches: [Act<T>; 4],
    argmax: Vec<u32>,
    pooled: Act<T>,
    concat_shape: (usize, usize, usize),
    out: Act<T>,
}

/// Activations retained by [`forward`] for [`backward`].
pub struct ForwardCache<T> {
    fingerprint: u64,
    input: Act<T>,
    stem: Act<T>,
    blocks: Vec<BlockCache<T>>,
    gap: Vec<T>,
    hidden: Vec<T>,
    output: [T; 2],
}

impl<T: Scalar> ForwardCache<T> {
    pub fn output(&self) -> [T; 2] {
        self.output
    }

    /// ReLU on/off pattern and max-pool winners; equal signatures mean the
    /// forward pass is locally the same smooth function.
    pub fn signature(&self) -> Vec<u32> {
        let mut sig = Vec::new();
        let mut mask = |a: &Act<T>| sig.extend(a.data.iter().map(|v| u32::from(*v > T::zero())));
        mask(&self.stem);
        for b in &self.blocks {
            b.branches.iter().for_each(&mut mask);
        }
        sig.extend(self.hidden.iter().map(|v| u32::from(*v > T::zero())));
        for b in &self.blocks {
            sig.extend_from_slice(&b.argmax);
        }
        sig
    }
}

/// Copy a feature stack into the network's activation layout.
pub fn features_to_input(features: &GammatoneSpectrogram) -> Result<Act<f32>, NetworkError> {
    if features.planes != FEATURE_PLANES || features.bands != INPUT_BANDS {
        return Err(NetworkError::InputShape { planes: features.planes, bands: features.bands });
    }
    if features.frames == 0 {
        return Err(NetworkError::NoFrames);
    }
    Ok(Act { c: features.planes, h: features.frames, w: features.bands, data: features.data.clone() })
}

fn check_input<T: Scalar>(x: &Act<T>) -> Result<(), NetworkError> {
    if x.c != FEATURE_PLANES || x.w != INPUT_BANDS {
        return Err(NetworkError::InputShape { planes: x.c, bands: x.w });
    }
    if x.h == 0 {
        return Err(NetworkError::NoFrames);
    }
    Ok(())
}

pub fn forward<T: Scalar>(p: &ParameterSet<T>, x: &Act<T>) -> Result<([T; 2], ForwardCache<T>), NetworkError> {
    check_input(x)?;
    let cfg = &p.config;
    let t = &p.tensors;
    let (center, inv) = (T::from_f64(INPUT_CENTER).unwrap(), T::from_f64(1.0 / INPUT_SPREAD).unwrap());
    let x = &Act { c: x.c, h: x.h, w: x.w, data: x.data.iter().map(|&v| (v - center) * inv).collect() };
    let mut stem = layers::conv_forward(x, &t[STEM], &t[STEM + 1], cfg.stem_channels, 3);
    layers::relu_in_place(&mut stem);

    let mut blocks: Vec<BlockCache<T>> = Vec::with_capacity(cfg.inception_blocks);
    for i in 0..cfg.inception_blocks {
        let input = blocks.last().map(|b| &b.out).unwrap_or(&stem);
        let (pooled, argmax) = layers::maxpool3_forward(input);
        let branches: [Act<T>; 4] = std::array::from_fn(|j| {
            let src = if j == 3 { &pooled } else { input };
            let bi = branch_idx(i, j);
            let mut a = layers::conv_forward(src, &t[bi], &t[bi + 1], cfg.branch_channels, BRANCH_KERNELS[j]);
            layers::relu_in_place(&mut a);
            a
        });
        let concat = layers::concat_channels(&branches.iter().collect::<Vec<_>>());
        let out = layers::avgpool2_forward(&concat);
        blocks.push(BlockCache { branches, argmax, pooled, concat_shape: (concat.c, concat.h, concat.w), out });
    }

    let last = blocks.last().map(|b| &b.out).unwrap_or(&stem);
    let gap = layers::global_avg_pool(last);
    let f1 = fc1_idx(cfg);
    let mut hidden = layers::dense_forward(&gap, &t[f1], &t[f1 + 1]);
    hidden.iter_mut().for_each(|v| {
        if !(*v > T::zero()) {
            *v = T::zero()
        }
    });
    let o = layers::dense_forward(&hidden, &t[f1 + 2], &t[f1 + 3]);
    let output = [o[0], o[1]];
    let cache = ForwardCache { fingerprint: p.fingerprint(), input: x.clone(), stem, blocks, gap, hidden, output };
    Ok((output, cache))
}

/// Reverse-mode gradient of `upstream . forward(p, x)` with respect to every
/// parameter.
pub fn backward<T: Scalar>(
    p: &ParameterSet<T>,
    cache: &ForwardCache<T>,
    upstream: [T; 2],
) -> Result<Gradients<T>, NetworkError> {
    if cache.fingerprint != p.fingerprint() {
        return Err(NetworkError::CacheMismatch);
    }
    let cfg = &p.config;
    let t = &p.tensors;
    let mut g = Gradients::zeros_like(p);
    let f1 = fc1_idx(cfg);

    let (lo, hi) = g.tensors.split_at_mut(f1 + 2);
    let (gw2, gb2) = hi.split_at_mut(1);
    let mut d_hidden = layers::dense_backward(&cache.hidden, &t[f1 + 2], &upstream, &mut gw2[0], &mut gb2[0]);
    for (d, &h) in d_hidden.iter_mut().zip(&cache.hidden) {
        if !(h > T::zero()) {
            *d = T::zero();
        }
    }
    let (gw1, gb1) = lo[f1..].split_at_mut(1);
    let d_gap = layers::dense_backward(&cache.gap, &t[f1], &d_hidden, &mut gw1[0], &mut gb1[0]);

    let last = cache.blocks.last().map(|b| &b.out).unwrap_or(&cache.stem);
    let mut d_cur = layers::global_avg_pool_backward(last, &d_gap);

    for i in (0..cfg.inception_blocks).rev() {
        let b = &cache.blocks[i];
        let input = if i == 0 { &cache.stem } else { &cache.blocks[i - 1].out };
        let (cc, ch, cw) = b.concat_shape;
        let d_concat = layers::avgpool2_backward(&Act::zeros(cc, ch, cw), &d_cur);
        let parts = layers::split_channels(&d_concat, &[cfg.branch_channels; 4]);
        let mut d_in = input.same_shape();
        for (j, mut d_branch) in parts.into_iter().enumerate() {
            layers::relu_backward(&b.branches[j], &mut d_branch);
            let bi = branch_idx(i, j);
            let (gw, gb) = g.tensors[bi..bi + 2].split_at_mut(1);
            let src = if j == 3 { &b.pooled } else { input };
            let d_src = layers::conv_backward(src, &t[bi], &d_branch, BRANCH_KERNELS[j], &mut gw[0], &mut gb[0]);
            let d_src = if j == 3 { layers::maxpool3_backward(input, &b.argmax, &d_src) } else { d_src };
            for (a, &v) in d_in.data.iter_mut().zip(&d_src.data) {
                *a = *a + v;
            }
        }
        d_cur = d_in;
    }

    layers::relu_backward(&cache.stem, &mut d_cur);
    let (gw, gb) = g.tensors[STEM..STEM + 2].split_at_mut(1);
    layers::conv_backward(&cache.input, &t[STEM], &d_cur, 3, &mut gw[0], &mut gb[0]);
    Ok(g)
}

/// Anything that maps a feature stack to raw Beta parameters.
pub trait ScorePredictor: Sync {
    fn predict_raw(&self, features: &GammatoneSpectrogram) -> Result<RawParams, NetworkError>;

    /// Likelihood the two outputs parameterize.
    fn head(&self) -> LossHead {
        LossHead::Beta
    }
}

impl ScorePredictor for ParameterSet<f32> {
    fn predict_raw(&self, features: &GammatoneSpectrogram) -> Result<RawParams, NetworkError> {
        let x = features_to_input(features)?;
        let (o, _) = forward(self, &x)?;
        Ok(RawParams::new(o[0] as f64, o[1] as f64))
    }
}
