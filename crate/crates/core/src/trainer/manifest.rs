//! JSONL listener-score manifests.

use std::collections::{BTreeSet, HashSet};
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::TrainError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    #[default]
    Train,
    Valid,
    Test,
}

/// One listener's score for one (item, condition) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub ref_path: PathBuf,
    pub test_path: PathBuf,
    pub listener_score: f64,
    pub listener_id: String,
    pub item_id: String,
    pub condition_id: String,
    #[serde(default)]
    pub split: Split,
}

impl ManifestEntry {
    pub fn group_key(&self) -> (String, String) {
        (self.item_id.clone(), self.condition_id.clone())
    }
}

/// Parse manifest text. Relative paths are resolved against `base`.
pub fn parse_manifest(text: &str, base: &Path, origin: &Path) -> Result<Vec<ManifestEntry>, TrainError> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fail = |message: String| TrainError::Manifest { path: origin.to_path_buf(), line: line_no, message };
        let mut e: ManifestEntry = serde_json::from_str(line).map_err(|err| fail(err.to_string()))?;
        if !(0.0..=100.0).contains(&e.listener_score) {
            return Err(fail(format!("listener_score {} outside [0, 100]", e.listener_score)));
        }
        if !seen.insert((e.item_id.clone(), e.condition_id.clone(), e.listener_id.clone())) {
            return Err(fail(format!(
                "duplicate (item, condition, listener) key ({}, {}, {})",
                e.item_id, e.condition_id, e.listener_id
            )));
        }
        for p in [&mut e.ref_path, &mut e.test_path] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
            if !p.is_file() {
                return Err(fail(format!("audio file {} does not exist", p.display())));
            }
        }
        out.push(e);
    }
    Ok(out)
}

pub fn load_manifest(path: &Path) -> Result<Vec<ManifestEntry>, TrainError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| TrainError::Manifest { path: path.to_path_buf(), line: 0, message: e.to_string() })?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse_manifest(&text, base, path)
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> std::io::Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for e in entries {
        serde_json::to_writer(&mut f, e)?;
        f.write_all(b"\n")?;
    }
    f.flush()
}

/// Split by item so every listener row of an item lands on the same side.
/// The validation side gets `max(1, round(n_items * (1 - train_frac)))` items.
pub fn make_split(
    entries: &[ManifestEntry],
    train_frac: f64,
    seed: u64,
) -> Result<(Vec<ManifestEntry>, Vec<ManifestEntry>), TrainError> {
    let items: BTreeSet<&str> = entries.iter().map(|e| e.item_id.as_str()).collect();
    if items.len() < 2 {
        return Err(TrainError::Split(format!("need at least 2 distinct items, found {}", items.len())));
    }
    let mut items: Vec<&str> = items.into_iter().collect();
    items.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_valid = ((items.len() as f64 * (1.0 - train_frac)).round() as usize).clamp(1, items.len() - 1);
    let valid: HashSet<&str> = items[..n_valid].iter().copied().collect();
    let (va, tr): (Vec<_>, Vec<_>) = entries.iter().cloned().partition(|e| valid.contains(e.item_id.as_str()));
    Ok((tr, va))
}
