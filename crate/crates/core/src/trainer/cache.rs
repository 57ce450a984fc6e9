//! On-disk feature cache keyed by the audio path pair and the front-end
//! configuration.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use super::TrainError;
use crate::audio_io::load_pair;
use crate::gammatone::{read_features, write_features, Filterbank, GammatoneConfig, GammatoneSpectrogram};

pub const CACHE_ENV: &str = "GML2_CACHE_DIR";

/// `$GML2_CACHE_DIR` when set, else `<out>/cache`.
pub fn default_cache_dir(out: &Path) -> PathBuf {
    match std::env::var_os(CACHE_ENV) {
        Some(d) if !d.is_empty() => PathBuf::from(d),
        _ => out.join("cache"),
    }
}

pub struct FeatureStore {
    filterbank: Filterbank,
    dir: Option<PathBuf>,
    strict_rate: bool,
}

impl FeatureStore {
    /// `dir = None` disables caching.
    pub fn new(config: &GammatoneConfig, dir: Option<PathBuf>, strict_rate: bool) -> Result<Self, TrainError> {
        let filterbank = Filterbank::new(config)?;
        if let Some(d) = &dir {
            std::fs::create_dir_all(d).map_err(|e| TrainError::Cache(format!("{}: {e}", d.display())))?;
        }
        Ok(Self { filterbank, dir, strict_rate })
    }

    pub fn config(&self) -> &GammatoneConfig {
        self.filterbank.config()
    }

    pub fn key(&self, reference: &Path, test: &Path) -> String {
        let mut h = Sha256::new();
        for p in [reference, test] {
            h.update(p.as_os_str().as_encoded_bytes());
            h.update([0u8]);
        }
        h.update(self.config().fingerprint().as_bytes());
        hex::encode(h.finalize())
    }

    pub fn cache_path(&self, reference: &Path, test: &Path) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join(format!("{}.gmlf", self.key(reference, test))))
    }

    /// Features computed from the audio, bypassing the cache.
    pub fn compute(&self, reference: &Path, test: &Path) -> Result<GammatoneSpectrogram, TrainError> {
        let pair = load_pair(reference, test, self.strict_rate)?;
        Ok(self.filterbank.build_features(&pair)?)
    }

    pub fn get(&self, reference: &Path, test: &Path) -> Result<GammatoneSpectrogram, TrainError> {
        let Some(path) = self.cache_path(reference, test) else {
            return self.compute(reference, test);
        };
        if path.is_file() {
            // unreadable or stale entries are recomputed
            if let Ok(f) = read_features(&path) {
                if f.config == *self.config() {
                    return Ok(f);
                }
            }
        }
        let f = self.compute(reference, test)?;
        write_features(&path, &f).map_err(|e| TrainError::Cache(format!("{}: {e}", path.display())))?;
        Ok(f)
    }

    /// Fetch many pairs concurrently; output order follows `pairs`.
    pub fn get_many(&self, pairs: &[(PathBuf, PathBuf)]) -> Result<Vec<GammatoneSpectrogram>, TrainError> {
        pairs.par_iter().map(|(r, t)| self.get(r, t)).collect()
    }
}
