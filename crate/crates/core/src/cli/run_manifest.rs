//! Run manifests: enough to repeat an invocation exactly.

use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use super::CliError;

pub const RUN_MANIFEST_NAME: &str = "run_manifest.json";
pub const RUN_MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputHash {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: u32,
    pub tool_version: String,
    pub subcommand: String,
    pub argv: Vec<String>,
    pub seeds: Value,
    /// SHA-256 of the canonical JSON of `subcommand`, `config` and `params`.
    pub config_hash: String,
    pub config: Value,
    /// Subcommand arguments other than output locations.
    pub params: Value,
    pub inputs: Vec<InputHash>,
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let mut f = std::fs::File::open(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex::encode(h.finalize()))
}

pub fn config_hash(subcommand: &str, config: &Value, params: &Value) -> String {
    // serde_json maps are ordered by key, so this encoding is canonical
    let doc = serde_json::json!({ "subcommand": subcommand, "config": config, "params": params });
    hex::encode(Sha256::digest(serde_json::to_vec(&doc).expect("json encodes")))
}

impl RunManifest {
    pub fn new(subcommand: &str, argv: &[String], seeds: Value, config: Value, params: Value, inputs: &[PathBuf]) -> Result<Self, CliError> {
        let inputs = inputs
            .iter()
            .map(|p| Ok(InputHash { path: p.clone(), sha256: sha256_file(p)? }))
            .collect::<Result<Vec<_>, CliError>>()?;
        Ok(Self {
            version: RUN_MANIFEST_VERSION,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            subcommand: subcommand.to_string(),
            argv: argv.to_vec(),
            seeds,
            config_hash: config_hash(subcommand, &config, &params),
            config,
            params,
            inputs,
        })
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        let json = serde_json::to_vec_pretty(self).expect("manifest serializes");
        std::fs::write(path, json).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn hash_is_stable_and_sensitive() {
        let c = json!({"train": {"seed": 1, "learning_rate": 0.001}});
        let p = json!({"items": 8});
        assert_eq!(config_hash("synth", &c, &p), config_hash("synth", &c, &p));
        assert_ne!(config_hash("synth", &c, &p), config_hash("synth", &c, &json!({"items": 9})));
        assert_ne!(config_hash("synth", &c, &p), config_hash("train", &c, &p));
        assert_ne!(config_hash("synth", &c, &p), config_hash("synth", &json!({"train": {"seed": 2, "learning_rate": 0.001}}), &p));
    }

    #[test]
    fn manifest_round_trips_as_json() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("in.txt");
        std::fs::write(&input, b"abc").unwrap();
        let m = RunManifest::new("eval", &["gml2".into(), "eval".into()], json!({"train": 0}), json!({}), json!({}), &[input]).unwrap();
        assert_eq!(m.inputs[0].sha256, "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
        let path = dir.path().join(RUN_MANIFEST_NAME);
        m.write(&path).unwrap();
        assert_eq!(RunManifest::load(&path).unwrap(), m);
    }
}
