//! Layered configuration: defaults, then a `key = value` file, then flags.
//!
//! Keys are `section.field` with sections `gammatone`, `network` and
//! `train`, e.g. `train.learning_rate = 1e-3`. `network.preset` replaces the
//! whole network section with one of `default`, `toy` or `gradcheck_toy`.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::CliError;
use crate::gammatone::GammatoneConfig;
use crate::network::NetworkConfig;
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct CliConfig {
    pub gammatone: GammatoneConfig,
    pub network: NetworkConfig,
    pub train: TrainConfig,
}

impl CliConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        self.gammatone.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        self.network.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        self.train.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(())
    }
}

/// One `key = value` setting and where it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Setting {
    pub key: String,
    pub value: String,
    pub origin: String,
}

pub fn network_preset(name: &str) -> Result<NetworkConfig, CliError> {
    match name {
        "default" => Ok(NetworkConfig::default()),
        "toy" => Ok(NetworkConfig::toy()),
        "gradcheck_toy" => Ok(NetworkConfig::gradcheck_toy()),
        other => Err(CliError::Usage(format!("unknown network preset '{other}' (expected default, toy or gradcheck_toy)"))),
    }
}

pub fn parse_config_text(text: &str, origin: &Path) -> Result<Vec<Setting>, CliError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(CliError::Usage(format!("{}:{}: expected key = value", origin.display(), i + 1)));
        };
        out.push(Setting { key: k.trim().to_string(), value: v.trim().to_string(), origin: format!("{}:{}", origin.display(), i + 1) });
    }
    Ok(out)
}

pub fn load_config_file(path: &Path) -> Result<Vec<Setting>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    parse_config_text(&text, path)
}

/// `KEY=VALUE` from the command line.
pub fn parse_assignment(s: &str) -> Result<Setting, CliError> {
    let (k, v) = s.split_once('=').ok_or_else(|| CliError::Usage(format!("--set expects key=value, got '{s}'")))?;
    Ok(Setting { key: k.trim().into(), value: v.trim().into(), origin: "--set".into() })
}

fn parse_like(old: &Value, s: &str) -> Option<Value> {
    match old {
        Value::Bool(_) => s.parse::<bool>().ok().map(Value::Bool),
        Value::Number(n) if n.is_u64() => s.parse::<u64>().ok().map(Value::from),
        Value::Number(_) => s.parse::<f64>().ok().filter(|x| x.is_finite()).map(Value::from),
        Value::String(_) => Some(Value::String(s.to_string())),
        Value::Null => Some(serde_json::from_str(s).unwrap_or_else(|_| Value::String(s.to_string()))),
        _ => None,
    }
}

/// Apply settings in order on top of `base`; later settings win.
pub fn apply_settings(base: &CliConfig, settings: &[Setting]) -> Result<CliConfig, CliError> {
    let mut v = serde_json::to_value(base).expect("config serializes");
    for s in settings {
        let bad = |m: String| CliError::Usage(format!("{}: {m}", s.origin));
        if s.key == "network.preset" {
            v["network"] = serde_json::to_value(network_preset(&s.value).map_err(|e| bad(e.to_string()))?).expect("serializes");
            continue;
        }
        let (section, field) = s.key.split_once('.').ok_or_else(|| bad(format!("key '{}' needs a section prefix", s.key)))?;
        let slot = v
            .get_mut(section)
            .and_then(|sec| sec.get_mut(field))
            .ok_or_else(|| bad(format!("unknown key '{}'", s.key)))?;
        *slot = parse_like(slot, &s.value).ok_or_else(|| bad(format!("cannot parse '{}' for {}", s.value, s.key)))?;
    }
    let cfg: CliConfig = serde_json::from_value(v).map_err(|e| CliError::Usage(format!("invalid configuration: {e}")))?;
    cfg.validate()?;
    Ok(cfg)
}
