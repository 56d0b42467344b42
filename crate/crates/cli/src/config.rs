//! Run configuration. One TOML file, every field defaulted; `--set key=value`
//! and the named flags are applied on top before deserializing.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use fcrx_core::eval::ToyWorldConfig;
use fcrx_core::model::ModelConfig;
use fcrx_core::synth::SynthConfig;

use crate::error::CliError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub lexicon: Option<PathBuf>,
    pub annotations: Option<PathBuf>,
    pub reports: Option<PathBuf>,
    /// Image vectors, one `{id, vector}` per line.
    pub embeddings: Option<PathBuf>,
    /// Finding vectors keyed `"yes|edema"`; seeded vectors when unset.
    pub finding_embeddings: Option<PathBuf>,
    pub samples: Option<PathBuf>,
    pub atlas: Option<PathBuf>,
    pub corpus: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeaturizerSettings {
    /// Width of seeded finding vectors.
    pub text_dim: usize,
    pub box_gain: f64,
}

impl Default for FeaturizerSettings {
    fn default() -> Self {
        FeaturizerSettings { text_dim: 128, box_gain: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSettings {
    pub ratios: [f64; 3],
    pub folds: usize,
    pub fold: usize,
}

impl Default for SplitSettings {
    fn default() -> Self {
        SplitSettings { ratios: [0.7, 0.1, 0.2], folds: 10, fold: 0 }
    }
}

/// The key is read from `FCRX_REWRITER_KEY` only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewriterSettings {
    pub url: Option<String>,
    pub model: Option<String>,
    pub timeout_secs: u64,
    /// Fail with exit code 4 instead of falling back to the offline reformer.
    pub required: bool,
}

impl Default for RewriterSettings {
    fn default() -> Self {
        RewriterSettings { url: None, model: None, timeout_secs: 60, required: false }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub paths: Paths,
    pub featurizer: FeaturizerSettings,
    pub synth: SynthConfig,
    pub split: SplitSettings,
    /// World used by `demo`.
    pub toy: ToyWorldConfig,
    pub rewriter: RewriterSettings,
    /// Applied over the command's base model settings: the full-size recipe
    /// for `model`, the toy settings for `demo`.
    pub model: Map<String, Value>,
}

/// Parses the right-hand side of `--set` as a TOML value, or a bare string.
fn parse_value(raw: &str) -> Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .and_then(|v| serde_json::to_value(v).ok())
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

fn set_path(root: &mut Value, key: &str, value: Value) -> Result<(), CliError> {
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        if part.is_empty() {
            return Err(CliError::Usage(format!("bad key '{key}'")));
        }
        let obj = node.as_object_mut().ok_or_else(|| CliError::Usage(format!("'{key}' does not name a table")))?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        node = obj.entry(part.to_string()).or_insert_with(|| Value::Object(Map::new()));
    }
    Ok(())
}

fn merge(base: &mut Value, over: &Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (slot, v) => *slot = v.clone(),
    }
}

impl Config {
    /// Reads `path` (if any) and applies `overrides` in order.
    pub fn load(path: Option<&Path>, overrides: &[(String, Value)]) -> Result<Config, CliError> {
        let mut root = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", p.display())))?;
                let table: toml::Table =
                    toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?;
                serde_json::to_value(table).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?
            }
            None => Value::Object(Map::new()),
        };
        for (k, v) in overrides {
            set_path(&mut root, k, v.clone())?;
        }
        let cfg: Config = serde_json::from_value(root).map_err(|e| CliError::Usage(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), CliError> {
        let f = &self.featurizer;
        if f.text_dim == 0 || !(f.box_gain > 0.0 && f.box_gain.is_finite()) {
            return Err(CliError::Usage("featurizer.text_dim and featurizer.box_gain must be positive".into()));
        }
        if self.rewriter.timeout_secs == 0 {
            return Err(CliError::Usage("rewriter.timeout_secs must be positive".into()));
        }
        if self.split.folds == 0 || self.split.fold >= self.split.folds {
            return Err(CliError::Usage("split.fold must be below split.folds".into()));
        }
        Ok(())
    }

    /// `base` with the `[model]` table laid over it, validated.
    pub fn model(&self, base: ModelConfig) -> Result<ModelConfig, CliError> {
        let mut v = serde_json::to_value(base).expect("model config serializes");
        merge(&mut v, &Value::Object(self.model.clone()));
        let cfg: ModelConfig = serde_json::from_value(v).map_err(|e| CliError::Usage(format!("model: {e}")))?;
        cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(cfg)
    }

    /// The configuration as the command saw it, with `model` resolved.
    pub fn effective(&self, model: Option<&ModelConfig>) -> Value {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let (Some(m), Some(obj)) = (model, v.as_object_mut()) {
            obj.insert("model".into(), serde_json::to_value(m).expect("model config serializes"));
        }
        v
    }
}

/// Splits `KEY=VALUE`.
pub fn parse_assignment(s: &str) -> Result<(String, Value), CliError> {
    let (k, v) = s.split_once('=').ok_or_else(|| CliError::Usage(format!("expected KEY=VALUE, got '{s}'")))?;
    Ok((k.trim().to_string(), parse_value(v.trim())))
}
