//! Output files plus the run manifest. Everything in the manifest is a
//! function of the inputs and configuration; wall-clock times go to a
//! separate timestamps file.

use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::Serialize;
use serde_json::Value;

use fcrx_core::model::{sha256_hex, CHECKPOINT_VERSION};

use crate::error::{io, CliError};

#[derive(Debug, Clone, Serialize)]
pub struct InputRecord {
    pub role: String,
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct OutputRecord {
    pub file: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Versions {
    pub fcrx: &'static str,
    pub checkpoint_format: u32,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub command: String,
    pub seed: u64,
    pub config_hash: String,
    pub config: Value,
    pub versions: Versions,
    pub inputs: Vec<InputRecord>,
    pub outputs: Vec<OutputRecord>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub summary: Option<Value>,
}

#[derive(Debug, Clone, Serialize)]
struct Timestamps {
    started_unix_ms: u128,
    finished_unix_ms: u128,
    elapsed_ms: u128,
}

pub struct Output {
    dir: PathBuf,
    /// Prepended to the manifest and timestamps file names.
    prefix: String,
    command: String,
    started: SystemTime,
    clock: Instant,
    inputs: Vec<InputRecord>,
    files: Vec<String>,
    summary: Option<Value>,
}

fn unix_ms(t: SystemTime) -> u128 {
    t.duration_since(UNIX_EPOCH).map(|d| d.as_millis()).unwrap_or(0)
}

fn file_hash(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path).map_err(|e| io(path, e))?;
    Ok(sha256_hex(&bytes))
}

pub fn to_pretty<T: Serialize>(value: &T) -> Result<String, CliError> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| CliError::Core(e.into()))?;
    s.push('\n');
    Ok(s)
}

impl Output {
    /// Outputs go into `dir`, created if needed.
    pub fn dir(dir: &Path, command: &str) -> Result<Output, CliError> {
        std::fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
        Ok(Output::new(dir.to_path_buf(), String::new(), command))
    }

    /// A single output file; the manifest sits next to it as `<file>.manifest.json`.
    pub fn beside(file: &Path, command: &str) -> Result<Output, CliError> {
        let name = file
            .file_name()
            .and_then(|n| n.to_str())
            .ok_or_else(|| CliError::Usage(format!("bad output path {}", file.display())))?;
        let dir = match file.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        std::fs::create_dir_all(&dir).map_err(|e| io(&dir, e))?;
        Ok(Output::new(dir, format!("{name}."), command))
    }

    fn new(dir: PathBuf, prefix: String, command: &str) -> Output {
        Output {
            dir,
            prefix,
            command: command.to_string(),
            started: SystemTime::now(),
            clock: Instant::now(),
            inputs: Vec::new(),
            files: Vec::new(),
            summary: None,
        }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn input(&mut self, role: &str, path: &Path) -> Result<(), CliError> {
        let sha256 = file_hash(path)?;
        self.inputs.push(InputRecord { role: role.into(), path: path.display().to_string(), sha256 });
        Ok(())
    }

    pub fn write_text(&mut self, name: &str, text: &str) -> Result<PathBuf, CliError> {
        let p = self.path(name);
        if let Some(parent) = p.parent() {
            std::fs::create_dir_all(parent).map_err(|e| io(parent, e))?;
        }
        std::fs::write(&p, text).map_err(|e| io(&p, e))?;
        self.record(name);
        Ok(p)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<PathBuf, CliError> {
        self.write_text(name, &to_pretty(value)?)
    }

    pub fn write_jsonl<T: Serialize>(&mut self, name: &str, items: &[T]) -> Result<PathBuf, CliError> {
        let mut text = String::new();
        for item in items {
            text.push_str(&serde_json::to_string(item).map_err(|e| CliError::Core(e.into()))?);
            text.push('\n');
        }
        self.write_text(name, &text)
    }

    /// Lists a file some other writer put in the output directory.
    pub fn record(&mut self, name: &str) {
        if !self.files.iter().any(|f| f == name) {
            self.files.push(name.to_string());
        }
    }

    pub fn summary(&mut self, value: Value) {
        self.summary = Some(value);
    }

    pub fn finish(self, config: Value, seed: u64) -> Result<Manifest, CliError> {
        let mut outputs = Vec::with_capacity(self.files.len());
        for f in &self.files {
            outputs.push(OutputRecord { file: f.clone(), sha256: file_hash(&self.dir.join(f))? });
        }
        let config_hash = sha256_hex(serde_json::to_string(&config).map_err(|e| CliError::Core(e.into()))?.as_bytes());
        let manifest = Manifest {
            command: self.command.clone(),
            seed,
            config_hash,
            config,
            versions: Versions { fcrx: env!("CARGO_PKG_VERSION"), checkpoint_format: CHECKPOINT_VERSION },
            inputs: self.inputs.clone(),
            outputs,
            summary: self.summary.clone(),
        };
        let path = self.dir.join(format!("{}manifest.json", self.prefix));
        std::fs::write(&path, to_pretty(&manifest)?).map_err(|e| io(&path, e))?;
        let finished = SystemTime::now();
        let stamps = Timestamps {
            started_unix_ms: unix_ms(self.started),
            finished_unix_ms: unix_ms(finished),
            elapsed_ms: self.clock.elapsed().as_millis(),
        };
        let path = self.dir.join(format!("{}timestamps.json", self.prefix));
        std::fs::write(&path, to_pretty(&stamps)?).map_err(|e| io(&path, e))?;
        Ok(manifest)
    }
}
