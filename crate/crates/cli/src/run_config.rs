//! `key = value` run configuration files.
//!
//! Blank lines and lines starting with `#` are ignored. Keys are the model
//! keys of `ModelConfig`, the training keys of `TrainConfig`, and the data
//! keys below. Relative paths resolve against the file's directory.

use std::fs;
use std::path::{Path, PathBuf};
use amseg::model::ModelConfig;
use amseg::train::TrainConfig;
use amseg::{Error, Result};


#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub manifest: Option<PathBuf>,
    pub validation_manifest: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn parse(text: &str, base: &Path, label: &str) -> Result<Self> {
        let mut cfg = RunConfig {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            manifest: None,
            validation_manifest: None,
            output_dir: None,
        };
        let mut seen: Vec<String> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let at = |msg: String| Error::Config(format!("{label} line {}: {msg}", i + 1));
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| at(format!("expected `key = value`, found {line:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            if seen.iter().any(|k| k == key) {
                return Err(at(format!("duplicate key {key:?}")));
            }
            seen.push(key.to_string());
            let path = || base.join(value);
            let known = match key {
                "manifest" => {
                    cfg.manifest = Some(path());
                    true
                }
                "validation_manifest" => {
                    cfg.validation_manifest = Some(path());
                    true
                }
                "output_dir" => {
                    cfg.output_dir = Some(path());
                    true
                }
                _ => {
                    let strip = |e: Error| match e {
                        Error::Config(m) => at(m),
                        other => at(other.to_string()),
                    };
                    cfg.model.set(key, value).map_err(strip)? || cfg.train.set(key, value).map_err(strip)?
                }
            };
            if !known {
                return Err(at(format!("unknown key {key:?}")));
            }
        }
        cfg.model
            .validate()
            .and_then(|_| cfg.train.validate())
            .map_err(|e| Error::Config(format!("{label}: {}", e.to_string().trim_start_matches("config error: "))))?;
        Ok(cfg)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        RunConfig::parse(&text, base, &path.display().to_string())
    }

    pub fn require_manifest(&self) -> Result<&Path> {
        self.manifest
            .as_deref()
            .ok_or_else(|| Error::Config("config does not set `manifest`".into()))
    }
}
