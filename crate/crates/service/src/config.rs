//! Service configuration: a TOML file, then environment overrides.

use std::path::{Path, PathBuf};

use aact_core::EngineParams;
use serde::{Deserialize, Serialize};

pub const ENV_PORT: &str = "AACT_PORT";
pub const ENV_MODEL: &str = "AACT_MODEL";
pub const ENV_DATA: &str = "AACT_DATA";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Toml(String),
    #[error("invalid value `{value}` for {var}")]
    Env { var: &'static str, value: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub model: PathBuf,
    pub data: PathBuf,
    pub host: String,
    pub port: u16,
    pub params: EngineParams,
    /// Directory receiving one JSONL file per completed session.
    pub transcripts: Option<PathBuf>,
    /// Built UI assets, served for any path outside `/v1`.
    pub static_dir: Option<PathBuf>,
    /// Use event sequence numbers as timestamps (reproducible transcripts).
    pub logical_clock: bool,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            model: PathBuf::from("model.json"),
            data: PathBuf::from("data/ames.csv"),
            host: "127.0.0.1".into(),
            port: 8080,
            params: EngineParams::default(),
            transcripts: Some(PathBuf::from("transcripts")),
            static_dir: None,
            logical_clock: false,
        }
    }
}

impl ServiceConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Toml(e.to_string()))
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    /// Applies `AACT_PORT`, `AACT_MODEL` and `AACT_DATA` as resolved by
    /// `lookup` (normally `std::env::var`).
    pub fn apply_env(&mut self, lookup: impl Fn(&str) -> Option<String>) -> Result<(), ConfigError> {
        if let Some(port) = lookup(ENV_PORT) {
            self.port = port.trim().parse().map_err(|_| ConfigError::Env {
                var: ENV_PORT,
                value: port,
            })?;
        }
        if let Some(model) = lookup(ENV_MODEL) {
            self.model = model.into();
        }
        if let Some(data) = lookup(ENV_DATA) {
            self.data = data.into();
        }
        Ok(())
    }
}
