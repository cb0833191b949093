//! Config resolution: flags, then environment (both via clap), then the
//! TOML file, then built-in defaults.

use std::path::{Path, PathBuf};

use aact_core::counterfactual::EngineParams;
use aact_core::dataset::{SamplingMode, DEFAULT_SPLIT_SEED};
use serde::{Deserialize, Serialize};

use crate::args::{DataArgs, ModelArgs, ParamArgs};
use crate::CliError;

/// Keys accepted in the `--config` file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub model: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub schema: Option<PathBuf>,
    pub seed: Option<u64>,
    pub split: Option<f64>,
    pub bins: Option<usize>,
    pub port: Option<u16>,
    pub host: Option<String>,
    pub transcripts: Option<PathBuf>,
    pub params: Option<EngineParams>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Validation(format!("invalid config {}: {e}", path.display())))
    }

    pub fn data(&self, args: &DataArgs) -> Result<PathBuf, CliError> {
        args.data
            .clone()
            .or_else(|| self.data.clone())
            .ok_or_else(|| CliError::Validation("missing required --data".into()))
    }

    /// Explicit schema, else the config's, else `<stem>_schema.toml` beside
    /// the data file.
    pub fn schema(&self, args: &DataArgs, data: &Path) -> PathBuf {
        args.schema.clone().or_else(|| self.schema.clone()).unwrap_or_else(|| {
            let stem = data.file_stem().and_then(|s| s.to_str()).unwrap_or("data");
            data.with_file_name(format!("{stem}_schema.toml"))
        })
    }

    pub fn model_paths(&self, args: &ModelArgs) -> Result<(PathBuf, PathBuf), CliError> {
        let model = args
            .model
            .clone()
            .or_else(|| self.model.clone())
            .ok_or_else(|| CliError::Validation("missing required --model".into()))?;
        let data = args
            .data
            .clone()
            .or_else(|| self.data.clone())
            .ok_or_else(|| CliError::Validation("missing required --data".into()))?;
        Ok((model, data))
    }

    pub fn seed(&self, flag: Option<u64>) -> u64 {
        flag.or(self.seed).unwrap_or(DEFAULT_SPLIT_SEED)
    }

    pub fn params(&self, args: &ParamArgs) -> Result<EngineParams, CliError> {
        let mut params = self.params.clone().unwrap_or_default();
        if let Some(v) = args.epsilon {
            params.epsilon = v;
        }
        if let Some(v) = args.k {
            params.k = v;
        }
        if let Some(v) = args.samples {
            params.l = v;
        }
        if let Some(v) = args.mu {
            params.mu = v;
        }
        if let Some(v) = args.engine_seed {
            params.seed = v;
        }
        if let Some(v) = args.min_support {
            params.min_support = v;
        }
        if let Some(mode) = &args.sampling {
            params.sampling_mode = match mode.as_str() {
                "independent" => SamplingMode::Independent,
                "conditional" => SamplingMode::Conditional,
                "exhaustive" => SamplingMode::Exhaustive,
                other => return Err(CliError::Validation(format!("unknown sampling mode `{other}`"))),
            };
        }
        params.validate().map_err(|e| CliError::Validation(e.to_string()))?;
        Ok(params)
    }
}
