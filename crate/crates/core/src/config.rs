//! Run configuration loaded from a single JSON file.
//!
//! Every field has a default, so `{}` is a valid config. Command-line flags
//! override individual fields after loading.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cost::ModelConfig;
use crate::error::{Error, Result};
use crate::partition::VitSpec;
use crate::resampler::DEFAULT_QUERIES;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Json,
    Text,
}

impl std::str::FromStr for OutputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(Self::Json),
            "text" => Ok(Self::Text),
            other => Err(Error::InvalidArgument(format!("unknown format {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Seeds {
    pub resampler: u64,
    pub proofs: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Self {
            resampler: 0,
            proofs: 42,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AppConfig {
    pub vit: VitSpec,
    pub model: ModelConfig,
    pub resampler_queries: usize,
    pub max_slices: u32,
    pub seeds: Seeds,
    pub format: OutputFormat,
}

impl Default for AppConfig {
    fn default() -> Self {
        Self {
            vit: VitSpec::clip_l14_336(),
            model: ModelConfig::clip_l14_vicuna13b(),
            resampler_queries: DEFAULT_QUERIES,
            max_slices: 6,
            seeds: Seeds::default(),
            format: OutputFormat::Json,
        }
    }
}

impl AppConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidArgument(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_slices == 0 {
            return Err(Error::InvalidArgument("max_slices must be at least 1".into()));
        }
        if self.resampler_queries == 0 {
            return Err(Error::InvalidArgument("resampler_queries must be at least 1".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_is_default() {
        assert_eq!(AppConfig::from_json("{}").unwrap(), AppConfig::default());
    }

    #[test]
    fn partial_override() {
        let cfg = AppConfig::from_json(r#"{"max_slices": 9, "seeds": {"proofs": 1}, "format": "text"}"#).unwrap();
        assert_eq!(cfg.max_slices, 9);
        assert_eq!(cfg.seeds, Seeds { resampler: 0, proofs: 1 });
        assert_eq!(cfg.format, OutputFormat::Text);
        assert_eq!(cfg.resampler_queries, 64);
    }

    #[test]
    fn round_trip_and_validation() {
        let text = serde_json::to_string(&AppConfig::default()).unwrap();
        assert_eq!(AppConfig::from_json(&text).unwrap(), AppConfig::default());
        assert!(AppConfig::from_json(r#"{"max_slices": 0}"#).is_err());
        assert!(AppConfig::from_json(r#"{"resampler_queries": 0}"#).is_err());
        assert!(AppConfig::from_json(r#"{"vit": {"w": 336, "h": 336, "patch": 15, "M": 1}}"#).is_err());
    }
}
