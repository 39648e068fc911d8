//! TOML configuration: schema plus hyperparameters.
//!
//! ```toml
//! vertical = "synthbook"
//! fields = ["title", "author", "price", "date"]
//! seed = 7
//! filter_top_k = 500
//! vote_fraction = 1.0
//!
//! [features]
//! prev_window = 10
//!
//! [node]
//! epochs = 10
//! [node.adam]
//! learning_rate = 0.001
//!
//! [relation]
//! m = 10
//! ```
//! Every table and key is optional and falls back to its default.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dom::{IngestError, VerticalSchema};
use crate::features::FeatureConfig;
use crate::filter::DEFAULT_TOP_K;
use crate::node_model::NodeModelConfig;
use crate::relation::RelationConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("config {path}: {source}")]
    Parse { path: String, source: toml::de::Error },
    #[error("config has no schema: set `vertical` and `fields`")]
    MissingSchema,
    #[error(transparent)]
    Schema(#[from] IngestError),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub vertical: Option<String>,
    pub fields: Vec<String>,
    pub seed: u64,
    pub filter_top_k: usize,
    /// Share of a site's pages used to elect the majority XPath.
    pub vote_fraction: f64,
    /// Text file of `token v1 .. vd` lines that seeds the word embeddings.
    pub word_vectors: Option<PathBuf>,
    pub features: FeatureConfig,
    pub node: NodeModelConfig,
    pub relation: RelationConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            vertical: None,
            fields: Vec::new(),
            seed: 7,
            filter_top_k: DEFAULT_TOP_K,
            vote_fraction: 1.0,
            word_vectors: None,
            features: FeatureConfig::default(),
            node: NodeModelConfig::default(),
            relation: RelationConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str, origin: &str) -> Result<Self, ConfigError> {
        let cfg: Self =
            toml::from_str(text).map_err(|source| ConfigError::Parse { path: origin.to_string(), source })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let origin = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: origin.clone(), source })?;
        Self::from_toml(&text, &origin)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn schema(&self) -> Result<VerticalSchema, ConfigError> {
        let vertical = self.vertical.as_deref().ok_or(ConfigError::MissingSchema)?;
        if self.fields.is_empty() {
            return Err(ConfigError::MissingSchema);
        }
        let fields: Vec<&str> = self.fields.iter().map(String::as_str).collect();
        Ok(VerticalSchema::new(vertical, &fields)?)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.filter_top_k == 0 {
            return Err(ConfigError::Invalid("filter_top_k must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.vote_fraction) {
            return Err(ConfigError::Invalid(format!("vote_fraction {} outside [0, 1]", self.vote_fraction)));
        }
        self.node.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.relation.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_is_default() {
        assert_eq!(PipelineConfig::from_toml("", "x").unwrap(), PipelineConfig::default());
    }

    #[test]
    fn partial_tables() {
        let cfg = PipelineConfig::from_toml(
            "vertical = \"book\"\nfields = [\"title\", \"author\"]\n[node]\nepochs = 3\n[node.adam]\nlearning_rate = 0.01\n",
            "x",
        )
        .unwrap();
        assert_eq!(cfg.node.epochs, 3);
        assert_eq!(cfg.node.adam.learning_rate, 0.01);
        assert_eq!(cfg.node.mlp_hidden, 100);
        assert_eq!(cfg.schema().unwrap().len(), 2);
    }

    #[test]
    fn round_trip_and_rejections() {
        let cfg = PipelineConfig::default();
        assert_eq!(PipelineConfig::from_toml(&cfg.to_toml(), "x").unwrap(), cfg);
        let with_vectors = PipelineConfig { word_vectors: Some("glove.txt".into()), ..PipelineConfig::default() };
        assert_eq!(PipelineConfig::from_toml(&with_vectors.to_toml(), "x").unwrap(), with_vectors);
        assert!(matches!(PipelineConfig::from_toml("bogus = 1", "x"), Err(ConfigError::Parse { .. })));
        assert!(matches!(PipelineConfig::from_toml("vote_fraction = 2.0", "x"), Err(ConfigError::Invalid(_))));
        assert!(matches!(PipelineConfig::default().schema(), Err(ConfigError::MissingSchema)));
    }
}
