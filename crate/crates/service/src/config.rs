//! Service configuration file.

use std::path::{Path, PathBuf};

use hmit_core::agents::backend::BackendConfig;
use hmit_core::evaluation::adapter::MetricConfig;
use rust_decimal::Decimal;
use serde::Deserialize;

#[derive(Debug, thiserror::Error)]
pub enum ConfigFileError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config {path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: toml::de::Error,
    },
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Per-word human rates in USD.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct HumanRates {
    pub translation: Decimal,
    pub editing: Decimal,
}

/// Everything a workspace needs. Relative paths resolve against the
/// directory holding the config file. Credentials are read from the
/// environment variables named in the backend entries.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceConfig {
    #[serde(default = "default_data_dir")]
    pub data_dir: PathBuf,
    /// Agent backends; none configured means a single `mock` backend.
    #[serde(default)]
    pub backends: Vec<BackendConfig>,
    /// Object-per-line backend price file.
    #[serde(default)]
    pub pricing: Option<PathBuf>,
    #[serde(default)]
    pub human_rates: Option<HumanRates>,
    #[serde(default)]
    pub manual_annotations: Option<PathBuf>,
    /// `term,translation` CSV; falls back to an ingested glossary in the data directory.
    #[serde(default)]
    pub glossary: Option<PathBuf>,
    /// Directory with translator.txt, annotator.txt and proofreader.txt.
    #[serde(default)]
    pub role_prompts: Option<PathBuf>,
    /// Automated metrics for `matrix`; empty means the built-in overlap metric.
    #[serde(default)]
    pub metrics: Vec<MetricConfig>,
    #[serde(default = "default_bind")]
    pub bind: String,
}

fn default_data_dir() -> PathBuf {
    PathBuf::from("data")
}

fn default_bind() -> String {
    "127.0.0.1:8080".into()
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            data_dir: default_data_dir(),
            backends: Vec::new(),
            pricing: None,
            human_rates: None,
            manual_annotations: None,
            glossary: None,
            role_prompts: None,
            metrics: Vec::new(),
            bind: default_bind(),
        }
    }
}

impl ServiceConfig {
    pub fn from_toml(text: &str, base: &Path) -> Result<Self, ConfigFileError> {
        let mut c: ServiceConfig = toml::from_str(text).map_err(|source| ConfigFileError::Parse {
            path: base.to_path_buf(),
            source,
        })?;
        c.resolve(base);
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigFileError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigFileError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base).map_err(|e| match e {
            ConfigFileError::Parse { source, .. } => ConfigFileError::Parse {
                path: path.to_path_buf(),
                source,
            },
            other => other,
        })
    }

    /// A config rooted at `data_dir` with defaults everywhere else.
    pub fn with_data_dir(data_dir: impl Into<PathBuf>) -> Self {
        ServiceConfig {
            data_dir: data_dir.into(),
            ..ServiceConfig::default()
        }
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.data_dir);
        for p in [
            &mut self.pricing,
            &mut self.manual_annotations,
            &mut self.glossary,
            &mut self.role_prompts,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
    }

    fn validate(&self) -> Result<(), ConfigFileError> {
        let mut seen = std::collections::BTreeSet::new();
        for b in &self.backends {
            if !seen.insert(b.id()) {
                return Err(ConfigFileError::Invalid(format!("backend id {:?} appears twice", b.id())));
            }
        }
        if let Some(r) = &self.human_rates {
            if r.translation.is_sign_negative() || r.editing.is_sign_negative() {
                return Err(ConfigFileError::Invalid("human rates must not be negative".into()));
            }
        }
        Ok(())
    }

    pub fn translation_memory_path(&self) -> PathBuf {
        self.data_dir.join("translation_memory.jsonl")
    }

    pub fn proofreading_memory_path(&self) -> PathBuf {
        self.data_dir.join("proofreading_memory.jsonl")
    }

    pub fn documents_path(&self) -> PathBuf {
        self.data_dir.join("documents.jsonl")
    }

    pub fn usage_path(&self) -> PathBuf {
        self.data_dir.join("usage.jsonl")
    }

    pub fn run_log_path(&self, run_id: &str) -> PathBuf {
        self.data_dir.join("runs").join(format!("{}.jsonl", sanitize(run_id)))
    }

    pub fn ingested_glossary_path(&self) -> PathBuf {
        self.data_dir.join("glossary.csv")
    }

    /// Blinded sheet served to evaluators.
    pub fn eval_sheet_path(&self) -> PathBuf {
        self.data_dir.join("eval").join("sheet.csv")
    }

    /// Default mapping location; outside the served eval directory.
    pub fn eval_mapping_path(&self) -> PathBuf {
        self.data_dir.join("private").join("mapping.jsonl")
    }
}

/// File-name-safe form of an identifier.
pub fn sanitize(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_paths_follow_the_config_file() {
        let c = ServiceConfig::from_toml(
            "data_dir = \"d\"\nglossary = \"g.csv\"\n[[backends]]\nkind = \"mock\"\nid = \"mock\"\n",
            Path::new("/etc/hmit"),
        )
        .unwrap();
        assert_eq!(c.data_dir, PathBuf::from("/etc/hmit/d"));
        assert_eq!(c.glossary, Some(PathBuf::from("/etc/hmit/g.csv")));
        assert_eq!(c.backends.len(), 1);
        assert_eq!(c.run_log_path("run 1/x"), PathBuf::from("/etc/hmit/d/runs/run_1_x.jsonl"));
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(ServiceConfig::from_toml("nonsense = 1", Path::new(".")).is_err());
        let dup = "[[backends]]\nkind = \"mock\"\nid = \"m\"\n[[backends]]\nkind = \"mock\"\nid = \"m\"\n";
        assert!(matches!(
            ServiceConfig::from_toml(dup, Path::new(".")),
            Err(ConfigFileError::Invalid(_))
        ));
    }
}
