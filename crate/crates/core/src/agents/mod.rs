//! Translator / Annotator / Proofreader agents: configuration, prompt
//! construction, backend abstraction and the per-document pipeline.

pub mod backend;
pub mod glossary;
pub mod mock;
pub mod pipeline;
pub mod prompt;
#[cfg(feature = "remote")]
pub mod remote;

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{DEFAULT_SOURCE_LANG, DEFAULT_TARGET_LANG};
use crate::memory::{Origin, DEFAULT_SHOTS};

pub use backend::{AgentBackend, BackendError, BackendRegistry, Generation, RetryPolicy, TokenUsage};
pub use pipeline::{run_tap, Memories, MemoryAccess, RunContext, RunOutput, SourceSegment};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentRole {
    Translator,
    Annotator,
    Proofreader,
}

impl fmt::Display for AgentRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AgentRole::Translator => "translator",
            AgentRole::Annotator => "annotator",
            AgentRole::Proofreader => "proofreader",
        })
    }
}

/// Sampling parameters sent with every generation call.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationParams {
    pub temperature: f64,
    pub max_tokens: u32,
    pub frequency_penalty: f64,
    pub presence_penalty: f64,
}

impl Default for GenerationParams {
    fn default() -> Self {
        GenerationParams {
            temperature: 0.0,
            max_tokens: 4096,
            frequency_penalty: 0.0,
            presence_penalty: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSpec {
    pub backend: String,
    /// Few-shot examples drawn from memory; 0 means zero-shot.
    #[serde(default)]
    pub shots: usize,
    #[serde(default)]
    pub params: GenerationParams,
}

impl AgentSpec {
    pub fn new(backend: impl Into<String>, shots: usize) -> Self {
        AgentSpec {
            backend: backend.into(),
            shots,
            params: GenerationParams::default(),
        }
    }
}

/// The Annotator is either a model or a human-supplied annotation table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum AnnotatorSpec {
    Llm {
        backend: String,
        #[serde(default)]
        params: GenerationParams,
    },
    /// Annotations come from a per-segment file; see [`pipeline::ManualAnnotations`].
    Manual {
        #[serde(default)]
        annotations: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryIds {
    pub translation: String,
    pub proofreading: String,
}

impl Default for MemoryIds {
    fn default() -> Self {
        MemoryIds {
            translation: "translation".into(),
            proofreading: "proofreading".into(),
        }
    }
}

fn default_source_lang() -> String {
    DEFAULT_SOURCE_LANG.into()
}

fn default_target_lang() -> String {
    DEFAULT_TARGET_LANG.into()
}

fn default_glossary_id() -> String {
    glossary::DEFAULT_GLOSSARY_ID.into()
}

/// One multi-agent configuration (a row of the ablation matrix).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    #[serde(default)]
    pub name: String,
    pub translator: AgentSpec,
    #[serde(default)]
    pub annotator: Option<AnnotatorSpec>,
    #[serde(default)]
    pub proofreader: Option<AgentSpec>,
    #[serde(default = "default_source_lang")]
    pub source_lang: String,
    #[serde(default = "default_target_lang")]
    pub target_lang: String,
    #[serde(default = "default_glossary_id")]
    pub glossary_id: String,
    /// Append matching glossary terms to the Translator role prompt.
    #[serde(default)]
    pub use_glossary: bool,
    #[serde(default)]
    pub memory_ids: MemoryIds,
    /// Origins the Translator may draw examples from; `None` allows all.
    #[serde(default)]
    pub translator_example_origins: Option<Vec<Origin>>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ConfigError {
    #[error("an annotator is configured without a proofreader to consume its annotations")]
    AnnotatorWithoutProofreader,
    #[error("{0}: backend id is empty")]
    EmptyBackend(AgentRole),
    #[error("unknown backend {backend:?} for {role}")]
    UnknownBackend { role: AgentRole, backend: String },
    #[error("manual annotation mode needs an annotations table")]
    MissingManualAnnotations,
    #[error("cannot parse pipeline config: {0}")]
    Parse(String),
}

impl PipelineConfig {
    /// Translator-only zero- or few-shot configuration.
    pub fn translator_only(backend: &str, shots: usize) -> Self {
        PipelineConfig {
            name: String::new(),
            translator: AgentSpec::new(backend, shots),
            annotator: None,
            proofreader: None,
            source_lang: default_source_lang(),
            target_lang: default_target_lang(),
            glossary_id: default_glossary_id(),
            use_glossary: false,
            memory_ids: MemoryIds::default(),
            translator_example_origins: None,
        }
    }

    /// Full Translator + LLM Annotator + Proofreader configuration with K-shot T and P.
    pub fn full(backend: &str) -> Self {
        let mut c = Self::translator_only(backend, DEFAULT_SHOTS);
        c.annotator = Some(AnnotatorSpec::Llm {
            backend: backend.into(),
            params: GenerationParams::default(),
        });
        c.proofreader = Some(AgentSpec::new(backend, DEFAULT_SHOTS));
        c
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let c: PipelineConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Parse(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.translator.backend.is_empty() {
            return Err(ConfigError::EmptyBackend(AgentRole::Translator));
        }
        if let Some(AnnotatorSpec::Llm { backend, .. }) = &self.annotator {
            if backend.is_empty() {
                return Err(ConfigError::EmptyBackend(AgentRole::Annotator));
            }
        }
        if let Some(p) = &self.proofreader {
            if p.backend.is_empty() {
                return Err(ConfigError::EmptyBackend(AgentRole::Proofreader));
            }
        }
        if self.annotator.is_some() && self.proofreader.is_none() {
            return Err(ConfigError::AnnotatorWithoutProofreader);
        }
        Ok(())
    }

    /// Backends this configuration calls, by role.
    pub fn backend_ids(&self) -> Vec<(AgentRole, &str)> {
        let mut out = vec![(AgentRole::Translator, self.translator.backend.as_str())];
        if let Some(AnnotatorSpec::Llm { backend, .. }) = &self.annotator {
            out.push((AgentRole::Annotator, backend.as_str()));
        }
        if let Some(p) = &self.proofreader {
            out.push((AgentRole::Proofreader, p.backend.as_str()));
        }
        out
    }

    /// Short `T/A/P` column labels: shots, `LLM`/`Manual`, or `X` when unused.
    pub fn shot_columns(&self) -> (String, String, String) {
        let t = self.translator.shots.to_string();
        let a = match &self.annotator {
            None => "X".to_string(),
            Some(AnnotatorSpec::Llm { .. }) => "LLM".to_string(),
            Some(AnnotatorSpec::Manual { .. }) => "Manual".to_string(),
        };
        let p = self.proofreader.as_ref().map_or("X".to_string(), |p| p.shots.to_string());
        (t, a, p)
    }
}

/// Role prompt texts. Defaults ship as editable assets under `assets/prompts/`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RolePrompts {
    pub translator: String,
    pub annotator: String,
    pub proofreader: String,
}

pub const DEFAULT_TRANSLATOR_ROLE: &str = include_str!("../../assets/prompts/translator.txt");
pub const DEFAULT_ANNOTATOR_ROLE: &str = include_str!("../../assets/prompts/annotator.txt");
pub const DEFAULT_PROOFREADER_ROLE: &str = include_str!("../../assets/prompts/proofreader.txt");

impl Default for RolePrompts {
    fn default() -> Self {
        RolePrompts {
            translator: DEFAULT_TRANSLATOR_ROLE.to_string(),
            annotator: DEFAULT_ANNOTATOR_ROLE.to_string(),
            proofreader: DEFAULT_PROOFREADER_ROLE.to_string(),
        }
    }
}

impl RolePrompts {
    /// Loads `translator.txt`, `annotator.txt` and `proofreader.txt` from a
    /// directory, falling back to the shipped default for any missing file.
    pub fn from_dir(dir: &Path) -> std::io::Result<Self> {
        let mut out = RolePrompts::default();
        for (name, slot) in [
            ("translator.txt", &mut out.translator),
            ("annotator.txt", &mut out.annotator),
            ("proofreader.txt", &mut out.proofreader),
        ] {
            let p = dir.join(name);
            if p.exists() {
                *slot = std::fs::read_to_string(p)?;
            }
        }
        Ok(out)
    }
}
