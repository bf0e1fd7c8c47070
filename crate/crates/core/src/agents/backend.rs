//! Text-in/text-out generation backends.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::GenerationParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TokenUsage {
    pub input_tokens: u64,
    pub output_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Generation {
    pub text: String,
    /// Usage reported by the provider, when it reports any.
    pub usage: Option<TokenUsage>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BackendError {
    /// Worth retrying: timeouts, rate limits, 5xx.
    #[error("transient backend failure: {0}")]
    Transient(String),
    #[error("backend failure: {0}")]
    Fatal(String),
}

impl BackendError {
    pub fn is_transient(&self) -> bool {
        matches!(self, BackendError::Transient(_))
    }
}

pub trait AgentBackend: Send + Sync {
    fn id(&self) -> &str;
    fn generate(&self, prompt: &str, params: &GenerationParams) -> Result<Generation, BackendError>;
}

/// Exponential backoff for transient failures.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            attempts: 3,
            base_delay: Duration::from_millis(500),
        }
    }
}

impl RetryPolicy {
    pub fn no_delay() -> Self {
        RetryPolicy {
            base_delay: Duration::ZERO,
            ..Self::default()
        }
    }

    /// Delay before attempt `n` (1-based; the first attempt never waits).
    pub fn delay_before(&self, n: u32) -> Duration {
        if n <= 1 {
            Duration::ZERO
        } else {
            self.base_delay * 2u32.saturating_pow(n - 2)
        }
    }

    /// Calls `backend` until it succeeds, fails fatally or runs out of attempts.
    /// Returns the outcome and the number of attempts made.
    pub fn call(
        &self,
        backend: &dyn AgentBackend,
        prompt: &str,
        params: &GenerationParams,
    ) -> (Result<Generation, BackendError>, u32) {
        let attempts = self.attempts.max(1);
        let mut n = 0;
        loop {
            n += 1;
            let delay = self.delay_before(n);
            if !delay.is_zero() {
                std::thread::sleep(delay);
            }
            match backend.generate(prompt, params) {
                Err(e) if e.is_transient() && n < attempts => continue,
                other => return (other, n),
            }
        }
    }
}

/// Backends by id.
#[derive(Clone, Default)]
pub struct BackendRegistry {
    backends: BTreeMap<String, Arc<dyn AgentBackend>>,
}

impl fmt::Debug for BackendRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.backends.keys()).finish()
    }
}

impl BackendRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registry holding only the deterministic mock under id `mock`.
    pub fn with_mock() -> Self {
        let mut r = Self::new();
        r.insert(Arc::new(super::mock::MockBackend::new("mock")));
        r
    }

    pub fn insert(&mut self, backend: Arc<dyn AgentBackend>) {
        self.backends.insert(backend.id().to_string(), backend);
    }

    pub fn get(&self, id: &str) -> Option<&Arc<dyn AgentBackend>> {
        self.backends.get(id)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.backends.contains_key(id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.backends.keys().map(String::as_str)
    }
}

/// Declarative backend definition, as found in service configuration files.
/// Credentials are never stored here, only the name of the environment
/// variable that holds them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BackendConfig {
    Mock {
        id: String,
    },
    /// OpenAI-compatible chat completions endpoint.
    OpenaiChat {
        id: String,
        endpoint: String,
        model: String,
        api_key_env: String,
    },
    /// NiuTrans-style text translation API (NMT; Translator role only).
    Niutrans {
        id: String,
        endpoint: String,
        api_key_env: String,
        #[serde(default = "default_from")]
        from: String,
        #[serde(default = "default_to")]
        to: String,
    },
}

fn default_from() -> String {
    "en".into()
}

fn default_to() -> String {
    "cht".into()
}

impl BackendConfig {
    pub fn id(&self) -> &str {
        match self {
            BackendConfig::Mock { id } | BackendConfig::OpenaiChat { id, .. } | BackendConfig::Niutrans { id, .. } => id,
        }
    }

    pub fn build(&self) -> Result<Arc<dyn AgentBackend>, BackendError> {
        match self {
            BackendConfig::Mock { id } => Ok(Arc::new(super::mock::MockBackend::new(id))),
            #[cfg(feature = "remote")]
            BackendConfig::OpenaiChat {
                id,
                endpoint,
                model,
                api_key_env,
            } => Ok(Arc::new(super::remote::OpenAiChatBackend::new(
                id,
                endpoint,
                model,
                std::env::var(api_key_env).ok(),
            )?)),
            #[cfg(feature = "remote")]
            BackendConfig::Niutrans {
                id,
                endpoint,
                api_key_env,
                from,
                to,
            } => Ok(Arc::new(super::remote::NiuTransBackend::new(
                id,
                endpoint,
                std::env::var(api_key_env).ok(),
                from,
                to,
            )?)),
            #[cfg(not(feature = "remote"))]
            other => Err(BackendError::Fatal(format!(
                "backend {} needs the `remote` feature",
                other.id()
            ))),
        }
    }
}

pub fn build_registry(configs: &[BackendConfig]) -> Result<BackendRegistry, BackendError> {
    let mut r = BackendRegistry::new();
    for c in configs {
        r.insert(c.build()?);
    }
    Ok(r)
}
