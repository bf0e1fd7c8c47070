//! HTTP backends. Blocking clients: call them from worker threads, not from
//! inside an async executor.

use std::time::Duration;

use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde_json::{json, Value};

use super::backend::{AgentBackend, BackendError, Generation, TokenUsage};
use super::prompt::{parse_task, TaskView};
use super::GenerationParams;

fn client() -> Result<Client, BackendError> {
    Client::builder()
        .timeout(Duration::from_secs(120))
        .build()
        .map_err(|e| BackendError::Fatal(e.to_string()))
}

fn classify(status: StatusCode, body: String) -> BackendError {
    if status == StatusCode::TOO_MANY_REQUESTS || status.is_server_error() {
        BackendError::Transient(format!("{status}: {body}"))
    } else {
        BackendError::Fatal(format!("{status}: {body}"))
    }
}

fn send(req: reqwest::blocking::RequestBuilder) -> Result<Value, BackendError> {
    let resp = req.send().map_err(|e| {
        if e.is_timeout() || e.is_connect() {
            BackendError::Transient(e.to_string())
        } else {
            BackendError::Fatal(e.to_string())
        }
    })?;
    let status = resp.status();
    if !status.is_success() {
        return Err(classify(status, resp.text().unwrap_or_default()));
    }
    resp.json().map_err(|e| BackendError::Fatal(format!("bad response body: {e}")))
}

/// OpenAI-compatible `chat/completions` endpoint; the prompt is sent as one user message.
pub struct OpenAiChatBackend {
    id: String,
    endpoint: String,
    model: String,
    api_key: Option<String>,
    client: Client,
}

impl OpenAiChatBackend {
    pub fn new(id: &str, endpoint: &str, model: &str, api_key: Option<String>) -> Result<Self, BackendError> {
        Ok(OpenAiChatBackend {
            id: id.into(),
            endpoint: endpoint.into(),
            model: model.into(),
            api_key,
            client: client()?,
        })
    }
}

impl AgentBackend for OpenAiChatBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn generate(&self, prompt: &str, params: &GenerationParams) -> Result<Generation, BackendError> {
        let body = json!({
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": params.temperature,
            "max_tokens": params.max_tokens,
            "frequency_penalty": params.frequency_penalty,
            "presence_penalty": params.presence_penalty,
        });
        let mut req = self.client.post(&self.endpoint).json(&body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let v = send(req)?;
        let text = v["choices"][0]["message"]["content"]
            .as_str()
            .ok_or_else(|| BackendError::Fatal("response has no choices[0].message.content".into()))?
            .to_string();
        let usage = v["usage"]["prompt_tokens"].as_u64().zip(v["usage"]["completion_tokens"].as_u64()).map(
            |(input_tokens, output_tokens)| TokenUsage {
                input_tokens,
                output_tokens,
            },
        );
        Ok(Generation { text, usage })
    }
}

/// Sentence-level NMT service. Only understands Translator prompts: the
/// source paragraph is extracted and sent on its own.
pub struct NiuTransBackend {
    id: String,
    endpoint: String,
    api_key: Option<String>,
    from: String,
    to: String,
    client: Client,
}

impl NiuTransBackend {
    pub fn new(id: &str, endpoint: &str, api_key: Option<String>, from: &str, to: &str) -> Result<Self, BackendError> {
        Ok(NiuTransBackend {
            id: id.into(),
            endpoint: endpoint.into(),
            api_key,
            from: from.into(),
            to: to.into(),
            client: client()?,
        })
    }
}

impl AgentBackend for NiuTransBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn generate(&self, prompt: &str, _params: &GenerationParams) -> Result<Generation, BackendError> {
        let Some(TaskView::Translate { src }) = parse_task(prompt) else {
            return Err(BackendError::Fatal(format!("{} only serves the Translator role", self.id)));
        };
        let form = [
            ("from", self.from.as_str()),
            ("to", self.to.as_str()),
            ("apikey", self.api_key.as_deref().unwrap_or("")),
            ("src_text", src.as_str()),
        ];
        let v = send(self.client.post(&self.endpoint).form(&form))?;
        if let Some(code) = v.get("error_code") {
            return Err(BackendError::Fatal(format!("niutrans error {code}: {}", v["error_msg"])));
        }
        let text = v["tgt_text"]
            .as_str()
            .ok_or_else(|| BackendError::Fatal("response has no tgt_text".into()))?
            .to_string();
        Ok(Generation { text, usage: None })
    }
}
