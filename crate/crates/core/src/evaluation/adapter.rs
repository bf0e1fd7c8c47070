//! Automated metric adapters.
//!
//! Learned metrics (COMET-style, BLEURT-style) run out of process: either a
//! command reading items on stdin, or an HTTP scoring server. A character
//! n-gram overlap metric is built in so the matrix runs without either.

use std::collections::HashMap;
use std::io::Write;
use std::process::{Command, Stdio};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::exec::ExecMode;

/// One hypothesis to score.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricItem {
    #[serde(rename = "src")]
    pub source: String,
    #[serde(rename = "mt")]
    pub hypothesis: String,
    #[serde(rename = "ref", default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MetricError {
    #[error("metric {0} needs a reference translation")]
    MissingReference(String),
    #[error("metric {id} failed: {message}")]
    Failed { id: String, message: String },
}

pub trait MetricAdapter: Send + Sync {
    fn id(&self) -> &str;

    fn needs_reference(&self) -> bool {
        true
    }

    fn score(&self, item: &MetricItem) -> Result<f64, MetricError>;

    /// Scores in input order. External adapters override this to make one
    /// round trip per batch.
    fn score_batch(&self, items: &[MetricItem], exec: ExecMode) -> Vec<Result<f64, MetricError>> {
        exec.map(items, |i| self.score(i))
    }
}

/// Character n-gram F-score, n = 1..=4, whitespace ignored. Precision and
/// recall are each averaged over the n-gram orders before combining.
#[derive(Debug, Clone)]
pub struct OverlapAdapter {
    id: String,
    max_order: usize,
}

pub const OVERLAP_ID: &str = "chrf4";

impl OverlapAdapter {
    pub fn new(id: impl Into<String>) -> Self {
        OverlapAdapter {
            id: id.into(),
            max_order: 4,
        }
    }
}

pub fn builtin_overlap_adapter() -> Arc<dyn MetricAdapter> {
    Arc::new(OverlapAdapter::new(OVERLAP_ID))
}

fn ngram_counts(chars: &[char], n: usize) -> HashMap<&[char], usize> {
    let mut m = HashMap::new();
    for w in chars.windows(n) {
        *m.entry(w).or_insert(0) += 1;
    }
    m
}

pub fn char_ngram_f(hypothesis: &str, reference: &str, max_order: usize) -> f64 {
    let hyp: Vec<char> = hypothesis.chars().filter(|c| !c.is_whitespace()).collect();
    let rf: Vec<char> = reference.chars().filter(|c| !c.is_whitespace()).collect();
    if hyp.is_empty() || rf.is_empty() {
        return if hyp.is_empty() && rf.is_empty() { 1.0 } else { 0.0 };
    }
    let (mut p_sum, mut p_n, mut r_sum, mut r_n) = (0.0, 0, 0.0, 0);
    for n in 1..=max_order {
        let h = ngram_counts(&hyp, n);
        let r = ngram_counts(&rf, n);
        let h_total: usize = h.values().sum();
        let r_total: usize = r.values().sum();
        let matched: usize = h.iter().map(|(g, c)| (*c).min(*r.get(g).unwrap_or(&0))).sum();
        if h_total > 0 {
            p_sum += matched as f64 / h_total as f64;
            p_n += 1;
        }
        if r_total > 0 {
            r_sum += matched as f64 / r_total as f64;
            r_n += 1;
        }
    }
    let p = p_sum / p_n as f64;
    let r = r_sum / r_n as f64;
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

impl MetricAdapter for OverlapAdapter {
    fn id(&self) -> &str {
        &self.id
    }

    fn score(&self, item: &MetricItem) -> Result<f64, MetricError> {
        let reference = item
            .reference
            .as_deref()
            .ok_or_else(|| MetricError::MissingReference(self.id.clone()))?;
        Ok(char_ngram_f(&item.hypothesis, reference, self.max_order))
    }
}

/// Runs `program args...` once per batch. Items go to stdin as JSON lines
/// (`{"src","mt","ref"}`); the program prints one score per line.
#[derive(Debug, Clone)]
pub struct CommandAdapter {
    id: String,
    program: String,
    args: Vec<String>,
    needs_reference: bool,
}

impl CommandAdapter {
    pub fn new(id: impl Into<String>, program: impl Into<String>, args: Vec<String>, needs_reference: bool) -> Self {
        CommandAdapter {
            id: id.into(),
            program: program.into(),
            args,
            needs_reference,
        }
    }

    fn fail(&self, message: impl Into<String>) -> MetricError {
        MetricError::Failed {
            id: self.id.clone(),
            message: message.into(),
        }
    }

    fn run(&self, items: &[MetricItem]) -> Result<Vec<f64>, MetricError> {
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| self.fail(format!("cannot start {}: {e}", self.program)))?;
        let mut input = String::new();
        for item in items {
            input.push_str(&serde_json::to_string(item).expect("metric item serializes"));
            input.push('\n');
        }
        let mut stdin = child.stdin.take().expect("piped stdin");
        let writer = std::thread::spawn(move || stdin.write_all(input.as_bytes()));
        let out = child.wait_with_output().map_err(|e| self.fail(e.to_string()))?;
        writer
            .join()
            .map_err(|_| self.fail("stdin writer panicked"))?
            .map_err(|e| self.fail(format!("writing stdin: {e}")))?;
        if !out.status.success() {
            return Err(self.fail(format!(
                "exited with {}: {}",
                out.status,
                String::from_utf8_lossy(&out.stderr).trim()
            )));
        }
        let stdout = String::from_utf8_lossy(&out.stdout);
        let scores = stdout
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| l.trim().parse::<f64>().map_err(|_| self.fail(format!("not a score: {l:?}"))))
            .collect::<Result<Vec<_>, _>>()?;
        if scores.len() != items.len() {
            return Err(self.fail(format!("expected {} scores, got {}", items.len(), scores.len())));
        }
        Ok(scores)
    }
}

fn check_references(id: &str, needs: bool, items: &[MetricItem]) -> Result<(), MetricError> {
    if needs && items.iter().any(|i| i.reference.is_none()) {
        return Err(MetricError::MissingReference(id.to_string()));
    }
    Ok(())
}

fn spread(n: usize, r: Result<Vec<f64>, MetricError>) -> Vec<Result<f64, MetricError>> {
    match r {
        Ok(v) => v.into_iter().map(Ok).collect(),
        Err(e) => vec![Err(e); n],
    }
}

impl MetricAdapter for CommandAdapter {
    fn id(&self) -> &str {
        &self.id
    }

    fn needs_reference(&self) -> bool {
        self.needs_reference
    }

    fn score(&self, item: &MetricItem) -> Result<f64, MetricError> {
        check_references(&self.id, self.needs_reference, std::slice::from_ref(item))?;
        self.run(std::slice::from_ref(item)).map(|v| v[0])
    }

    fn score_batch(&self, items: &[MetricItem], _exec: ExecMode) -> Vec<Result<f64, MetricError>> {
        if items.is_empty() {
            return Vec::new();
        }
        let r = check_references(&self.id, self.needs_reference, items).and_then(|_| self.run(items));
        spread(items.len(), r)
    }
}

/// Scoring server: `POST {"data": [items]}` answered by `{"scores": [..]}`.
#[cfg(feature = "remote")]
pub struct HttpAdapter {
    id: String,
    endpoint: String,
    needs_reference: bool,
    client: reqwest::blocking::Client,
}

#[cfg(feature = "remote")]
impl HttpAdapter {
    pub fn new(id: impl Into<String>, endpoint: impl Into<String>, needs_reference: bool) -> Result<Self, MetricError> {
        let id = id.into();
        let client = reqwest::blocking::Client::builder()
            .timeout(std::time::Duration::from_secs(600))
            .build()
            .map_err(|e| MetricError::Failed {
                id: id.clone(),
                message: e.to_string(),
            })?;
        Ok(HttpAdapter {
            id,
            endpoint: endpoint.into(),
            needs_reference,
            client,
        })
    }

    fn run(&self, items: &[MetricItem]) -> Result<Vec<f64>, MetricError> {
        #[derive(Deserialize)]
        struct Reply {
            scores: Vec<f64>,
        }
        let fail = |message: String| MetricError::Failed {
            id: self.id.clone(),
            message,
        };
        let resp = self
            .client
            .post(&self.endpoint)
            .json(&serde_json::json!({ "data": items }))
            .send()
            .map_err(|e| fail(e.to_string()))?;
        if !resp.status().is_success() {
            return Err(fail(format!("status {}", resp.status())));
        }
        let reply: Reply = resp.json().map_err(|e| fail(format!("bad reply: {e}")))?;
        if reply.scores.len() != items.len() {
            return Err(fail(format!("expected {} scores, got {}", items.len(), reply.scores.len())));
        }
        Ok(reply.scores)
    }
}

#[cfg(feature = "remote")]
impl MetricAdapter for HttpAdapter {
    fn id(&self) -> &str {
        &self.id
    }

    fn needs_reference(&self) -> bool {
        self.needs_reference
    }

    fn score(&self, item: &MetricItem) -> Result<f64, MetricError> {
        check_references(&self.id, self.needs_reference, std::slice::from_ref(item))?;
        self.run(std::slice::from_ref(item)).map(|v| v[0])
    }

    fn score_batch(&self, items: &[MetricItem], _exec: ExecMode) -> Vec<Result<f64, MetricError>> {
        if items.is_empty() {
            return Vec::new();
        }
        let r = check_references(&self.id, self.needs_reference, items).and_then(|_| self.run(items));
        spread(items.len(), r)
    }
}

/// Declarative metric definition for configuration files.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum MetricConfig {
    Overlap {
        #[serde(default = "default_overlap_id")]
        id: String,
    },
    Command {
        id: String,
        program: String,
        #[serde(default)]
        args: Vec<String>,
        #[serde(default = "yes")]
        needs_reference: bool,
    },
    Http {
        id: String,
        endpoint: String,
        #[serde(default = "yes")]
        needs_reference: bool,
    },
}

fn default_overlap_id() -> String {
    OVERLAP_ID.into()
}

fn yes() -> bool {
    true
}

impl MetricConfig {
    pub fn build(&self) -> Result<Arc<dyn MetricAdapter>, MetricError> {
        match self {
            MetricConfig::Overlap { id } => Ok(Arc::new(OverlapAdapter::new(id))),
            MetricConfig::Command {
                id,
                program,
                args,
                needs_reference,
            } => Ok(Arc::new(CommandAdapter::new(id, program, args.clone(), *needs_reference))),
            #[cfg(feature = "remote")]
            MetricConfig::Http {
                id,
                endpoint,
                needs_reference,
            } => Ok(Arc::new(HttpAdapter::new(id, endpoint, *needs_reference)?)),
            #[cfg(not(feature = "remote"))]
            MetricConfig::Http { id, .. } => Err(MetricError::Failed {
                id: id.clone(),
                message: "HTTP metrics need the `remote` feature".into(),
            }),
        }
    }
}
