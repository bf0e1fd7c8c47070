//! Deterministic offline backend.
//!
//! It reads the task back out of the prompt and answers per role:
//!
//! * Translator: wraps the source as `【譯】{src}`.
//! * Annotator: a canonical annotation line chosen by a SHA-256 of the
//!   (source, translation) pair; roughly a third of inputs get `NONE`.
//! * Proofreader: the translation with each annotated excerpt replaced by its
//!   suggestion, on one line.

use sha2::{Digest, Sha256};

use super::backend::{AgentBackend, BackendError, Generation};
use super::prompt::{parse_task, TaskView};
use super::GenerationParams;
use crate::codes::{format_annotations, parse_annotations, registry, AnnotationRecord, Code};

pub const TRANSLATION_MARK: &str = "【譯】";

#[derive(Debug, Clone)]
pub struct MockBackend {
    id: String,
}

impl MockBackend {
    pub fn new(id: impl Into<String>) -> Self {
        MockBackend { id: id.into() }
    }
}

pub fn mock_translate(src: &str) -> String {
    format!("{TRANSLATION_MARK}{src}")
}

pub fn mock_annotate(src: &str, mt: &str) -> String {
    let mut h = Sha256::new();
    h.update(src.as_bytes());
    h.update([0u8]);
    h.update(mt.as_bytes());
    let digest = h.finalize();
    let tokens: Vec<&str> = mt.split_whitespace().collect();
    if digest[0] % 3 == 0 || tokens.is_empty() {
        return format_annotations(&[]);
    }
    let count = 1 + usize::from(digest[1] % 2);
    let mut records: Vec<AnnotationRecord> = Vec::new();
    for j in 0..count {
        let code = &registry()[usize::from(digest[2 + j]) % registry().len()];
        let excerpt = tokens[usize::from(digest[4 + j]) % tokens.len()];
        if records.iter().any(|r| r.excerpt == excerpt) {
            continue;
        }
        records.push(AnnotationRecord::new(
            Code::new(code.code).expect("registry code"),
            excerpt,
            Some(format!("〈{excerpt}〉")),
        ));
    }
    format_annotations(&records)
}

pub fn mock_proofread(mt: &str, errors_line: &str) -> String {
    let mut out = mt.to_string();
    for r in parse_annotations(errors_line).records {
        if let Some(s) = &r.suggestion {
            out = out.replacen(&r.excerpt, s, 1);
        }
    }
    out.split('\n').map(str::trim).filter(|l| !l.is_empty()).collect::<Vec<_>>().join(" ")
}

impl AgentBackend for MockBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn generate(&self, prompt: &str, _params: &GenerationParams) -> Result<Generation, BackendError> {
        let text = match parse_task(prompt) {
            Some(TaskView::Translate { src }) => mock_translate(&src),
            Some(TaskView::Annotate { src, mt }) => mock_annotate(&src, &mt),
            Some(TaskView::Proofread { mt, errors_line, .. }) => mock_proofread(&mt, &errors_line),
            None => return Err(BackendError::Fatal("mock backend: unrecognised prompt".into())),
        };
        Ok(Generation { text, usage: None })
    }
}
