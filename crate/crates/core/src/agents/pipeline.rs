//! The three-phase Translator → Annotator → Proofreader run over one document.
//!
//! Paragraphs are processed strictly in order. Each finished paragraph is
//! committed to both memories before the next one starts, so later
//! paragraphs can draw it as a few-shot example.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::backend::{BackendRegistry, RetryPolicy};
use super::glossary::{constraint_block, glossary_inject, Glossary};
use super::prompt::{
    build_annotator_prompt, build_proofreader_prompt, build_translator_prompt, LanguageLabels,
};
use super::{AgentRole, AnnotatorSpec, ConfigError, GenerationParams, PipelineConfig, RolePrompts};
use crate::codes::{format_annotations, parse_annotations, parse_strict, AnnotationRecord};
use crate::corpus::{clean_text, ParallelSegment};
use crate::costing::{estimate_tokens, UsageRecord};
use crate::jsonl::{self, JsonlError};
use crate::memory::{
    MemoryEntry, MemoryError, NeighborQuery, Origin, ProofreadingEntry, ProofreadingMemory, SegmentKey,
    TranslationEntry, TranslationMemory,
};

/// A paragraph to translate.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceSegment {
    pub doc_id: String,
    pub seg_id: u32,
    pub source_text: String,
}

impl SourceSegment {
    pub fn key(&self) -> SegmentKey {
        SegmentKey::new(self.doc_id.clone(), self.seg_id)
    }
}

impl From<&ParallelSegment> for SourceSegment {
    fn from(s: &ParallelSegment) -> Self {
        SourceSegment {
            doc_id: s.doc_id.clone(),
            seg_id: s.seg_id,
            source_text: s.source_text.clone(),
        }
    }
}

/// Read/commit access to the two memories used during a run.
pub trait MemoryAccess {
    /// Returns the selected examples and the size of the candidate pool.
    fn translation_examples(&self, query: &NeighborQuery) -> (Vec<TranslationEntry>, usize);
    fn proofreading_examples(&self, query: &NeighborQuery) -> (Vec<ProofreadingEntry>, usize);
    fn proofreading_version(&self, key: &SegmentKey) -> Option<u64>;
    fn commit(&mut self, proofread: ProofreadingEntry, translation: TranslationEntry) -> Result<(), MemoryError>;
}

/// Owned pair of memories.
#[derive(Debug, Clone, Default)]
pub struct Memories {
    pub translation: TranslationMemory,
    pub proofreading: ProofreadingMemory,
}

impl Memories {
    pub fn open(translation: &Path, proofreading: &Path) -> Result<Self, MemoryError> {
        Ok(Memories {
            translation: TranslationMemory::open(translation)?,
            proofreading: ProofreadingMemory::open(proofreading)?,
        })
    }
}

fn pool_size<E: MemoryEntry>(store: &crate::memory::Store<E>, query: &NeighborQuery) -> usize {
    store
        .iter()
        .filter(|e| query.origins.as_ref().is_none_or(|o| o.contains(&e.origin())))
        .filter(|e| !(query.exclude_anchor && e.key() == query.anchor))
        .count()
}

impl MemoryAccess for Memories {
    fn translation_examples(&self, query: &NeighborQuery) -> (Vec<TranslationEntry>, usize) {
        let ex = self.translation.neighbors(query).into_iter().cloned().collect();
        (ex, pool_size(&self.translation, query))
    }

    fn proofreading_examples(&self, query: &NeighborQuery) -> (Vec<ProofreadingEntry>, usize) {
        let ex = self.proofreading.neighbors(query).into_iter().cloned().collect();
        (ex, pool_size(&self.proofreading, query))
    }

    fn proofreading_version(&self, key: &SegmentKey) -> Option<u64> {
        self.proofreading.get(key).map(|e| e.version)
    }

    fn commit(&mut self, proofread: ProofreadingEntry, translation: TranslationEntry) -> Result<(), MemoryError> {
        self.proofreading.upsert(proofread)?;
        self.translation.upsert(translation)?;
        Ok(())
    }
}

/// Human annotations keyed by segment, one canonical line per segment.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ManualAnnotations {
    lines: BTreeMap<SegmentKey, String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ManualAnnotationRecord {
    doc_id: String,
    seg_id: u32,
    annotations: String,
}

impl ManualAnnotations {
    pub fn insert(&mut self, key: SegmentKey, line: impl Into<String>) {
        self.lines.insert(key, line.into());
    }

    pub fn get(&self, key: &SegmentKey) -> Option<&str> {
        self.lines.get(key).map(String::as_str)
    }

    /// Object-per-line file of `{doc_id, seg_id, annotations}` records.
    pub fn load(path: &Path) -> Result<Self, JsonlError> {
        let mut out = ManualAnnotations::default();
        for (_, r) in jsonl::read_records::<ManualAnnotationRecord>(path)? {
            out.insert(SegmentKey::new(r.doc_id, r.seg_id), r.annotations);
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<(), JsonlError> {
        let recs: Vec<_> = self
            .lines
            .iter()
            .map(|(k, v)| ManualAnnotationRecord {
                doc_id: k.doc_id.clone(),
                seg_id: k.seg_id,
                annotations: v.clone(),
            })
            .collect();
        jsonl::write_records(path, &recs)
    }
}

/// Everything a run needs besides the document and the memories.
pub struct RunContext<'a> {
    pub run_id: String,
    pub backends: &'a BackendRegistry,
    pub role_prompts: &'a RolePrompts,
    pub manual_annotations: Option<&'a ManualAnnotations>,
    pub glossary: Option<&'a Glossary>,
    pub retry: RetryPolicy,
    /// Timestamp source; swapped out in tests.
    pub clock: fn() -> String,
}

pub fn utc_now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

impl<'a> RunContext<'a> {
    pub fn new(run_id: impl Into<String>, backends: &'a BackendRegistry, role_prompts: &'a RolePrompts) -> Self {
        RunContext {
            run_id: run_id.into(),
            backends,
            role_prompts,
            manual_annotations: None,
            glossary: None,
            retry: RetryPolicy::default(),
            clock: utc_now,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Translate,
    Annotate,
    Proofread,
    Commit,
    Failed,
}

/// One run-log line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunLogRecord {
    pub run_id: String,
    pub seq: u64,
    pub timestamp: String,
    pub doc_id: String,
    pub seg_id: u32,
    pub phase: Phase,
    #[serde(default)]
    pub backend_id: String,
    #[serde(default)]
    pub prompt: String,
    #[serde(default)]
    pub response: String,
    #[serde(default)]
    pub warnings: Vec<String>,
    /// Few-shot examples offered, in prompt order.
    #[serde(default)]
    pub examples: Vec<SegmentKey>,
    /// Number of memory entries the examples were drawn from.
    #[serde(default)]
    pub pool_size: usize,
    #[serde(default)]
    pub input_tokens: u64,
    #[serde(default)]
    pub output_tokens: u64,
    #[serde(default)]
    pub estimated_tokens: bool,
    #[serde(default)]
    pub attempts: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Default)]
pub struct RunOutput {
    pub entries: Vec<ProofreadingEntry>,
    pub log: Vec<RunLogRecord>,
    pub usage: Vec<UsageRecord>,
    pub failed: Vec<SegmentKey>,
}

/// Per-segment progress notification.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentDone {
    pub key: SegmentKey,
    pub ok: bool,
    pub index: usize,
    pub total: usize,
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("memory write failed: {0}")]
    Memory(#[from] MemoryError),
}

struct SegmentFailure {
    phase: Phase,
    message: String,
}

struct Logger<'c> {
    ctx: &'c RunContext<'c>,
    out: RunOutput,
    seq: u64,
}

impl Logger<'_> {
    fn push(&mut self, seg: &SourceSegment, phase: Phase, fill: impl FnOnce(&mut RunLogRecord)) {
        let mut rec = RunLogRecord {
            run_id: self.ctx.run_id.clone(),
            seq: self.seq,
            timestamp: (self.ctx.clock)(),
            doc_id: seg.doc_id.clone(),
            seg_id: seg.seg_id,
            phase,
            backend_id: String::new(),
            prompt: String::new(),
            response: String::new(),
            warnings: Vec::new(),
            examples: Vec::new(),
            pool_size: 0,
            input_tokens: 0,
            output_tokens: 0,
            estimated_tokens: false,
            attempts: 0,
            error: None,
        };
        fill(&mut rec);
        self.seq += 1;
        self.out.log.push(rec);
    }

    /// Calls a backend with retries and logs the exchange.
    #[allow(clippy::too_many_arguments)]
    fn call(
        &mut self,
        seg: &SourceSegment,
        phase: Phase,
        role: AgentRole,
        backend_id: &str,
        params: &GenerationParams,
        prompt: String,
        examples: Vec<SegmentKey>,
        pool: usize,
    ) -> Result<String, SegmentFailure> {
        let Some(backend) = self.ctx.backends.get(backend_id) else {
            let message = format!("unknown backend {backend_id:?}");
            self.push(seg, phase, |r| {
                r.backend_id = backend_id.to_string();
                r.prompt = prompt;
                r.error = Some(message.clone());
            });
            return Err(SegmentFailure { phase, message });
        };
        let (result, attempts) = self.ctx.retry.call(backend.as_ref(), &prompt, params);
        match result {
            Ok(generation) => {
                let (input_tokens, output_tokens, estimated) = match generation.usage {
                    Some(u) => (u.input_tokens, u.output_tokens, false),
                    None => (estimate_tokens(&prompt), estimate_tokens(&generation.text), true),
                };
                self.out.usage.push(UsageRecord {
                    run_id: self.ctx.run_id.clone(),
                    doc_id: seg.doc_id.clone(),
                    seg_id: seg.seg_id,
                    role,
                    backend_id: backend_id.to_string(),
                    input_tokens,
                    output_tokens,
                    estimated,
                });
                let text = generation.text.clone();
                self.push(seg, phase, |r| {
                    r.backend_id = backend_id.to_string();
                    r.prompt = prompt;
                    r.response = generation.text;
                    r.examples = examples;
                    r.pool_size = pool;
                    r.input_tokens = input_tokens;
                    r.output_tokens = output_tokens;
                    r.estimated_tokens = estimated;
                    r.attempts = attempts;
                });
                Ok(text)
            }
            Err(e) => {
                let message = e.to_string();
                self.push(seg, phase, |r| {
                    r.backend_id = backend_id.to_string();
                    r.prompt = prompt;
                    r.examples = examples;
                    r.pool_size = pool;
                    r.attempts = attempts;
                    r.error = Some(message.clone());
                });
                Err(SegmentFailure { phase, message })
            }
        }
    }
}

fn keys_of<E: MemoryEntry>(entries: &[E]) -> Vec<SegmentKey> {
    entries.iter().map(MemoryEntry::key).collect()
}

fn non_empty_output(phase: Phase, text: &str) -> Result<String, SegmentFailure> {
    let cleaned = clean_text(text);
    if cleaned.is_empty() {
        Err(SegmentFailure {
            phase,
            message: "backend returned an empty text".into(),
        })
    } else {
        Ok(cleaned)
    }
}

/// Runs the configured agents over `doc` in order.
///
/// A backend that still fails after retries marks its segment failed; the
/// run continues with the next segment. Only a memory write failure aborts.
pub fn run_tap(
    doc: &[SourceSegment],
    config: &PipelineConfig,
    ctx: &RunContext<'_>,
    memory: &mut dyn MemoryAccess,
    on_segment: &mut dyn FnMut(&SegmentDone),
) -> Result<RunOutput, RunError> {
    config.validate()?;
    if matches!(config.annotator, Some(AnnotatorSpec::Manual { .. })) && ctx.manual_annotations.is_none() {
        return Err(ConfigError::MissingManualAnnotations.into());
    }
    let labels = LanguageLabels::for_tags(&config.source_lang, &config.target_lang);
    let mut log = Logger {
        ctx,
        out: RunOutput::default(),
        seq: 0,
    };
    let total = doc.len();
    for (index, seg) in doc.iter().enumerate() {
        let result = process_segment(seg, config, ctx, &labels, memory, &mut log);
        let ok = match result {
            Ok((pe, te)) => {
                memory.commit(pe.clone(), te)?;
                log.push(seg, Phase::Commit, |r| {
                    r.response = pe.final_translation.clone();
                });
                log.out.entries.push(pe);
                true
            }
            Err(f) => {
                log.push(seg, Phase::Failed, |r| {
                    r.error = Some(format!("{:?}: {}", f.phase, f.message));
                });
                log.out.failed.push(seg.key());
                false
            }
        };
        on_segment(&SegmentDone {
            key: seg.key(),
            ok,
            index,
            total,
        });
    }
    Ok(log.out)
}

fn process_segment(
    seg: &SourceSegment,
    config: &PipelineConfig,
    ctx: &RunContext<'_>,
    labels: &LanguageLabels,
    memory: &mut dyn MemoryAccess,
    log: &mut Logger<'_>,
) -> Result<(ProofreadingEntry, TranslationEntry), SegmentFailure> {
    let key = seg.key();

    // Phase 1: translation.
    let t = &config.translator;
    let (t_examples, t_pool) = if t.shots > 0 {
        let mut q = NeighborQuery::new(key.clone(), t.shots);
        q.origins = config.translator_example_origins.clone();
        memory.translation_examples(&q)
    } else {
        (Vec::new(), 0)
    };
    let mut role = ctx.role_prompts.translator.trim_end().to_string();
    if config.use_glossary {
        if let Some(block) = ctx.glossary.and_then(|g| constraint_block(&glossary_inject(&seg.source_text, g))) {
            role.push('\n');
            role.push_str(&block);
        }
    }
    let prompt = build_translator_prompt(&seg.source_text, &t_examples, &role, labels);
    let raw = log.call(
        seg,
        Phase::Translate,
        AgentRole::Translator,
        &t.backend,
        &t.params,
        prompt,
        keys_of(&t_examples),
        t_pool,
    )?;
    let mt = non_empty_output(Phase::Translate, &raw)?;

    // Phase 2: annotation.
    let annotations: Vec<AnnotationRecord> = match &config.annotator {
        None => Vec::new(),
        Some(AnnotatorSpec::Llm { backend, params }) => {
            let prompt = build_annotator_prompt(&seg.source_text, &mt, &ctx.role_prompts.annotator).map_err(|e| {
                SegmentFailure {
                    phase: Phase::Annotate,
                    message: e.to_string(),
                }
            })?;
            let raw = log.call(seg, Phase::Annotate, AgentRole::Annotator, backend, params, prompt, Vec::new(), 0)?;
            let parsed = parse_annotations(raw.trim());
            if !parsed.warnings.is_empty() {
                if let Some(last) = log.out.log.last_mut() {
                    last.warnings = parsed.warnings.iter().map(ToString::to_string).collect();
                }
            }
            parsed.records
        }
        Some(AnnotatorSpec::Manual { .. }) => {
            let table = ctx.manual_annotations.expect("checked before the run");
            let (records, warnings) = match table.get(&key) {
                Some(line) => match parse_strict(line) {
                    Some(r) => (r, Vec::new()),
                    None => {
                        let p = parse_annotations(line);
                        (p.records, p.warnings.iter().map(ToString::to_string).collect())
                    }
                },
                None => (Vec::new(), vec![format!("no manual annotations for {key}; using NONE")]),
            };
            let line = format_annotations(&records);
            log.push(seg, Phase::Annotate, |r| {
                r.backend_id = "manual".into();
                r.response = line;
                r.warnings = warnings;
            });
            records
        }
    };

    // Phase 3: proofreading.
    let final_translation = match &config.proofreader {
        None => mt.clone(),
        Some(p) => {
            let (p_examples, p_pool) = if p.shots > 0 {
                memory.proofreading_examples(&NeighborQuery::new(key.clone(), p.shots))
            } else {
                (Vec::new(), 0)
            };
            let errors_line = format_annotations(&annotations);
            let prompt = build_proofreader_prompt(
                &seg.source_text,
                &mt,
                &errors_line,
                &p_examples,
                &ctx.role_prompts.proofreader,
            );
            let raw = log.call(
                seg,
                Phase::Proofread,
                AgentRole::Proofreader,
                &p.backend,
                &p.params,
                prompt,
                keys_of(&p_examples),
                p_pool,
            )?;
            non_empty_output(Phase::Proofread, &raw)?
        }
    };

    let version = memory.proofreading_version(&key).map_or(1, |v| v + 1);
    let pe = ProofreadingEntry {
        doc_id: seg.doc_id.clone(),
        seg_id: seg.seg_id,
        source_text: seg.source_text.clone(),
        machine_translation: mt,
        annotated_errors: annotations,
        final_translation: final_translation.clone(),
        origin: Origin::Pipeline,
        version,
    };
    let te = TranslationEntry {
        doc_id: seg.doc_id.clone(),
        seg_id: seg.seg_id,
        source_text: seg.source_text.clone(),
        target_text: final_translation,
        origin: Origin::Pipeline,
    };
    Ok((pe, te))
}

/// Writes a run log as object-per-line records.
pub fn write_run_log(path: &Path, log: &[RunLogRecord]) -> Result<(), JsonlError> {
    jsonl::write_records(path, log)
}
