//! File-backed workspace: documents, the two memories, jobs, run logs and usage.
//!
//! Mutations of one document's memory entries go through that document's
//! lock; reads take a shared lock on the memories and see a consistent
//! snapshot.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;
use std::sync::{Arc, Mutex, RwLock};

use hmit_core::agents::backend::{build_registry, BackendError, BackendRegistry};
use hmit_core::agents::glossary::{Glossary, GlossaryError};
use hmit_core::agents::pipeline::{
    run_tap, utc_now, write_run_log, ManualAnnotations, Memories, MemoryAccess, RunContext, RunError, RunOutput,
    SegmentDone, SourceSegment,
};
use hmit_core::agents::{AnnotatorSpec, PipelineConfig, RolePrompts};
use hmit_core::codes::{format_annotations, AnnotationRecord};
use hmit_core::corpus::{load_corpus, segment_text, CorpusError, SegmentationRules};
use hmit_core::costing::{
    count_words, cost_ratio, format_money, human_cost, record_cost, CostError, HumanWork, PricingTable, UsageRecord,
};
use hmit_core::jsonl::{self, JsonlError};
use hmit_core::memory::{
    MemoryEntry, MemoryError, NeighborQuery, Origin, ProofreadingEntry, ProofreadingMemory, SegmentKey, TranslationEntry,
};
use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};

use crate::config::{ConfigFileError, ServiceConfig};

#[derive(Debug, thiserror::Error)]
pub enum WorkspaceError {
    #[error(transparent)]
    Config(#[from] ConfigFileError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error(transparent)]
    File(#[from] JsonlError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Glossary(#[from] GlossaryError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Cost(#[from] CostError),
    #[error(transparent)]
    Run(#[from] RunError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("unknown document {0:?}")]
    UnknownDocument(String),
    #[error("unknown segment {0}")]
    UnknownSegment(SegmentKey),
    #[error("unknown job {0:?}")]
    UnknownJob(String),
    #[error("{0} not found")]
    NotFound(String),
    #[error("segment {key} is at version {actual}, edit was made against {expected}")]
    StaleVersion { key: SegmentKey, expected: u64, actual: u64 },
    #[error("document {0:?} has a run in progress")]
    DocumentBusy(String),
    #[error("invalid request: {0}")]
    Invalid(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> WorkspaceError + '_ {
    move |source| WorkspaceError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobState {
    Queued,
    Running,
    Done,
    Failed,
}

/// `done` counts committed entries, so it always equals what the run has persisted.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobProgress {
    pub done: usize,
    pub failed: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunJob {
    pub job_id: String,
    pub run_id: String,
    pub doc_id: String,
    pub config: PipelineConfig,
    /// First segment to translate; earlier ones are left as they are.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub from_seg: Option<u32>,
    pub state: JobState,
    pub progress: JobProgress,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub created: String,
}

impl RunJob {
    /// States only move forward.
    fn advance(&mut self, to: JobState) {
        debug_assert!(to > self.state, "{:?} -> {:?}", self.state, to);
        if to > self.state {
            self.state = to;
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EditScope {
    #[default]
    Segment,
    ReplaceAllOccurrences,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PostEditSubmission {
    pub doc_id: String,
    #[serde(default)]
    pub scope: EditScope,
    #[serde(default)]
    pub seg_id: Option<u32>,
    /// Version of the segment the editor saw; required for segment scope.
    #[serde(default)]
    pub version: Option<u64>,
    #[serde(default)]
    pub edited_translation: Option<String>,
    /// Replaces the segment's annotations when present.
    #[serde(default)]
    pub editor_annotations: Option<Vec<AnnotationRecord>>,
    #[serde(default)]
    pub find: Option<String>,
    #[serde(default)]
    pub replace: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentView {
    pub doc_id: String,
    pub seg_id: u32,
    pub source_text: String,
    pub machine_translation: Option<String>,
    pub annotations: Vec<AnnotationRecord>,
    /// Canonical one-line form of `annotations`.
    pub annotations_line: String,
    pub final_translation: Option<String>,
    pub origin: Option<Origin>,
    /// 0 until the segment has a proofreading entry.
    pub version: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PostEditResult {
    /// Segment scope: 1. Replace-all: number of occurrences replaced.
    pub changes: usize,
    pub segments: Vec<SegmentView>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocumentSummary {
    pub doc_id: String,
    pub segments: usize,
    pub translated: usize,
    pub post_edited: usize,
    pub running: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub documents: usize,
    pub segments: usize,
    /// Entries actually written; 0 when re-ingesting identical data.
    pub written: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VettingItem {
    pub seg_id: u32,
    pub source_text: String,
    pub final_translation: Option<String>,
    pub annotations: String,
    pub origin: Option<Origin>,
    pub version: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VettingBundle {
    pub doc_id: String,
    pub exported: String,
    pub segments: Vec<VettingItem>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunCost {
    pub run_id: String,
    pub total: String,
}

/// Money fields are exact decimal strings in USD.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostSummary {
    pub source_words: u64,
    pub human_translation: String,
    pub human_editing: String,
    pub api_total: String,
    pub api_per_role: BTreeMap<String, String>,
    pub per_run: Vec<RunCost>,
    /// Human translation cost over API cost; absent when the API cost is zero.
    pub human_to_api_ratio: Option<f64>,
    /// Backends with usage but no price; their calls are left out of the totals.
    pub unpriced_backends: Vec<String>,
}

pub struct Workspace {
    pub config: ServiceConfig,
    pub backends: BackendRegistry,
    pub role_prompts: RolePrompts,
    pub glossary: Option<Glossary>,
    pub manual_annotations: ManualAnnotations,
    pub pricing: PricingTable,
    memories: RwLock<Memories>,
    documents: RwLock<BTreeMap<String, Vec<SourceSegment>>>,
    doc_locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
    running: Mutex<BTreeSet<String>>,
    jobs: RwLock<BTreeMap<String, RunJob>>,
    usage_lock: Mutex<()>,
}

impl std::fmt::Debug for Workspace {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Workspace").field("data_dir", &self.config.data_dir).finish()
    }
}

/// Memory access for a run: short read locks for retrieval, the document
/// lock plus a write lock for each commit.
struct SharedMemories<'a> {
    ws: &'a Workspace,
}

impl MemoryAccess for SharedMemories<'_> {
    fn translation_examples(&self, query: &NeighborQuery) -> (Vec<TranslationEntry>, usize) {
        self.ws.memories.read().unwrap().translation_examples(query)
    }

    fn proofreading_examples(&self, query: &NeighborQuery) -> (Vec<ProofreadingEntry>, usize) {
        self.ws.memories.read().unwrap().proofreading_examples(query)
    }

    fn proofreading_version(&self, key: &SegmentKey) -> Option<u64> {
        self.ws.memories.read().unwrap().proofreading_version(key)
    }

    fn commit(&mut self, proofread: ProofreadingEntry, translation: TranslationEntry) -> Result<(), MemoryError> {
        let lock = self.ws.doc_lock(&proofread.doc_id);
        let _g = lock.lock().unwrap();
        self.ws.memories.write().unwrap().commit(proofread, translation)
    }
}

/// Clears the running flag even if the run panics.
struct RunningGuard<'a> {
    ws: &'a Workspace,
    doc_id: String,
}

impl Drop for RunningGuard<'_> {
    fn drop(&mut self) {
        if let Ok(mut r) = self.ws.running.lock() {
            r.remove(&self.doc_id);
        }
    }
}

fn view(seg: &SourceSegment, entry: Option<&ProofreadingEntry>) -> SegmentView {
    let annotations = entry.map(|e| e.annotated_errors.clone()).unwrap_or_default();
    SegmentView {
        doc_id: seg.doc_id.clone(),
        seg_id: seg.seg_id,
        source_text: seg.source_text.clone(),
        machine_translation: entry.map(|e| e.machine_translation.clone()),
        annotations_line: format_annotations(&annotations),
        annotations,
        final_translation: entry.map(|e| e.final_translation.clone()),
        origin: entry.map(|e| e.origin),
        version: entry.map_or(0, |e| e.version),
    }
}

impl Workspace {
    pub fn open(config: ServiceConfig) -> Result<Self, WorkspaceError> {
        std::fs::create_dir_all(&config.data_dir).map_err(io_err(&config.data_dir))?;
        let backends = if config.backends.is_empty() {
            BackendRegistry::with_mock()
        } else {
            build_registry(&config.backends)?
        };
        let role_prompts = match &config.role_prompts {
            Some(dir) => RolePrompts::from_dir(dir).map_err(io_err(dir))?,
            None => RolePrompts::default(),
        };
        let glossary_path = config.glossary.clone().or_else(|| {
            let p = config.ingested_glossary_path();
            p.exists().then_some(p)
        });
        let glossary = glossary_path
            .map(|p| Glossary::from_csv(hmit_core::agents::glossary::DEFAULT_GLOSSARY_ID, &p))
            .transpose()?;
        let manual_annotations = match &config.manual_annotations {
            Some(p) => ManualAnnotations::load(p)?,
            None => ManualAnnotations::default(),
        };
        let mut pricing = match &config.pricing {
            Some(p) => PricingTable::load(p)?,
            None => PricingTable::default(),
        };
        if let Some(r) = &config.human_rates {
            pricing.per_word_human_translation = r.translation;
            pricing.per_word_human_editing = r.editing;
        }
        let memories = Memories::open(&config.translation_memory_path(), &config.proofreading_memory_path())?;
        let mut documents: BTreeMap<String, Vec<SourceSegment>> = BTreeMap::new();
        let doc_path = config.documents_path();
        if doc_path.exists() {
            for (_, s) in jsonl::read_records::<SourceSegment>(&doc_path)? {
                documents.entry(s.doc_id.clone()).or_default().push(s);
            }
        }
        Ok(Workspace {
            config,
            backends,
            role_prompts,
            glossary,
            manual_annotations,
            pricing,
            memories: RwLock::new(memories),
            documents: RwLock::new(documents),
            doc_locks: Mutex::new(HashMap::new()),
            running: Mutex::new(BTreeSet::new()),
            jobs: RwLock::new(BTreeMap::new()),
            usage_lock: Mutex::new(()),
        })
    }

    fn doc_lock(&self, doc_id: &str) -> Arc<Mutex<()>> {
        self.doc_locks
            .lock()
            .unwrap()
            .entry(doc_id.to_string())
            .or_default()
            .clone()
    }

    /// Detached copy of both memories.
    pub fn memories_snapshot(&self) -> Memories {
        self.memories.read().unwrap().clone()
    }

    // ---- ingest ----

    /// Seeds translation memory with corpus pairs (origin `corpus`).
    pub fn ingest_corpus(&self, path: &Path) -> Result<IngestReport, WorkspaceError> {
        let segs = load_corpus(path)?;
        let docs: BTreeSet<&str> = segs.iter().map(|s| s.doc_id.as_str()).collect();
        let mut mem = self.memories.write().unwrap();
        let written = mem.translation.seed_from_corpus(&segs)?;
        Ok(IngestReport {
            documents: docs.len(),
            segments: segs.len(),
            written,
        })
    }

    /// Registers documents to translate from a corpus-format file (source side only).
    pub fn ingest_documents(&self, path: &Path) -> Result<IngestReport, WorkspaceError> {
        let segs: Vec<SourceSegment> = load_corpus(path)?.iter().map(SourceSegment::from).collect();
        self.add_documents(segs)
    }

    /// Segments a plain-text judgment into paragraphs and registers it.
    pub fn ingest_text(&self, doc_id: &str, path: &Path, rules: &SegmentationRules) -> Result<IngestReport, WorkspaceError> {
        let raw = std::fs::read_to_string(path).map_err(io_err(path))?;
        let paras = segment_text(&raw, rules).map_err(|e| WorkspaceError::Invalid(e.to_string()))?;
        if paras.is_empty() {
            return Err(WorkspaceError::Invalid(format!("{} has no paragraphs", path.display())));
        }
        let segs = paras
            .into_iter()
            .enumerate()
            .map(|(i, p)| SourceSegment {
                doc_id: doc_id.to_string(),
                seg_id: i as u32 + 1,
                source_text: p,
            })
            .collect();
        self.add_documents(segs)
    }

    fn add_documents(&self, segs: Vec<SourceSegment>) -> Result<IngestReport, WorkspaceError> {
        let mut incoming: BTreeMap<String, Vec<SourceSegment>> = BTreeMap::new();
        for s in segs {
            if s.source_text.trim().is_empty() {
                return Err(WorkspaceError::Invalid(format!("empty source text at {}", s.key())));
            }
            incoming.entry(s.doc_id.clone()).or_default().push(s);
        }
        for v in incoming.values_mut() {
            v.sort_by_key(|s| s.seg_id);
        }
        let report_docs = incoming.len();
        let report_segs = incoming.values().map(Vec::len).sum();
        let mut docs = self.documents.write().unwrap();
        let mut next = docs.clone();
        let mut written = 0;
        for (id, segs) in incoming {
            if next.get(&id) != Some(&segs) {
                written += segs.len();
                next.insert(id, segs);
            }
        }
        if written > 0 {
            jsonl::write_records(&self.config.documents_path(), next.values().flatten())?;
            *docs = next;
        }
        Ok(IngestReport {
            documents: report_docs,
            segments: report_segs,
            written,
        })
    }

    /// Loads an exported proofreading memory; identical entries are skipped.
    pub fn ingest_proofreading(&self, path: &Path) -> Result<IngestReport, WorkspaceError> {
        let imported = ProofreadingMemory::import(path)?;
        let docs = imported.doc_ids().len();
        let segments = imported.len();
        let mut mem = self.memories.write().unwrap();
        let mut written = 0;
        for e in imported.iter() {
            if mem.proofreading.get(&e.key()) != Some(e) {
                mem.proofreading.upsert(e.clone())?;
                written += 1;
            }
        }
        Ok(IngestReport {
            documents: docs,
            segments,
            written,
        })
    }

    /// Validates a glossary CSV and copies it into the data directory.
    pub fn ingest_glossary(&self, path: &Path) -> Result<usize, WorkspaceError> {
        let g = Glossary::from_csv(hmit_core::agents::glossary::DEFAULT_GLOSSARY_ID, path)?;
        let dest = self.config.ingested_glossary_path();
        let same = std::fs::read(&dest).ok() == Some(std::fs::read(path).map_err(io_err(path))?);
        if !same {
            std::fs::copy(path, &dest).map_err(io_err(&dest))?;
        }
        Ok(g.len())
    }

    // ---- reads ----

    pub fn documents(&self) -> Vec<DocumentSummary> {
        let docs = self.documents.read().unwrap();
        let mem = self.memories.read().unwrap();
        let running = self.running.lock().unwrap().clone();
        docs.iter()
            .map(|(id, segs)| {
                let entries: Vec<&ProofreadingEntry> = mem.proofreading.for_doc(id).collect();
                DocumentSummary {
                    doc_id: id.clone(),
                    segments: segs.len(),
                    translated: entries.len(),
                    post_edited: entries.iter().filter(|e| e.origin == Origin::PostEdit).count(),
                    running: running.contains(id),
                }
            })
            .collect()
    }

    pub fn document_sources(&self, doc_id: &str) -> Result<Vec<SourceSegment>, WorkspaceError> {
        self.documents
            .read()
            .unwrap()
            .get(doc_id)
            .cloned()
            .ok_or_else(|| WorkspaceError::UnknownDocument(doc_id.into()))
    }

    pub fn segments(&self, doc_id: &str) -> Result<Vec<SegmentView>, WorkspaceError> {
        let docs = self.documents.read().unwrap();
        let segs = docs.get(doc_id).ok_or_else(|| WorkspaceError::UnknownDocument(doc_id.into()))?;
        let mem = self.memories.read().unwrap();
        Ok(segs.iter().map(|s| view(s, mem.proofreading.get(&s.key()))).collect())
    }

    pub fn segment(&self, doc_id: &str, seg_id: u32) -> Result<SegmentView, WorkspaceError> {
        let docs = self.documents.read().unwrap();
        let segs = docs.get(doc_id).ok_or_else(|| WorkspaceError::UnknownDocument(doc_id.into()))?;
        let seg = segs
            .iter()
            .find(|s| s.seg_id == seg_id)
            .ok_or_else(|| WorkspaceError::UnknownSegment(SegmentKey::new(doc_id, seg_id)))?;
        let mem = self.memories.read().unwrap();
        Ok(view(seg, mem.proofreading.get(&seg.key())))
    }

    pub fn translation_entry(&self, key: &SegmentKey) -> Option<TranslationEntry> {
        self.memories.read().unwrap().translation.get(key).cloned()
    }

    pub fn vetting_bundle(&self, doc_id: &str) -> Result<VettingBundle, WorkspaceError> {
        let segments = self
            .segments(doc_id)?
            .into_iter()
            .map(|v| VettingItem {
                seg_id: v.seg_id,
                source_text: v.source_text,
                final_translation: v.final_translation,
                annotations: v.annotations_line,
                origin: v.origin,
                version: v.version,
            })
            .collect();
        Ok(VettingBundle {
            doc_id: doc_id.to_string(),
            exported: utc_now(),
            segments,
        })
    }

    // ---- jobs ----

    /// Validates and queues a run; the document stays locked for edits until
    /// [`Workspace::execute_job`] finishes.
    pub fn submit_job(
        &self,
        doc_id: &str,
        config: PipelineConfig,
        run_id: Option<String>,
        from_seg: Option<u32>,
    ) -> Result<RunJob, WorkspaceError> {
        config.validate().map_err(|e| WorkspaceError::Invalid(e.to_string()))?;
        for (role, backend) in config.backend_ids() {
            if !self.backends.contains(backend) {
                return Err(WorkspaceError::Invalid(format!("{role} backend {backend:?} is not configured")));
            }
        }
        if matches!(config.annotator, Some(AnnotatorSpec::Manual { annotations: Some(_) })) {
            return Err(WorkspaceError::Invalid(
                "manual annotations are set in the service config, not per run".into(),
            ));
        }
        let total = self
            .document_sources(doc_id)?
            .iter()
            .filter(|s| from_seg.is_none_or(|f| s.seg_id >= f))
            .count();
        if total == 0 {
            return Err(WorkspaceError::Invalid(format!("no segments of {doc_id:?} from {from_seg:?}")));
        }
        if !self.running.lock().unwrap().insert(doc_id.to_string()) {
            return Err(WorkspaceError::DocumentBusy(doc_id.into()));
        }
        let job_id = uuid::Uuid::new_v4().simple().to_string();
        let job = RunJob {
            run_id: run_id.unwrap_or_else(|| format!("run-{job_id}")),
            job_id: job_id.clone(),
            doc_id: doc_id.to_string(),
            config,
            from_seg,
            state: JobState::Queued,
            progress: JobProgress {
                total,
                ..JobProgress::default()
            },
            error: None,
            created: utc_now(),
        };
        self.jobs.write().unwrap().insert(job_id, job.clone());
        Ok(job)
    }

    pub fn job(&self, job_id: &str) -> Result<RunJob, WorkspaceError> {
        self.jobs
            .read()
            .unwrap()
            .get(job_id)
            .cloned()
            .ok_or_else(|| WorkspaceError::UnknownJob(job_id.into()))
    }

    pub fn jobs(&self) -> Vec<RunJob> {
        self.jobs.read().unwrap().values().cloned().collect()
    }

    fn update_job(&self, job_id: &str, f: impl FnOnce(&mut RunJob)) {
        if let Some(j) = self.jobs.write().unwrap().get_mut(job_id) {
            f(j);
        }
    }

    /// Runs a queued job to completion on the calling thread.
    pub fn execute_job(
        &self,
        job_id: &str,
        on_segment: &mut dyn FnMut(&SegmentDone),
    ) -> Result<RunOutput, WorkspaceError> {
        let job = self.job(job_id)?;
        if job.state != JobState::Queued {
            return Err(WorkspaceError::Invalid(format!("job {job_id} is not queued")));
        }
        let _guard = RunningGuard {
            ws: self,
            doc_id: job.doc_id.clone(),
        };
        self.update_job(job_id, |j| j.advance(JobState::Running));
        let result = self.run_job(&job, on_segment);
        match &result {
            Ok(out) => self.update_job(job_id, |j| {
                j.advance(JobState::Done);
                if !out.failed.is_empty() {
                    j.error = Some(format!("{} segment(s) failed", out.failed.len()));
                }
            }),
            Err(e) => {
                let msg = e.to_string();
                self.update_job(job_id, |j| {
                    j.advance(JobState::Failed);
                    j.error = Some(msg);
                })
            }
        }
        result
    }

    fn run_job(&self, job: &RunJob, on_segment: &mut dyn FnMut(&SegmentDone)) -> Result<RunOutput, WorkspaceError> {
        let mut doc = self.document_sources(&job.doc_id)?;
        if let Some(f) = job.from_seg {
            doc.retain(|s| s.seg_id >= f);
        }
        let mut ctx = RunContext::new(job.run_id.clone(), &self.backends, &self.role_prompts);
        ctx.manual_annotations = Some(&self.manual_annotations);
        ctx.glossary = self.glossary.as_ref();
        let mut mem = SharedMemories { ws: self };
        let out = run_tap(&doc, &job.config, &ctx, &mut mem, &mut |d| {
            self.update_job(&job.job_id, |j| {
                if d.ok {
                    j.progress.done += 1;
                } else {
                    j.progress.failed += 1;
                }
            });
            on_segment(d);
        })?;
        write_run_log(&self.config.run_log_path(&job.run_id), &out.log)?;
        self.append_usage(&out.usage)?;
        Ok(out)
    }

    fn append_usage(&self, usage: &[UsageRecord]) -> Result<(), WorkspaceError> {
        let _g = self.usage_lock.lock().unwrap();
        let path = self.config.usage_path();
        for r in usage {
            jsonl::append_record(&path, r)?;
        }
        Ok(())
    }

    pub fn run_log(&self, run_id: &str) -> Result<String, WorkspaceError> {
        let p = self.config.run_log_path(run_id);
        if !p.exists() {
            return Err(WorkspaceError::NotFound(format!("run log {run_id:?}")));
        }
        std::fs::read_to_string(&p).map_err(io_err(&p))
    }

    // ---- post-editing ----

    pub fn post_edit(&self, sub: &PostEditSubmission) -> Result<PostEditResult, WorkspaceError> {
        let sources = self.document_sources(&sub.doc_id)?;
        match sub.scope {
            EditScope::Segment => self.edit_segment(sub, &sources),
            EditScope::ReplaceAllOccurrences => self.replace_all(sub, &sources),
        }
    }

    fn edit_segment(&self, sub: &PostEditSubmission, sources: &[SourceSegment]) -> Result<PostEditResult, WorkspaceError> {
        let seg_id = sub.seg_id.ok_or_else(|| WorkspaceError::Invalid("seg_id is required".into()))?;
        let text = sub
            .edited_translation
            .as_deref()
            .filter(|t| !t.trim().is_empty())
            .ok_or_else(|| WorkspaceError::Invalid("edited_translation must be non-empty".into()))?;
        let seen = sub
            .version
            .ok_or_else(|| WorkspaceError::Invalid("version is required for segment edits".into()))?;
        if sub.find.is_some() || sub.replace.is_some() {
            return Err(WorkspaceError::Invalid("find/replace only apply to replace-all".into()));
        }
        if let Some(a) = &sub.editor_annotations {
            if a.iter().any(|r| r.excerpt.is_empty()) {
                return Err(WorkspaceError::Invalid("annotation with empty excerpt".into()));
            }
        }
        let key = SegmentKey::new(sub.doc_id.clone(), seg_id);
        let src = sources
            .iter()
            .find(|s| s.seg_id == seg_id)
            .ok_or_else(|| WorkspaceError::UnknownSegment(key.clone()))?;

        let lock = self.doc_lock(&sub.doc_id);
        let _g = lock.lock().unwrap();
        if self.running.lock().unwrap().contains(&sub.doc_id) {
            return Err(WorkspaceError::DocumentBusy(sub.doc_id.clone()));
        }
        let mut mem = self.memories.write().unwrap();
        let current = mem.proofreading.get(&key).cloned();
        let actual = current.as_ref().map_or(0, |e| e.version);
        if seen != actual {
            return Err(WorkspaceError::StaleVersion {
                key,
                expected: seen,
                actual,
            });
        }
        let entry = ProofreadingEntry {
            doc_id: sub.doc_id.clone(),
            seg_id,
            source_text: src.source_text.clone(),
            machine_translation: current.as_ref().map(|e| e.machine_translation.clone()).unwrap_or_default(),
            annotated_errors: sub
                .editor_annotations
                .clone()
                .or_else(|| current.as_ref().map(|e| e.annotated_errors.clone()))
                .unwrap_or_default(),
            final_translation: text.to_string(),
            origin: Origin::PostEdit,
            version: actual + 1,
        };
        let te = TranslationEntry {
            doc_id: sub.doc_id.clone(),
            seg_id,
            source_text: src.source_text.clone(),
            target_text: text.to_string(),
            origin: Origin::PostEdit,
        };
        mem.commit(entry.clone(), te)?;
        Ok(PostEditResult {
            changes: 1,
            segments: vec![view(src, Some(&entry))],
        })
    }

    fn replace_all(&self, sub: &PostEditSubmission, sources: &[SourceSegment]) -> Result<PostEditResult, WorkspaceError> {
        let find = sub
            .find
            .as_deref()
            .filter(|f| !f.is_empty())
            .ok_or_else(|| WorkspaceError::Invalid("find must be non-empty".into()))?;
        let replace = sub.replace.as_deref().unwrap_or("");
        if sub.edited_translation.is_some() || sub.editor_annotations.is_some() {
            return Err(WorkspaceError::Invalid("replace-all takes only find and replace".into()));
        }
        let lock = self.doc_lock(&sub.doc_id);
        let _g = lock.lock().unwrap();
        if self.running.lock().unwrap().contains(&sub.doc_id) {
            return Err(WorkspaceError::DocumentBusy(sub.doc_id.clone()));
        }
        let mut mem = self.memories.write().unwrap();
        let mut updates = Vec::new();
        let mut changes = 0;
        for src in sources {
            let Some(e) = mem.proofreading.get(&src.key()) else { continue };
            if let Some(seg) = sub.seg_id {
                if seg != src.seg_id {
                    continue;
                }
            }
            let n = e.final_translation.matches(find).count();
            if n == 0 {
                continue;
            }
            let text = e.final_translation.replace(find, replace);
            if text.trim().is_empty() {
                return Err(WorkspaceError::Invalid(format!("replacement empties segment {}", src.seg_id)));
            }
            changes += n;
            let mut next = e.clone();
            next.final_translation = text;
            next.origin = Origin::PostEdit;
            next.version += 1;
            updates.push((src, next));
        }
        let mut views = Vec::new();
        for (src, entry) in updates {
            let te = TranslationEntry {
                doc_id: entry.doc_id.clone(),
                seg_id: entry.seg_id,
                source_text: src.source_text.clone(),
                target_text: entry.final_translation.clone(),
                origin: Origin::PostEdit,
            };
            mem.commit(entry.clone(), te)?;
            views.push(view(src, Some(&entry)));
        }
        Ok(PostEditResult {
            changes,
            segments: views,
        })
    }

    // ---- costs ----

    pub fn usage(&self) -> Result<Vec<UsageRecord>, WorkspaceError> {
        let p = self.config.usage_path();
        if !p.exists() {
            return Ok(Vec::new());
        }
        Ok(jsonl::read_records(&p)?.into_iter().map(|(_, r)| r).collect())
    }

    /// Human cost of all registered documents (or those a run touched) against recorded API usage.
    pub fn cost_summary(&self, run_id: Option<&str>) -> Result<CostSummary, WorkspaceError> {
        let usage: Vec<UsageRecord> = self
            .usage()?
            .into_iter()
            .filter(|r| run_id.is_none_or(|id| r.run_id == id))
            .collect();
        if let Some(id) = run_id {
            if usage.is_empty() {
                return Err(WorkspaceError::NotFound(format!("usage for run {id:?}")));
            }
        }
        let docs = self.documents.read().unwrap();
        let in_scope: BTreeSet<&str> = usage.iter().map(|r| r.doc_id.as_str()).collect();
        let source_words: u64 = docs
            .iter()
            .filter(|(id, _)| run_id.is_none() || in_scope.contains(id.as_str()))
            .flat_map(|(_, segs)| segs)
            .map(|s| count_words(&s.source_text, "en") as u64)
            .sum();
        let mut total = Decimal::ZERO;
        let mut per_role: BTreeMap<String, Decimal> = BTreeMap::new();
        let mut per_run: BTreeMap<String, Decimal> = BTreeMap::new();
        let mut unpriced = BTreeSet::new();
        for r in &usage {
            match record_cost(r, &self.pricing) {
                Ok(c) => {
                    total += c;
                    *per_role.entry(r.role.to_string()).or_default() += c;
                    *per_run.entry(r.run_id.clone()).or_default() += c;
                }
                Err(CostError::Unpriced(b)) => {
                    unpriced.insert(b);
                }
                Err(e) => return Err(e.into()),
            }
        }
        let human = human_cost(source_words, &self.pricing, HumanWork::Translation);
        Ok(CostSummary {
            source_words,
            human_translation: format_money(human),
            human_editing: format_money(human_cost(source_words, &self.pricing, HumanWork::Editing)),
            api_total: total.normalize().to_string(),
            api_per_role: per_role.into_iter().map(|(k, v)| (k, v.normalize().to_string())).collect(),
            per_run: per_run
                .into_iter()
                .map(|(run_id, t)| RunCost {
                    run_id,
                    total: t.normalize().to_string(),
                })
                .collect(),
            human_to_api_ratio: cost_ratio(human, total).ok(),
            unpriced_backends: unpriced.into_iter().collect(),
        })
    }

    // ---- evaluation ----

    /// The blinded sheet as CSV; the mapping is never returned here.
    pub fn eval_sheet_csv(&self) -> Result<String, WorkspaceError> {
        let p = self.config.eval_sheet_path();
        if !p.exists() {
            return Err(WorkspaceError::NotFound("eval sheet".into()));
        }
        std::fs::read_to_string(&p).map_err(io_err(&p))
    }
}
