//! Core engine for human-machine interactive translation of bilingual legal
//! judgments.
//!
//! The crate is organised by concern:
//!
//! * [`corpus`]: paragraph-level parallel corpus loading, cleaning,
//!   segmentation, alignment and statistics.
//! * [`codes`]: the proofreading error-code taxonomy and the one-line
//!   annotation wire format shared by the agents, memories and service.
//! * [`memory`]: file-backed translation and proofreading memories with
//!   physical-neighbour retrieval of few-shot examples.
//! * [`agents`]: prompt builders, backend abstraction and the
//!   Translator / Annotator / Proofreader pipeline.
//! * [`evaluation`]: the ACS human-evaluation score, automated metric
//!   adapters, the configuration matrix harness and blinded eval sheets.
//! * [`costing`]: word and token accounting with exact-decimal cost reports.

pub mod agents;
pub mod codes;
pub mod corpus;
pub mod costing;
pub mod evaluation;
pub mod exec;
pub mod jsonl;
pub mod memory;

pub use agents::{AgentRole, AgentSpec, GenerationParams, PipelineConfig};
pub use codes::{AnnotationRecord, ErrorCategory, ErrorCode};
pub use corpus::ParallelSegment;
pub use memory::{ProofreadingEntry, SegmentKey, TranslationEntry};
