//! Ablation over pipeline configurations.
//!
//! Every configuration runs on its own copy of the memories, so results do
//! not depend on which configurations ran before it or how many ran at once.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::adapter::{MetricAdapter, MetricItem};
use crate::agents::backend::{BackendRegistry, RetryPolicy};
use crate::agents::glossary::Glossary;
use crate::agents::pipeline::{run_tap, utc_now, ManualAnnotations, Memories, RunContext, RunOutput, SourceSegment};
use crate::agents::{PipelineConfig, RolePrompts};
use crate::corpus::ParallelSegment;
use crate::exec::ExecMode;
use crate::memory::{MemoryEntry, SegmentKey, Store};

/// A configuration plus the row its delta is measured against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixEntry {
    #[serde(flatten)]
    pub config: PipelineConfig,
    #[serde(default)]
    pub baseline: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MatrixFile {
    pub configs: Vec<MatrixEntry>,
}

impl MatrixFile {
    pub fn from_toml(text: &str) -> Result<Self, MatrixError> {
        toml::from_str(text).map_err(|e| MatrixError::Parse(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MatrixError {
    #[error("cannot parse matrix file: {0}")]
    Parse(String),
    #[error("configuration name {0:?} is used more than once")]
    DuplicateName(String),
    #[error("configuration {0:?} has no name")]
    Unnamed(usize),
    #[error("{config:?} refers to unknown baseline {baseline:?}")]
    UnknownBaseline { config: String, baseline: String },
    #[error("the test set is empty")]
    EmptyTestSet,
}

/// Shared inputs for a matrix run.
pub struct MatrixEnv<'a> {
    pub backends: &'a BackendRegistry,
    pub role_prompts: &'a RolePrompts,
    pub metrics: Vec<Arc<dyn MetricAdapter>>,
    /// Starting memories; each configuration gets a detached copy.
    pub memories: &'a Memories,
    pub manual_annotations: &'a ManualAnnotations,
    pub glossary: Option<&'a Glossary>,
    pub retry: RetryPolicy,
    pub exec: ExecMode,
    /// Drop test-set documents from the copied memories so references never
    /// leak in as few-shot examples.
    pub exclude_test_documents: bool,
    pub run_prefix: String,
    pub clock: fn() -> String,
}

impl<'a> MatrixEnv<'a> {
    pub fn new(
        backends: &'a BackendRegistry,
        role_prompts: &'a RolePrompts,
        memories: &'a Memories,
        manual_annotations: &'a ManualAnnotations,
        metrics: Vec<Arc<dyn MetricAdapter>>,
    ) -> Self {
        MatrixEnv {
            backends,
            role_prompts,
            metrics,
            memories,
            manual_annotations,
            glossary: None,
            retry: RetryPolicy::default(),
            exec: ExecMode::default(),
            exclude_test_documents: true,
            run_prefix: "matrix".into(),
            clock: utc_now,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricCell {
    pub metric: String,
    pub score: Option<f64>,
    /// Raw difference from the baseline row's score.
    pub delta: Option<f64>,
    pub scored_segments: usize,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MatrixRow {
    pub name: String,
    pub t: String,
    pub a: String,
    pub p: String,
    pub baseline: Option<String>,
    pub failed_segments: Vec<SegmentKey>,
    /// Set when the configuration could not run at all.
    pub error: Option<String>,
    pub cells: Vec<MetricCell>,
    #[serde(skip)]
    pub output: RunOutput,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MatrixReport {
    pub metrics: Vec<String>,
    pub rows: Vec<MatrixRow>,
}

/// One line per (configuration, metric) in the JSONL export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixRecord {
    pub config: String,
    pub t: String,
    pub a: String,
    pub p: String,
    pub metric: String,
    pub score: Option<f64>,
    pub delta: Option<f64>,
    pub baseline: Option<String>,
    pub scored_segments: usize,
    pub failed_segments: usize,
    pub error: Option<String>,
}

fn filtered<E: MemoryEntry>(store: &Store<E>, drop: &BTreeSet<&str>) -> Store<E> {
    let mut out = Store::in_memory();
    for e in store.iter().filter(|e| !drop.contains(e.key().doc_id.as_str())) {
        out.upsert(e.clone()).expect("entries from a valid store stay valid");
    }
    out
}

fn check_entries(entries: &[MatrixEntry]) -> Result<(), MatrixError> {
    let mut names = BTreeSet::new();
    for (i, e) in entries.iter().enumerate() {
        if e.config.name.is_empty() {
            return Err(MatrixError::Unnamed(i));
        }
        if !names.insert(e.config.name.as_str()) {
            return Err(MatrixError::DuplicateName(e.config.name.clone()));
        }
    }
    for e in entries {
        if let Some(b) = &e.baseline {
            if !names.contains(b.as_str()) {
                return Err(MatrixError::UnknownBaseline {
                    config: e.config.name.clone(),
                    baseline: b.clone(),
                });
            }
        }
    }
    Ok(())
}

fn run_one(entry: &MatrixEntry, docs: &[Vec<SourceSegment>], testset: &[ParallelSegment], env: &MatrixEnv<'_>) -> MatrixRow {
    let (t, a, p) = entry.config.shot_columns();
    let mut row = MatrixRow {
        name: entry.config.name.clone(),
        t,
        a,
        p,
        baseline: entry.baseline.clone(),
        failed_segments: Vec::new(),
        error: None,
        cells: Vec::new(),
        output: RunOutput::default(),
    };
    let mut memories = if env.exclude_test_documents {
        let drop: BTreeSet<&str> = testset.iter().map(|s| s.doc_id.as_str()).collect();
        Memories {
            translation: filtered(&env.memories.translation, &drop),
            proofreading: filtered(&env.memories.proofreading, &drop),
        }
    } else {
        env.memories.clone()
    };
    let mut ctx = RunContext::new(
        format!("{}-{}", env.run_prefix, entry.config.name),
        env.backends,
        env.role_prompts,
    );
    ctx.manual_annotations = Some(env.manual_annotations);
    ctx.glossary = env.glossary;
    ctx.retry = env.retry;
    ctx.clock = env.clock;
    for doc in docs {
        match run_tap(doc, &entry.config, &ctx, &mut memories, &mut |_| {}) {
            Ok(out) => {
                row.output.entries.extend(out.entries);
                row.output.log.extend(out.log);
                row.output.usage.extend(out.usage);
                row.output.failed.extend(out.failed);
            }
            Err(e) => {
                row.error = Some(e.to_string());
                break;
            }
        }
    }
    row.failed_segments = row.output.failed.clone();
    if row.error.is_some() {
        row.cells = env
            .metrics
            .iter()
            .map(|m| MetricCell {
                metric: m.id().to_string(),
                score: None,
                delta: None,
                scored_segments: 0,
                error: row.error.clone(),
            })
            .collect();
        return row;
    }

    let finals: BTreeMap<SegmentKey, &str> = row
        .output
        .entries
        .iter()
        .map(|e| (e.key(), e.final_translation.as_str()))
        .collect();
    let items: Vec<MetricItem> = testset
        .iter()
        .filter_map(|s| {
            finals
                .get(&SegmentKey::new(s.doc_id.clone(), s.seg_id))
                .map(|hyp| MetricItem {
                    source: s.source_text.clone(),
                    hypothesis: hyp.to_string(),
                    reference: Some(s.target_text.clone()),
                })
        })
        .collect();
    row.cells = env
        .metrics
        .iter()
        .map(|m| score_cell(m.as_ref(), &items, env.exec))
        .collect();
    row
}

fn score_cell(metric: &dyn MetricAdapter, items: &[MetricItem], exec: ExecMode) -> MetricCell {
    let mut cell = MetricCell {
        metric: metric.id().to_string(),
        score: None,
        delta: None,
        scored_segments: 0,
        error: None,
    };
    if items.is_empty() {
        cell.error = Some("no translated segments".into());
        return cell;
    }
    let mut sum = 0.0;
    for r in metric.score_batch(items, exec) {
        match r {
            Ok(v) if v.is_finite() => {
                sum += v;
                cell.scored_segments += 1;
            }
            Ok(v) => {
                cell.error = Some(format!("non-finite score {v}"));
                return cell;
            }
            Err(e) => {
                cell.error = Some(e.to_string());
                return cell;
            }
        }
    }
    cell.score = Some(sum / cell.scored_segments as f64);
    cell
}

/// Runs every configuration over `testset` and scores the final translations.
///
/// The test set is processed document by document in `(doc_id, seg_id)`
/// order regardless of the order it is given in.
pub fn run_config_matrix(
    entries: &[MatrixEntry],
    testset: &[ParallelSegment],
    env: &MatrixEnv<'_>,
) -> Result<MatrixReport, MatrixError> {
    check_entries(entries)?;
    if testset.is_empty() {
        return Err(MatrixError::EmptyTestSet);
    }
    let mut sorted: Vec<ParallelSegment> = testset.to_vec();
    sorted.sort_by(|a, b| (&a.doc_id, a.seg_id).cmp(&(&b.doc_id, b.seg_id)));
    let mut docs: Vec<Vec<SourceSegment>> = Vec::new();
    for s in &sorted {
        match docs.last_mut() {
            Some(d) if d[0].doc_id == s.doc_id => d.push(SourceSegment::from(s)),
            _ => docs.push(vec![SourceSegment::from(s)]),
        }
    }

    let mut rows = env.exec.map(entries, |e| run_one(e, &docs, &sorted, env));

    let scores: BTreeMap<String, Vec<Option<f64>>> = rows
        .iter()
        .map(|r| (r.name.clone(), r.cells.iter().map(|c| c.score).collect()))
        .collect();
    for row in &mut rows {
        let Some(base) = row.baseline.as_ref().and_then(|b| scores.get(b)) else {
            continue;
        };
        for (cell, b) in row.cells.iter_mut().zip(base) {
            if let (Some(s), Some(b)) = (cell.score, b) {
                cell.delta = Some(s - b);
            }
        }
    }
    Ok(MatrixReport {
        metrics: env.metrics.iter().map(|m| m.id().to_string()).collect(),
        rows,
    })
}

/// Score with its delta, as in `0.7635 (+0.5443)`.
pub fn format_cell(cell: &MetricCell) -> String {
    match (cell.score, cell.delta) {
        (Some(s), Some(d)) => format!("{s:.4} ({d:+.4})"),
        (Some(s), None) => format!("{s:.4}"),
        (None, _) => "error".to_string(),
    }
}

impl MatrixReport {
    pub fn to_table(&self) -> String {
        let mut header = vec!["Config".to_string(), "T".into(), "A".into(), "P".into()];
        header.extend(self.metrics.iter().cloned());
        let mut lines: Vec<Vec<String>> = vec![header];
        for r in &self.rows {
            let mut l = vec![r.name.clone(), r.t.clone(), r.a.clone(), r.p.clone()];
            l.extend(r.cells.iter().map(format_cell));
            lines.push(l);
        }
        let cols = lines[0].len();
        let widths: Vec<usize> = (0..cols)
            .map(|i| lines.iter().map(|l| l[i].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for l in &lines {
            let cells: Vec<String> = l
                .iter()
                .zip(&widths)
                .map(|(c, w)| format!("{c:<w$}", w = *w))
                .collect();
            let _ = writeln!(out, "{}", cells.join("  ").trim_end());
        }
        for r in &self.rows {
            for c in &r.cells {
                if let Some(e) = &c.error {
                    let _ = writeln!(out, "{} / {}: {e}", r.name, c.metric);
                }
            }
        }
        out
    }

    pub fn records(&self) -> Vec<MatrixRecord> {
        self.rows
            .iter()
            .flat_map(|r| {
                r.cells.iter().map(move |c| MatrixRecord {
                    config: r.name.clone(),
                    t: r.t.clone(),
                    a: r.a.clone(),
                    p: r.p.clone(),
                    metric: c.metric.clone(),
                    score: c.score,
                    delta: c.delta,
                    baseline: r.baseline.clone(),
                    scored_segments: c.scored_segments,
                    failed_segments: r.failed_segments.len(),
                    error: c.error.clone(),
                })
            })
            .collect()
    }

    pub fn row(&self, name: &str) -> Option<&MatrixRow> {
        self.rows.iter().find(|r| r.name == name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cell_formatting() {
        let c = MetricCell {
            metric: "m".into(),
            score: Some(0.7635),
            delta: Some(0.5443),
            scored_segments: 1,
            error: None,
        };
        assert_eq!(format_cell(&c), "0.7635 (+0.5443)");
    }

    #[test]
    fn entry_checks() {
        let mut a = MatrixEntry {
            config: PipelineConfig::translator_only("mock", 0),
            baseline: None,
        };
        a.config.name = "MAS 1".into();
        let mut b = a.clone();
        b.config.name = "MAS 2".into();
        b.baseline = Some("MAS 9".into());
        assert!(matches!(check_entries(&[a.clone(), b.clone()]), Err(MatrixError::UnknownBaseline { .. })));
        b.baseline = Some("MAS 1".into());
        assert!(check_entries(&[a.clone(), b]).is_ok());
        assert!(matches!(check_entries(&[a.clone(), a]), Err(MatrixError::DuplicateName(_))));
    }

    #[test]
    fn parses_flattened_entries() {
        let f = MatrixFile::from_toml(
            r#"
[[configs]]
name = "MAS 2"
baseline = "MAS 1"
translator = { backend = "mock", shots = 0 }
proofreader = { backend = "mock", shots = 0 }
"#,
        )
        .unwrap();
        assert_eq!(f.configs[0].baseline.as_deref(), Some("MAS 1"));
        assert_eq!(f.configs[0].config.shot_columns(), ("0".into(), "X".into(), "0".into()));
    }
}
