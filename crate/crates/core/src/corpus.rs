//! Paragraph-level parallel corpus: record files, cleaning, statistics,
//! rule-driven paragraph segmentation and index alignment.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::io::BufRead;
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::jsonl::{self, JsonlError};

pub const DEFAULT_SOURCE_LANG: &str = "en";
pub const DEFAULT_TARGET_LANG: &str = "zh-HK";

/// One aligned paragraph pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParallelSegment {
    pub doc_id: String,
    pub seg_id: u32,
    pub source_text: String,
    pub target_text: String,
    pub source_lang: String,
    pub target_lang: String,
}

impl ParallelSegment {
    pub fn new(
        doc_id: impl Into<String>,
        seg_id: u32,
        source_text: impl Into<String>,
        target_text: impl Into<String>,
    ) -> Self {
        ParallelSegment {
            doc_id: doc_id.into(),
            seg_id,
            source_text: source_text.into(),
            target_text: target_text.into(),
            source_lang: DEFAULT_SOURCE_LANG.to_string(),
            target_lang: DEFAULT_TARGET_LANG.to_string(),
        }
    }
}

/// On-disk record: exactly the four keys of the published corpus format.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusRecord {
    pub doc_id: String,
    pub seg_id: u32,
    pub en: String,
    #[serde(rename = "zh-HK")]
    pub zh_hk: String,
}

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error(transparent)]
    Record(#[from] JsonlError),
    #[error("duplicate segment ({doc_id}, {seg_id})")]
    Duplicate { doc_id: String, seg_id: u32 },
    #[error("line {line}: segment ({doc_id}, {seg_id}) has an empty {field} after cleaning")]
    EmptyText {
        line: usize,
        doc_id: String,
        seg_id: u32,
        field: &'static str,
    },
    #[error("document {doc_id}: expected seg_id {expected}, found {found} (seg_ids must run 1, 2, 3, ...)")]
    NonContiguous {
        doc_id: String,
        expected: u32,
        found: u32,
    },
    #[error("no year known for document {0}")]
    MissingYear(String),
    #[error("alignment needs non-empty paragraph lists (source {source_len}, target {target_len})")]
    EmptyAlignmentInput { source_len: usize, target_len: usize },
}

/// Removes tabs, carriage returns, empty lines and edge whitespace.
///
/// Runs of spaces and tabs inside a line collapse to one space; surviving
/// lines are joined with `\n`.
pub fn clean_text(raw: &str) -> String {
    let mut lines = Vec::new();
    for line in raw.split(['\n', '\r']) {
        let collapsed = line.split([' ', '\t']).filter(|w| !w.is_empty()).collect::<Vec<_>>().join(" ");
        let trimmed = collapsed.trim();
        if !trimmed.is_empty() {
            lines.push(trimmed.to_string());
        }
    }
    lines.join("\n")
}

pub fn is_clean(text: &str) -> bool {
    !text.is_empty()
        && !text.contains('\t')
        && !text.contains('\r')
        && text.trim() == text
        && text.split('\n').all(|l| !l.trim().is_empty())
}

/// Unicode scalar values; the unit used for every character statistic.
pub fn char_count(text: &str) -> usize {
    text.chars().count()
}

pub fn load_corpus(path: &Path) -> Result<Vec<ParallelSegment>, CorpusError> {
    let records = jsonl::read_records::<CorpusRecord>(path)?;
    segments_from_records(records)
}

pub fn parse_corpus<R: BufRead>(reader: R, label: &str) -> Result<Vec<ParallelSegment>, CorpusError> {
    let records = jsonl::parse_records::<CorpusRecord, _>(reader, label)?;
    segments_from_records(records)
}

fn segments_from_records(records: Vec<(usize, CorpusRecord)>) -> Result<Vec<ParallelSegment>, CorpusError> {
    let mut by_key: BTreeMap<(String, u32), ParallelSegment> = BTreeMap::new();
    for (line, rec) in records {
        let en = clean_text(&rec.en);
        let zh = clean_text(&rec.zh_hk);
        for (field, text) in [("en", &en), ("zh-HK", &zh)] {
            if text.is_empty() {
                return Err(CorpusError::EmptyText {
                    line,
                    doc_id: rec.doc_id.clone(),
                    seg_id: rec.seg_id,
                    field,
                });
            }
        }
        let key = (rec.doc_id.clone(), rec.seg_id);
        if by_key.contains_key(&key) {
            return Err(CorpusError::Duplicate {
                doc_id: rec.doc_id,
                seg_id: rec.seg_id,
            });
        }
        by_key.insert(key, ParallelSegment::new(rec.doc_id, rec.seg_id, en, zh));
    }
    let segments: Vec<_> = by_key.into_values().collect();
    check_contiguous(&segments)?;
    Ok(segments)
}

/// Expects `segments` sorted by (doc_id, seg_id).
fn check_contiguous(segments: &[ParallelSegment]) -> Result<(), CorpusError> {
    let mut current: Option<(&str, u32)> = None;
    for seg in segments {
        let expected = match current {
            Some((doc, last)) if doc == seg.doc_id => last + 1,
            _ => 1,
        };
        if seg.seg_id != expected {
            return Err(CorpusError::NonContiguous {
                doc_id: seg.doc_id.clone(),
                expected,
                found: seg.seg_id,
            });
        }
        current = Some((&seg.doc_id, seg.seg_id));
    }
    Ok(())
}

pub fn to_records(segments: &[ParallelSegment]) -> Vec<CorpusRecord> {
    segments
        .iter()
        .map(|s| CorpusRecord {
            doc_id: s.doc_id.clone(),
            seg_id: s.seg_id,
            en: s.source_text.clone(),
            zh_hk: s.target_text.clone(),
        })
        .collect()
}

pub fn save_corpus(path: &Path, segments: &[ParallelSegment]) -> Result<(), CorpusError> {
    let records = to_records(segments);
    jsonl::write_records(path, &records)?;
    Ok(())
}

/// Distinct document ids in first-seen order.
pub fn document_ids(segments: &[ParallelSegment]) -> Vec<String> {
    let mut seen = BTreeSet::new();
    segments
        .iter()
        .filter(|s| seen.insert(s.doc_id.as_str()))
        .map(|s| s.doc_id.clone())
        .collect()
}

// ---------------------------------------------------------------------------
// Statistics

/// Maps document ids to years: explicit overrides first, then a trailing `/YYYY`.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct YearResolver {
    #[serde(default)]
    pub overrides: BTreeMap<String, i32>,
}

impl YearResolver {
    pub fn year_of(&self, doc_id: &str) -> Option<i32> {
        static TRAILING_YEAR: OnceLock<Regex> = OnceLock::new();
        if let Some(y) = self.overrides.get(doc_id) {
            return Some(*y);
        }
        let re = TRAILING_YEAR.get_or_init(|| Regex::new(r"/\s*(\d{4})\s*$").unwrap());
        re.captures(doc_id).and_then(|c| c[1].parse().ok())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct YearStats {
    pub year: i32,
    pub document_count: usize,
    pub character_count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub document_count: usize,
    pub segment_count: usize,
    pub source_characters: usize,
    pub target_characters: usize,
    /// Both language sides.
    pub total_characters: usize,
    pub per_year: Vec<YearStats>,
}

pub fn corpus_stats<F>(segments: &[ParallelSegment], year_of: F) -> Result<CorpusStats, CorpusError>
where
    F: Fn(&str) -> Option<i32>,
{
    let mut doc_year: HashMap<&str, i32> = HashMap::new();
    let mut per_year: BTreeMap<i32, (BTreeSet<&str>, usize)> = BTreeMap::new();
    let mut source_characters = 0;
    let mut target_characters = 0;
    for seg in segments {
        let year = match doc_year.get(seg.doc_id.as_str()) {
            Some(y) => *y,
            None => {
                let y = year_of(&seg.doc_id).ok_or_else(|| CorpusError::MissingYear(seg.doc_id.clone()))?;
                doc_year.insert(&seg.doc_id, y);
                y
            }
        };
        let src = char_count(&seg.source_text);
        let tgt = char_count(&seg.target_text);
        source_characters += src;
        target_characters += tgt;
        let slot = per_year.entry(year).or_default();
        slot.0.insert(&seg.doc_id);
        slot.1 += src + tgt;
    }
    Ok(CorpusStats {
        document_count: doc_year.len(),
        segment_count: segments.len(),
        source_characters,
        target_characters,
        total_characters: source_characters + target_characters,
        per_year: per_year
            .into_iter()
            .map(|(year, (docs, chars))| YearStats {
                year,
                document_count: docs.len(),
                character_count: chars,
            })
            .collect(),
    })
}

impl CorpusStats {
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<6} {:>10} {:>14}", "year", "documents", "characters");
        for y in &self.per_year {
            let _ = writeln!(out, "{:<6} {:>10} {:>14}", y.year, y.document_count, y.character_count);
        }
        let _ = writeln!(out, "{:<6} {:>10} {:>14}", "total", self.document_count, self.total_characters);
        let _ = writeln!(out);
        let _ = writeln!(out, "segments:          {}", self.segment_count);
        let _ = writeln!(out, "source characters: {}", self.source_characters);
        let _ = writeln!(out, "target characters: {}", self.target_characters);
        let _ = writeln!(out, "(characters are Unicode scalar values; totals cover both sides)");
        out
    }
}

// ---------------------------------------------------------------------------
// Segmentation

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryKind {
    /// A line matching `pattern` (after trimming) ends the current paragraph and is dropped.
    BlankLine,
    /// A matching line starts a new paragraph.
    BreakBefore,
    /// A matching line is a paragraph of its own.
    OwnParagraph,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundaryRule {
    pub name: String,
    pub kind: BoundaryKind,
    /// Regex tested against each trimmed line.
    pub pattern: String,
}

/// Ordered list of paragraph boundary rules; the first matching rule wins per line.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SegmentationRules {
    pub rules: Vec<BoundaryRule>,
}

impl Default for SegmentationRules {
    fn default() -> Self {
        let rule = |name: &str, kind, pattern: &str| BoundaryRule {
            name: name.to_string(),
            kind,
            pattern: pattern.to_string(),
        };
        SegmentationRules {
            rules: vec![
                rule("blank-line", BoundaryKind::BlankLine, r"^$"),
                rule("numbered-paragraph", BoundaryKind::BreakBefore, r"^\d+\.(\s|$)"),
                rule(
                    "section-heading",
                    BoundaryKind::OwnParagraph,
                    r"^(?:[A-Z]\.|[IVX]+\.)\s+\S.{0,60}$|^[A-Z][A-Z ,'()\-]{2,60}$",
                ),
            ],
        }
    }
}

impl SegmentationRules {
    /// Separator that [`segment_text`] always splits on.
    pub const CANONICAL_SEPARATOR: &'static str = "\n\n";

    pub fn from_toml(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    fn compiled(&self) -> Result<Vec<(BoundaryKind, Regex)>, regex::Error> {
        self.rules
            .iter()
            .map(|r| Ok((r.kind, Regex::new(&r.pattern)?)))
            .collect()
    }
}

/// Splits extracted plain text into cleaned paragraphs.
///
/// Blank lines always separate paragraphs; the rule set adds further
/// boundaries. No returned element is empty.
pub fn segment_text(raw: &str, rules: &SegmentationRules) -> Result<Vec<String>, regex::Error> {
    let compiled = rules.compiled()?;
    let mut paras = Vec::new();
    let mut current: Vec<String> = Vec::new();
    let flush = |current: &mut Vec<String>, paras: &mut Vec<String>| {
        if !current.is_empty() {
            let text = clean_text(&current.join("\n"));
            if !text.is_empty() {
                paras.push(text);
            }
            current.clear();
        }
    };
    for line in raw.split('\n') {
        let line = clean_text(line);
        if line.is_empty() {
            flush(&mut current, &mut paras);
            continue;
        }
        match compiled.iter().find(|(_, re)| re.is_match(&line)).map(|(k, _)| *k) {
            Some(BoundaryKind::BlankLine) => flush(&mut current, &mut paras),
            Some(BoundaryKind::BreakBefore) => {
                flush(&mut current, &mut paras);
                current.push(line);
            }
            Some(BoundaryKind::OwnParagraph) => {
                flush(&mut current, &mut paras);
                current.push(line);
                flush(&mut current, &mut paras);
            }
            None => current.push(line),
        }
    }
    flush(&mut current, &mut paras);
    Ok(paras)
}

// ---------------------------------------------------------------------------
// Alignment

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignmentReport {
    pub source_len: usize,
    pub target_len: usize,
    /// Index of the first paragraph pair that looks misaligned.
    pub first_divergence: usize,
    /// Up to one paragraph either side of the divergence, per language.
    pub source_context: Vec<(usize, String)>,
    pub target_context: Vec<(usize, String)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Alignment {
    Paired(Vec<(String, String)>),
    Mismatch(AlignmentReport),
}

fn paragraph_number(text: &str) -> Option<u32> {
    static NUM: OnceLock<Regex> = OnceLock::new();
    let re = NUM.get_or_init(|| Regex::new(r"^(\d+)\.").unwrap());
    re.captures(text).and_then(|c| c[1].parse().ok())
}

/// Pairs paragraphs by index when the counts agree; otherwise reports where
/// the two sides first diverge so the pair can be repaired by hand.
pub fn align_documents(source: &[String], target: &[String]) -> Result<Alignment, CorpusError> {
    if source.is_empty() || target.is_empty() {
        return Err(CorpusError::EmptyAlignmentInput {
            source_len: source.len(),
            target_len: target.len(),
        });
    }
    if source.len() == target.len() {
        return Ok(Alignment::Paired(
            source.iter().cloned().zip(target.iter().cloned()).collect(),
        ));
    }
    let shorter = source.len().min(target.len());
    // Numbered paragraph markers are shared by both language versions; the
    // first disagreement is the best available divergence point.
    let first_divergence = (0..shorter)
        .find(|&i| {
            matches!(
                (paragraph_number(&source[i]), paragraph_number(&target[i])),
                (Some(a), Some(b)) if a != b
            ) || paragraph_number(&source[i]).is_some() != paragraph_number(&target[i]).is_some()
        })
        .unwrap_or(shorter);
    let context = |paras: &[String]| {
        let lo = first_divergence.saturating_sub(1);
        let hi = (first_divergence + 2).min(paras.len());
        (lo..hi).map(|i| (i, paras[i].clone())).collect::<Vec<_>>()
    };
    Ok(Alignment::Mismatch(AlignmentReport {
        source_len: source.len(),
        target_len: target.len(),
        first_divergence,
        source_context: context(source),
        target_context: context(target),
    }))
}
