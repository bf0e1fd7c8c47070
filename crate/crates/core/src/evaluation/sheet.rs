//! Blind human evaluation sheets and their scoring.
//!
//! A sheet samples segments, splits every system's translation into
//! sentences and shuffles the rows under random system labels. The label
//! mapping is written to a separate file that evaluators never see.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::{BufRead, Read, Write};

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::acs::{compute_acs, AcsError, AcsScore, AcsWeights};
use super::percent_delta;
use crate::corpus::ParallelSegment;
use crate::memory::SegmentKey;

pub trait SentenceSplitter: Send + Sync {
    fn split(&self, text: &str) -> Vec<String>;
}

/// Splits on CJK terminal punctuation anywhere, on `. ! ?` followed by a
/// space unless the word before is a known abbreviation, and on line breaks.
#[derive(Debug, Clone)]
pub struct RuleSentenceSplitter {
    pub abbreviations: BTreeSet<String>,
}

const ABBREVIATIONS: &[&str] = &[
    "No", "Nos", "Mr", "Mrs", "Ms", "Dr", "v", "vs", "s", "ss", "para", "paras", "e.g", "i.e", "cf", "Cap", "St",
    "Co", "Ltd", "Inc", "J", "JA", "CJ", "PJ", "NPJ", "VP", "Art", "art", "p", "pp", "Sch", "ch",
];

impl Default for RuleSentenceSplitter {
    fn default() -> Self {
        RuleSentenceSplitter {
            abbreviations: ABBREVIATIONS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

fn is_closer(c: char) -> bool {
    matches!(c, '」' | '』' | '）' | ')' | '"' | '”' | '’' | '\'')
}

impl SentenceSplitter for RuleSentenceSplitter {
    fn split(&self, text: &str) -> Vec<String> {
        let chars: Vec<char> = text.chars().collect();
        let mut out = Vec::new();
        let mut cur = String::new();
        let mut i = 0;
        let flush = |cur: &mut String, out: &mut Vec<String>| {
            let t = cur.trim();
            if !t.is_empty() {
                out.push(t.to_string());
            }
            cur.clear();
        };
        while i < chars.len() {
            let c = chars[i];
            if c == '\n' {
                flush(&mut cur, &mut out);
                i += 1;
                continue;
            }
            cur.push(c);
            i += 1;
            let cjk_end = matches!(c, '。' | '！' | '？' | '；');
            let latin_end = matches!(c, '.' | '!' | '?');
            if !cjk_end && !latin_end {
                continue;
            }
            while i < chars.len() && is_closer(chars[i]) {
                cur.push(chars[i]);
                i += 1;
            }
            if cjk_end {
                flush(&mut cur, &mut out);
                continue;
            }
            // Latin: need whitespace next, and not an abbreviation or a bare number.
            if i < chars.len() && !chars[i].is_whitespace() {
                continue;
            }
            if c == '.' {
                let body = cur.trim_end_matches(|ch: char| is_closer(ch)).trim_end_matches('.');
                let word = body.rsplit(|ch: char| ch.is_whitespace() || ch == '(').next().unwrap_or("");
                // A bare number opening the sentence is a list or paragraph marker.
                let marker = body.trim() == word && word.chars().all(|ch| ch.is_ascii_digit());
                if self.abbreviations.contains(word) || marker {
                    continue;
                }
            }
            flush(&mut cur, &mut out);
        }
        flush(&mut cur, &mut out);
        out
    }
}

/// Final translations produced by one system, keyed by segment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SystemOutput {
    pub system_id: String,
    pub translations: BTreeMap<SegmentKey, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSheetRow {
    pub segment_no: u32,
    pub sentence_no: u32,
    pub source: String,
    pub blinded_id: String,
    pub translation: String,
    #[serde(rename = "A")]
    pub a: Option<f64>,
    #[serde(rename = "C")]
    pub c: Option<f64>,
    #[serde(rename = "S")]
    pub s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlindLabel {
    pub blinded_id: String,
    pub system_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampledSegment {
    pub segment_no: u32,
    pub doc_id: String,
    pub seg_id: u32,
}

/// Kept apart from the sheet; never shown to evaluators.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SheetMapping {
    pub systems: Vec<BlindLabel>,
}

impl SheetMapping {
    pub fn system_of(&self, blinded_id: &str) -> Option<&str> {
        self.systems
            .iter()
            .find(|l| l.blinded_id == blinded_id)
            .map(|l| l.system_id.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSheet {
    pub seed: u64,
    pub rows: Vec<EvalSheetRow>,
    pub mapping: SheetMapping,
    /// Which corpus segment each `segment_no` stands for.
    pub segments: Vec<SampledSegment>,
}

#[derive(Debug, thiserror::Error)]
pub enum SheetError {
    #[error("no systems to evaluate")]
    NoSystems,
    #[error("duplicate system id {0:?}")]
    DuplicateSystem(String),
    #[error("asked for {requested} segments but only {available} are translated by every system")]
    NotEnoughSegments { requested: usize, available: usize },
    #[error("segment {key} of system {system:?} has no sentences")]
    EmptyTranslation { system: String, key: SegmentKey },
    #[error("row {row}: unknown blinded id {blinded_id:?}")]
    UnknownBlindedId { row: usize, blinded_id: String },
    #[error("row {row} (segment {segment_no}, sentence {sentence_no}) is missing its {dimension} score")]
    Unscored {
        row: usize,
        segment_no: u32,
        sentence_no: u32,
        dimension: char,
    },
    #[error("baseline system {0:?} is not in the sheet")]
    UnknownBaseline(String),
    #[error(transparent)]
    Acs(#[from] AcsError),
    #[error("sheet CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("mapping file: {0}")]
    Mapping(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn blinded_label(rng: &mut ChaCha8Rng, taken: &BTreeSet<String>) -> String {
    loop {
        let id = format!("S{:06X}", rng.random_range(0..0x100_0000u32));
        if !taken.contains(&id) {
            return id;
        }
    }
}

/// Samples `sample` segments translated by every system and lays them out
/// as a shuffled sentence-level sheet. The same seed gives the same sheet.
///
/// When a translation and its source split into the same number of
/// sentences, each row shows the matching source sentence; otherwise every
/// row shows the whole source paragraph.
pub fn make_eval_sheet(
    segments: &[ParallelSegment],
    systems: &[SystemOutput],
    sample: usize,
    splitter: &dyn SentenceSplitter,
    seed: u64,
) -> Result<EvalSheet, SheetError> {
    if systems.is_empty() {
        return Err(SheetError::NoSystems);
    }
    let mut seen = BTreeSet::new();
    for s in systems {
        if !seen.insert(s.system_id.as_str()) {
            return Err(SheetError::DuplicateSystem(s.system_id.clone()));
        }
    }
    let mut pool: Vec<&ParallelSegment> = segments
        .iter()
        .filter(|seg| {
            let key = SegmentKey::new(seg.doc_id.clone(), seg.seg_id);
            systems.iter().all(|s| s.translations.contains_key(&key))
        })
        .collect();
    pool.sort_by(|a, b| (&a.doc_id, a.seg_id).cmp(&(&b.doc_id, b.seg_id)));
    pool.dedup_by(|a, b| a.doc_id == b.doc_id && a.seg_id == b.seg_id);
    if sample == 0 || sample > pool.len() {
        return Err(SheetError::NotEnoughSegments {
            requested: sample,
            available: pool.len(),
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = index::sample(&mut rng, pool.len(), sample).into_vec();
    picked.sort_unstable();

    let mut taken = BTreeSet::new();
    let labels: Vec<BlindLabel> = systems
        .iter()
        .map(|s| {
            let id = blinded_label(&mut rng, &taken);
            taken.insert(id.clone());
            BlindLabel {
                blinded_id: id,
                system_id: s.system_id.clone(),
            }
        })
        .collect();

    let mut rows = Vec::new();
    let mut sampled = Vec::new();
    for (n, &i) in picked.iter().enumerate() {
        let seg = pool[i];
        let segment_no = n as u32 + 1;
        let key = SegmentKey::new(seg.doc_id.clone(), seg.seg_id);
        sampled.push(SampledSegment {
            segment_no,
            doc_id: seg.doc_id.clone(),
            seg_id: seg.seg_id,
        });
        let src_sents = splitter.split(&seg.source_text);
        for (sys, label) in systems.iter().zip(&labels) {
            let tr_sents = splitter.split(&sys.translations[&key]);
            if tr_sents.is_empty() {
                return Err(SheetError::EmptyTranslation {
                    system: sys.system_id.clone(),
                    key,
                });
            }
            let paired = src_sents.len() == tr_sents.len();
            for (j, t) in tr_sents.into_iter().enumerate() {
                rows.push(EvalSheetRow {
                    segment_no,
                    sentence_no: j as u32 + 1,
                    source: if paired { src_sents[j].clone() } else { seg.source_text.clone() },
                    blinded_id: label.blinded_id.clone(),
                    translation: t,
                    a: None,
                    c: None,
                    s: None,
                });
            }
        }
    }
    rows.shuffle(&mut rng);

    let mut systems_sorted = labels;
    systems_sorted.sort_by(|a, b| a.blinded_id.cmp(&b.blinded_id));
    Ok(EvalSheet {
        seed,
        rows,
        mapping: SheetMapping { systems: systems_sorted },
        segments: sampled,
    })
}

pub fn write_sheet<W: Write>(writer: W, rows: &[EvalSheetRow]) -> Result<(), SheetError> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_sheet<R: Read>(reader: R) -> Result<Vec<EvalSheetRow>, SheetError> {
    let mut rdr = csv::Reader::from_reader(reader);
    Ok(rdr.deserialize().collect::<Result<Vec<EvalSheetRow>, _>>()?)
}

/// One `{blinded_id, system_id}` object per line.
pub fn write_mapping<W: Write>(mut writer: W, mapping: &SheetMapping) -> Result<(), SheetError> {
    for l in &mapping.systems {
        writeln!(writer, "{}", serde_json::to_string(l)?)?;
    }
    Ok(())
}

pub fn read_mapping<R: Read>(reader: R) -> Result<SheetMapping, SheetError> {
    let mut systems = Vec::new();
    for line in std::io::BufReader::new(reader).lines() {
        let line = line?;
        if !line.trim().is_empty() {
            systems.push(serde_json::from_str(&line)?);
        }
    }
    Ok(SheetMapping { systems })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemScore {
    pub system_id: String,
    pub score: AcsScore,
    /// Percent change over the baseline for A, C, S and the combined score.
    pub deltas: Option<[String; 4]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreTable {
    pub baseline: String,
    pub systems: Vec<SystemScore>,
}

fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

/// Builds the comparison table from per-system mean scores. The baseline
/// comes first, the rest follow in the order given.
pub fn score_table(means: &[(String, f64, f64, f64)], baseline: &str, weights: &AcsWeights) -> Result<ScoreTable, SheetError> {
    let base = means
        .iter()
        .find(|m| m.0 == baseline)
        .ok_or_else(|| SheetError::UnknownBaseline(baseline.to_string()))?;
    let base = compute_acs(base.1, base.2, base.3, weights)?;
    let mut systems = Vec::new();
    for (id, a, c, s) in std::iter::once(means.iter().find(|m| m.0 == baseline).unwrap())
        .chain(means.iter().filter(|m| m.0 != baseline))
    {
        let score = compute_acs(*a, *c, *s, weights)?;
        // Deltas compare the two-decimal values the table displays.
        let deltas = (id != baseline).then(|| {
            let d = |v: f64, b: f64| percent_delta(round2(v), round2(b)).unwrap_or_else(|| "n/a".into());
            [d(score.a, base.a), d(score.c, base.c), d(score.s, base.s), d(score.i, base.i)]
        });
        systems.push(SystemScore {
            system_id: id.clone(),
            score,
            deltas,
        });
    }
    Ok(ScoreTable {
        baseline: baseline.to_string(),
        systems,
    })
}

/// Unblinds a completed sheet and scores every system.
///
/// Sentence scores are averaged within each segment, then segment averages
/// are averaged per system.
pub fn score_eval_sheet(
    rows: &[EvalSheetRow],
    mapping: &SheetMapping,
    weights: &AcsWeights,
    baseline: &str,
) -> Result<ScoreTable, SheetError> {
    weights.validate()?;
    // system -> segment -> (sum a, sum c, sum s, n)
    let mut acc: BTreeMap<&str, BTreeMap<u32, [f64; 4]>> = BTreeMap::new();
    for (i, r) in rows.iter().enumerate() {
        let row = i + 1;
        let system = mapping.system_of(&r.blinded_id).ok_or_else(|| SheetError::UnknownBlindedId {
            row,
            blinded_id: r.blinded_id.clone(),
        })?;
        let get = |v: Option<f64>, dimension| {
            v.ok_or(SheetError::Unscored {
                row,
                segment_no: r.segment_no,
                sentence_no: r.sentence_no,
                dimension,
            })
        };
        let (a, c, s) = (get(r.a, 'A')?, get(r.c, 'C')?, get(r.s, 'S')?);
        // Range check per sentence so the offending row is easy to find.
        compute_acs(a, c, s, weights)?;
        let e = acc.entry(system).or_default().entry(r.segment_no).or_insert([0.0; 4]);
        e[0] += a;
        e[1] += c;
        e[2] += s;
        e[3] += 1.0;
    }
    let means: Vec<(String, f64, f64, f64)> = acc
        .into_iter()
        .map(|(sys, segs)| {
            let n = segs.len() as f64;
            let mut m = [0.0; 3];
            for v in segs.values() {
                for k in 0..3 {
                    m[k] += v[k] / v[3];
                }
            }
            (sys.to_string(), m[0] / n, m[1] / n, m[2] / n)
        })
        .collect();
    score_table(&means, baseline, weights)
}

impl ScoreTable {
    pub fn get(&self, system_id: &str) -> Option<&SystemScore> {
        self.systems.iter().find(|s| s.system_id == system_id)
    }

    pub fn to_table(&self) -> String {
        let mut lines = vec![vec!["System".to_string(), "A".into(), "C".into(), "S".into(), "ACS".into()]];
        for s in &self.systems {
            let v = [s.score.a, s.score.c, s.score.s, s.score.i];
            let mut l = vec![s.system_id.clone()];
            for (k, x) in v.iter().enumerate() {
                l.push(match &s.deltas {
                    Some(d) => format!("{x:.2} ({})", d[k]),
                    None => format!("{x:.2}"),
                });
            }
            lines.push(l);
        }
        let widths: Vec<usize> = (0..5)
            .map(|i| lines.iter().map(|l| l[i].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for l in &lines {
            let cells: Vec<String> = l.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}", w = *w)).collect();
            let _ = writeln!(out, "{}", cells.join("  ").trim_end());
        }
        out
    }
}
