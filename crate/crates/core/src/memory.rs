//! Translation memory and proofreading memory.
//!
//! Each store is a single object-per-line file. Upserts append one line and
//! fsync before returning; reopening replays the file with last-writer-wins,
//! and [`Store::compact`] rewrites it to one line per live key.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::codes::{self, AnnotationRecord};
use crate::corpus::ParallelSegment;
use crate::jsonl::{self, JsonlError};

pub const DEFAULT_SHOTS: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SegmentKey {
    pub doc_id: String,
    pub seg_id: u32,
}

impl SegmentKey {
    pub fn new(doc_id: impl Into<String>, seg_id: u32) -> Self {
        SegmentKey {
            doc_id: doc_id.into(),
            seg_id,
        }
    }
}

impl fmt::Display for SegmentKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.doc_id, self.seg_id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Origin {
    Corpus,
    PostEdit,
    Pipeline,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranslationEntry {
    pub doc_id: String,
    pub seg_id: u32,
    pub source_text: String,
    pub target_text: String,
    pub origin: Origin,
}

impl TranslationEntry {
    pub fn from_segment(seg: &ParallelSegment) -> Self {
        TranslationEntry {
            doc_id: seg.doc_id.clone(),
            seg_id: seg.seg_id,
            source_text: seg.source_text.clone(),
            target_text: seg.target_text.clone(),
            origin: Origin::Corpus,
        }
    }
}

/// Source, machine translation, annotated errors and final translation of one paragraph.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProofreadingEntry {
    pub doc_id: String,
    pub seg_id: u32,
    pub source_text: String,
    pub machine_translation: String,
    #[serde(with = "codes::annotation_line")]
    pub annotated_errors: Vec<AnnotationRecord>,
    pub final_translation: String,
    pub origin: Origin,
    /// Bumped on every write to this key; used for optimistic concurrency.
    #[serde(default)]
    pub version: u64,
}

#[derive(Debug, thiserror::Error)]
pub enum MemoryError {
    #[error(transparent)]
    File(#[from] JsonlError),
    #[error("duplicate key {0}")]
    DuplicateKey(SegmentKey),
    #[error("invalid entry {key}: {reason}")]
    Invalid { key: SegmentKey, reason: String },
}

pub trait MemoryEntry: Clone + Serialize + DeserializeOwned + Send + Sync {
    fn key(&self) -> SegmentKey;
    fn origin(&self) -> Origin;
    /// Type invariants; returns the first violated one.
    fn check(&self) -> Result<(), String>;
}

impl MemoryEntry for TranslationEntry {
    fn key(&self) -> SegmentKey {
        SegmentKey::new(self.doc_id.clone(), self.seg_id)
    }

    fn origin(&self) -> Origin {
        self.origin
    }

    fn check(&self) -> Result<(), String> {
        if self.source_text.is_empty() {
            return Err("empty source_text".into());
        }
        if self.target_text.is_empty() {
            return Err("empty target_text".into());
        }
        Ok(())
    }
}

impl MemoryEntry for ProofreadingEntry {
    fn key(&self) -> SegmentKey {
        SegmentKey::new(self.doc_id.clone(), self.seg_id)
    }

    fn origin(&self) -> Origin {
        self.origin
    }

    fn check(&self) -> Result<(), String> {
        if self.final_translation.is_empty() {
            return Err("empty final_translation".into());
        }
        if self.annotated_errors.iter().any(|a| a.excerpt.is_empty()) {
            return Err("annotation with empty excerpt".into());
        }
        Ok(())
    }
}

/// Retrieval request for few-shot examples.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeighborQuery {
    pub anchor: SegmentKey,
    pub k: usize,
    pub exclude_anchor: bool,
    /// Restrict candidates to these origins; `None` means any.
    pub origins: Option<Vec<Origin>>,
}

impl NeighborQuery {
    pub fn new(anchor: SegmentKey, k: usize) -> Self {
        assert!(k >= 1, "k must be positive");
        NeighborQuery {
            anchor,
            k,
            exclude_anchor: true,
            origins: None,
        }
    }
}

/// Ranks candidate keys for a query. `keys` is sorted ascending; the result
/// holds indices into `keys`, best first, at most `query.k` long.
pub trait NeighborStrategy: Send + Sync {
    fn select(&self, keys: &[&SegmentKey], query: &NeighborQuery) -> Vec<usize>;
}

/// Physical Neighbor Sampling: same-document paragraphs by |seg_id distance|,
/// then other documents in lexicographic doc_id order, then seg_id.
/// Ties go to the smaller (doc_id, seg_id).
#[derive(Debug, Clone, Copy, Default)]
pub struct PhysicalNeighbors;

impl NeighborStrategy for PhysicalNeighbors {
    fn select(&self, keys: &[&SegmentKey], query: &NeighborQuery) -> Vec<usize> {
        let anchor = &query.anchor;
        let k = query.k;
        let doc_lo = keys.partition_point(|key| key.doc_id.as_str() < anchor.doc_id.as_str());
        let doc_hi = doc_lo + keys[doc_lo..].partition_point(|key| key.doc_id == anchor.doc_id);
        let split = doc_lo + keys[doc_lo..doc_hi].partition_point(|key| key.seg_id < anchor.seg_id);

        let mut out = Vec::with_capacity(k);
        let mut right = split;
        if right < doc_hi && keys[right].seg_id == anchor.seg_id {
            if !query.exclude_anchor {
                out.push(right);
            }
            right += 1;
        }
        let mut left = split;
        // Two-pointer walk outward from the anchor.
        while out.len() < k && (left > doc_lo || right < doc_hi) {
            let dl = (left > doc_lo).then(|| anchor.seg_id - keys[left - 1].seg_id);
            let dr = (right < doc_hi).then(|| keys[right].seg_id - anchor.seg_id);
            match (dl, dr) {
                (Some(l), Some(r)) if l <= r => {
                    left -= 1;
                    out.push(left);
                }
                (Some(_), None) => {
                    left -= 1;
                    out.push(left);
                }
                _ => {
                    out.push(right);
                    right += 1;
                }
            }
        }
        out.extend((0..doc_lo).chain(doc_hi..keys.len()).take(k - out.len()));
        out
    }
}

pub struct Store<E: MemoryEntry> {
    path: Option<PathBuf>,
    entries: BTreeMap<SegmentKey, E>,
    log_lines: usize,
}

pub type TranslationMemory = Store<TranslationEntry>;
pub type ProofreadingMemory = Store<ProofreadingEntry>;

impl<E: MemoryEntry> Clone for Store<E> {
    /// Clones are detached in-memory snapshots; they never write to the original file.
    fn clone(&self) -> Self {
        Store {
            path: None,
            entries: self.entries.clone(),
            log_lines: 0,
        }
    }
}

impl<E: MemoryEntry> fmt::Debug for Store<E> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Store")
            .field("path", &self.path)
            .field("len", &self.entries.len())
            .finish()
    }
}

impl<E: MemoryEntry> Default for Store<E> {
    fn default() -> Self {
        Self::in_memory()
    }
}

impl<E: MemoryEntry + PartialEq> PartialEq for Store<E> {
    fn eq(&self, other: &Self) -> bool {
        self.entries == other.entries
    }
}

impl<E: MemoryEntry> Store<E> {
    pub fn in_memory() -> Self {
        Store {
            path: None,
            entries: BTreeMap::new(),
            log_lines: 0,
        }
    }

    /// Opens (or creates on first write) a file-backed store, replaying its log.
    pub fn open(path: impl Into<PathBuf>) -> Result<Self, MemoryError> {
        let path = path.into();
        let mut entries = BTreeMap::new();
        let mut log_lines = 0;
        if path.exists() {
            for (_, entry) in jsonl::read_records::<E>(&path)? {
                let entry: E = entry;
                entries.insert(entry.key(), entry);
                log_lines += 1;
            }
        }
        Ok(Store {
            path: Some(path),
            entries,
            log_lines,
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, key: &SegmentKey) -> Option<&E> {
        self.entries.get(key)
    }

    pub fn iter(&self) -> impl Iterator<Item = &E> {
        self.entries.values()
    }

    pub fn for_doc<'a>(&'a self, doc_id: &'a str) -> impl Iterator<Item = &'a E> + 'a {
        self.entries
            .range(SegmentKey::new(doc_id, 0)..)
            .take_while(move |(k, _)| k.doc_id == doc_id)
            .map(|(_, e)| e)
    }

    pub fn doc_ids(&self) -> BTreeSet<String> {
        self.entries.keys().map(|k| k.doc_id.clone()).collect()
    }

    /// Inserts or replaces by key. The entry is durable before this returns;
    /// on a write failure the store is left unchanged.
    pub fn upsert(&mut self, entry: E) -> Result<Option<E>, MemoryError> {
        let key = entry.key();
        entry
            .check()
            .map_err(|reason| MemoryError::Invalid { key: key.clone(), reason })?;
        if let Some(path) = &self.path {
            jsonl::append_record(path, &entry)?;
            self.log_lines += 1;
        }
        let prev = self.entries.insert(key, entry);
        if self.log_lines > 2 * self.entries.len() + 64 {
            self.compact()?;
        }
        Ok(prev)
    }

    /// Rewrites the backing file with one line per live entry.
    pub fn compact(&mut self) -> Result<(), MemoryError> {
        if let Some(path) = &self.path {
            jsonl::write_records(path, self.entries.values())?;
            self.log_lines = self.entries.len();
        }
        Ok(())
    }

    pub fn export(&self, path: &Path) -> Result<(), MemoryError> {
        jsonl::write_records(path, self.entries.values())?;
        Ok(())
    }

    /// Strict load of an exported file: every entry is validated and keys must be unique.
    pub fn import(path: &Path) -> Result<Self, MemoryError> {
        let mut entries = BTreeMap::new();
        for (_, entry) in jsonl::read_records::<E>(path)? {
            let entry: E = entry;
            let key = entry.key();
            entry
                .check()
                .map_err(|reason| MemoryError::Invalid { key: key.clone(), reason })?;
            if entries.insert(key.clone(), entry).is_some() {
                return Err(MemoryError::DuplicateKey(key));
            }
        }
        Ok(Store {
            path: None,
            entries,
            log_lines: 0,
        })
    }

    /// Writes every entry of `other` into this store.
    pub fn absorb(&mut self, other: Store<E>) -> Result<(), MemoryError> {
        for e in other.entries.into_values() {
            self.upsert(e)?;
        }
        Ok(())
    }

    pub fn neighbors(&self, query: &NeighborQuery) -> Vec<&E> {
        self.neighbors_with(&PhysicalNeighbors, query)
    }

    pub fn neighbors_with(&self, strategy: &dyn NeighborStrategy, query: &NeighborQuery) -> Vec<&E> {
        let candidates: Vec<(&SegmentKey, &E)> = self
            .entries
            .iter()
            .filter(|(_, e)| query.origins.as_ref().is_none_or(|o| o.contains(&e.origin())))
            .collect();
        let keys: Vec<&SegmentKey> = candidates.iter().map(|(k, _)| *k).collect();
        strategy
            .select(&keys, query)
            .into_iter()
            .map(|i| candidates[i].1)
            .collect()
    }
}

pub fn pns_neighbors<'a, E: MemoryEntry>(store: &'a Store<E>, query: &NeighborQuery) -> Vec<&'a E> {
    store.neighbors(query)
}

pub fn export_memory<E: MemoryEntry>(store: &Store<E>, path: &Path) -> Result<(), MemoryError> {
    store.export(path)
}

pub fn import_memory<E: MemoryEntry>(path: &Path) -> Result<Store<E>, MemoryError> {
    Store::import(path)
}

impl TranslationMemory {
    /// Seeds translation memory from corpus segments (origin `corpus`).
    pub fn seed_from_corpus(&mut self, segments: &[ParallelSegment]) -> Result<usize, MemoryError> {
        let mut written = 0;
        for seg in segments {
            let entry = TranslationEntry::from_segment(seg);
            if self.get(&entry.key()) != Some(&entry) {
                self.upsert(entry)?;
                written += 1;
            }
        }
        Ok(written)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codes::Code;

    fn tm(doc: &str, seg: u32, tgt: &str) -> TranslationEntry {
        TranslationEntry {
            doc_id: doc.into(),
            seg_id: seg,
            source_text: format!("src {doc} {seg}"),
            target_text: tgt.into(),
            origin: Origin::Pipeline,
        }
    }

    #[test]
    fn upsert_then_get() {
        let mut s = TranslationMemory::in_memory();
        let e = tm("D", 1, "甲");
        s.upsert(e.clone()).unwrap();
        assert_eq!(s.get(&SegmentKey::new("D", 1)), Some(&e));
    }

    #[test]
    fn last_writer_wins() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tm.jsonl");
        let mut s = TranslationMemory::open(&path).unwrap();
        s.upsert(tm("D", 1, "one")).unwrap();
        s.upsert(tm("D", 1, "two")).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s.get(&SegmentKey::new("D", 1)).unwrap().target_text, "two");
        let reopened = TranslationMemory::open(&path).unwrap();
        assert_eq!(reopened.get(&SegmentKey::new("D", 1)).unwrap().target_text, "two");
    }

    #[test]
    fn invalid_entry_rejected_without_change() {
        let mut s = TranslationMemory::in_memory();
        let err = s.upsert(tm("D", 1, "")).unwrap_err();
        assert!(matches!(err, MemoryError::Invalid { .. }));
        assert!(s.is_empty());
    }

    #[test]
    fn write_failure_leaves_store_unchanged() {
        let dir = tempfile::tempdir().unwrap();
        // A directory where the file should be makes every append fail.
        let path = dir.path().join("blocked");
        std::fs::create_dir(&path).unwrap();
        let mut s = TranslationMemory::open(dir.path().join("nope.jsonl")).unwrap();
        s.path = Some(path);
        assert!(s.upsert(tm("D", 1, "x")).is_err());
        assert!(s.is_empty());
    }

    #[test]
    fn export_import_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = ProofreadingMemory::in_memory();
        s.upsert(ProofreadingEntry {
            doc_id: "D".into(),
            seg_id: 2,
            source_text: "The judgment".into(),
            machine_translation: "判案書".into(),
            annotated_errors: vec![AnnotationRecord::new(Code::new("CW").unwrap(), "判案書", Some("判決書".into()))],
            final_translation: "判決書".into(),
            origin: Origin::Pipeline,
            version: 1,
        })
        .unwrap();
        let path = dir.path().join("pm.jsonl");
        s.export(&path).unwrap();
        let line = std::fs::read_to_string(&path).unwrap();
        assert!(line.contains(r#""annotated_errors":"[CW] \"判案書\" -> \"判決書\"""#), "{line}");
        assert_eq!(ProofreadingMemory::import(&path).unwrap(), s);
    }

    #[test]
    fn import_rejects_duplicates() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tm.jsonl");
        jsonl::write_records(&path, &[tm("D", 3, "a"), tm("D", 3, "b")]).unwrap();
        match TranslationMemory::import(&path) {
            Err(MemoryError::DuplicateKey(k)) => assert_eq!(k, SegmentKey::new("D", 3)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn compaction_keeps_contents() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tm.jsonl");
        let mut s = TranslationMemory::open(&path).unwrap();
        for i in 0..200 {
            s.upsert(tm("D", 1 + i % 3, &format!("v{i}"))).unwrap();
        }
        let lines = std::fs::read_to_string(&path).unwrap().lines().count();
        assert!(lines < 200, "log was never compacted ({lines} lines)");
        assert_eq!(TranslationMemory::open(&path).unwrap(), s);
    }

    fn store_of(keys: &[(&str, u32)]) -> TranslationMemory {
        let mut s = TranslationMemory::in_memory();
        for (d, n) in keys {
            s.upsert(tm(d, *n, "t")).unwrap();
        }
        s
    }

    fn seg_ids(v: &[&TranslationEntry]) -> Vec<u32> {
        v.iter().map(|e| e.seg_id).collect()
    }

    #[test]
    fn pns_single_document() {
        let keys: Vec<_> = (1..=10).map(|i| ("D", i)).collect();
        let s = store_of(&keys);
        let got = s.neighbors(&NeighborQuery::new(SegmentKey::new("D", 5), 5));
        assert_eq!(seg_ids(&got), [4, 6, 3, 7, 2]);
    }

    #[test]
    fn pns_k_larger_than_store() {
        let s = store_of(&[("A", 1), ("B", 1), ("B", 2), ("B", 4), ("C", 9)]);
        let got = s.neighbors(&NeighborQuery::new(SegmentKey::new("B", 2), 50));
        let keys: Vec<_> = got.iter().map(|e| (e.doc_id.as_str(), e.seg_id)).collect();
        assert_eq!(keys, [("B", 1), ("B", 4), ("A", 1), ("C", 9)]);
    }

    #[test]
    fn pns_includes_anchor_when_asked() {
        let s = store_of(&[("A", 1), ("A", 2), ("A", 3)]);
        let mut q = NeighborQuery::new(SegmentKey::new("A", 2), 2);
        q.exclude_anchor = false;
        assert_eq!(seg_ids(&s.neighbors(&q)), [2, 1]);
    }

    #[test]
    fn pns_empty_store() {
        let s = TranslationMemory::in_memory();
        assert!(s.neighbors(&NeighborQuery::new(SegmentKey::new("A", 1), 5)).is_empty());
    }

    #[test]
    fn pns_origin_filter() {
        let mut s = store_of(&[("A", 1), ("A", 3)]);
        let mut e = tm("A", 2, "t");
        e.origin = Origin::Corpus;
        s.upsert(e).unwrap();
        let mut q = NeighborQuery::new(SegmentKey::new("A", 4), 5);
        q.origins = Some(vec![Origin::Pipeline]);
        assert_eq!(seg_ids(&s.neighbors(&q)), [3, 1]);
    }
}
