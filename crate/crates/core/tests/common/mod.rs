#![allow(dead_code)]

use std::path::PathBuf;

use hmit_core::agents::pipeline::{ManualAnnotations, SourceSegment};
use hmit_core::corpus::{load_corpus, ParallelSegment};
use hmit_core::evaluation::matrix::{MatrixEntry, MatrixFile};
use hmit_core::memory::{NeighborQuery, SegmentKey};

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn golden(name: &str) -> String {
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name);
    std::fs::read_to_string(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

pub fn repo_file(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

pub fn doc10() -> Vec<ParallelSegment> {
    load_corpus(&fixture("doc10.jsonl")).unwrap()
}

pub fn sources(segs: &[ParallelSegment]) -> Vec<SourceSegment> {
    segs.iter().map(SourceSegment::from).collect()
}

pub fn doc10_manual() -> ManualAnnotations {
    ManualAnnotations::load(&fixture("doc10_manual.jsonl")).unwrap()
}

pub fn table1() -> Vec<MatrixEntry> {
    let text = std::fs::read_to_string(repo_file("configs/table1.toml")).unwrap();
    MatrixFile::from_toml(&text).unwrap().configs
}

/// Reference ranking: sort every key by (tier, distance, doc, seg) and cut at k.
pub fn pns_oracle(keys: &[SegmentKey], q: &NeighborQuery) -> Vec<SegmentKey> {
    let mut v: Vec<&SegmentKey> = keys
        .iter()
        .filter(|k| !(q.exclude_anchor && **k == q.anchor))
        .collect();
    v.sort_by_key(|k| {
        if k.doc_id == q.anchor.doc_id {
            (0u8, k.seg_id.abs_diff(q.anchor.seg_id), String::new(), k.seg_id)
        } else {
            (1u8, 0, k.doc_id.clone(), k.seg_id)
        }
    });
    v.into_iter().take(q.k).cloned().collect()
}
