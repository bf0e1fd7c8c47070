mod common;

use std::collections::BTreeMap;

use hmit_core::corpus::load_corpus;
use hmit_core::memory::{
    export_memory, import_memory, pns_neighbors, MemoryError, NeighborQuery, Origin, SegmentKey, TranslationEntry,
    TranslationMemory,
};
use proptest::prelude::*;

fn entry(doc: &str, seg: u32, tgt: &str) -> TranslationEntry {
    TranslationEntry {
        doc_id: doc.into(),
        seg_id: seg,
        source_text: format!("source {doc} {seg}"),
        target_text: tgt.into(),
        origin: Origin::Corpus,
    }
}

fn store_strategy() -> impl Strategy<Value = Vec<(u8, u32)>> {
    (1u8..=5).prop_flat_map(|docs| prop::collection::vec((0..docs, 1u32..60), 1..=200))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn pns_matches_brute_force(
        raw in store_strategy(),
        pick in any::<prop::sample::Index>(),
        k in prop::sample::select(vec![1usize, 5, 10]),
        exclude in any::<bool>(),
    ) {
        let mut store = TranslationMemory::in_memory();
        for (d, s) in &raw {
            store.upsert(entry(&format!("D{d}"), *s, "t")).unwrap();
        }
        let keys: Vec<SegmentKey> = store.iter().map(|e| SegmentKey::new(e.doc_id.clone(), e.seg_id)).collect();
        let anchor = keys[pick.index(keys.len())].clone();
        let mut q = NeighborQuery::new(anchor.clone(), k);
        q.exclude_anchor = exclude;
        let got: Vec<SegmentKey> = pns_neighbors(&store, &q)
            .into_iter()
            .map(|e| SegmentKey::new(e.doc_id.clone(), e.seg_id))
            .collect();
        prop_assert_eq!(&got, &common::pns_oracle(&keys, &q));
        if exclude {
            prop_assert!(!got.contains(&anchor));
        }
        // Same store, same query, same answer.
        let again: Vec<SegmentKey> = pns_neighbors(&store.clone(), &q)
            .into_iter()
            .map(|e| SegmentKey::new(e.doc_id.clone(), e.seg_id))
            .collect();
        prop_assert_eq!(got, again);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn upserts_match_map_oracle_and_survive_reload(ops in prop::collection::vec((0u8..3, 1u32..40, "[a-z]{1,6}"), 1..1000)) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tm.jsonl");
        let mut store = TranslationMemory::open(&path).unwrap();
        let mut oracle: BTreeMap<SegmentKey, String> = BTreeMap::new();
        for (d, s, t) in &ops {
            let doc = format!("D{d}");
            store.upsert(entry(&doc, *s, t)).unwrap();
            oracle.insert(SegmentKey::new(doc, *s), t.clone());
        }
        let view = |st: &TranslationMemory| -> BTreeMap<SegmentKey, String> {
            st.iter().map(|e| (SegmentKey::new(e.doc_id.clone(), e.seg_id), e.target_text.clone())).collect()
        };
        prop_assert_eq!(&view(&store), &oracle);
        drop(store);
        let reloaded = TranslationMemory::open(&path).unwrap();
        prop_assert_eq!(&view(&reloaded), &oracle);
    }
}

#[test]
fn single_document_example() {
    let mut store = TranslationMemory::in_memory();
    for s in 1..=10 {
        store.upsert(entry("D", s, "t")).unwrap();
    }
    let got: Vec<u32> = pns_neighbors(&store, &NeighborQuery::new(SegmentKey::new("D", 5), 5))
        .iter()
        .map(|e| e.seg_id)
        .collect();
    assert_eq!(got, vec![4, 6, 3, 7, 2]);
}

#[test]
fn export_import_round_trip_and_duplicates() {
    let dir = tempfile::tempdir().unwrap();
    let mut store = TranslationMemory::in_memory();
    store.upsert(entry("A", 1, "甲")).unwrap();
    store.upsert(entry("B", 2, "乙")).unwrap();
    let p = dir.path().join("export.jsonl");
    export_memory(&store, &p).unwrap();
    let back: TranslationMemory = import_memory(&p).unwrap();
    assert_eq!(back, store);

    let line = std::fs::read_to_string(&p).unwrap().lines().next().unwrap().to_string();
    std::fs::write(&p, format!("{line}\n{line}\n")).unwrap();
    match import_memory::<TranslationEntry>(&p) {
        Err(MemoryError::DuplicateKey(k)) => assert_eq!(k, SegmentKey::new("A", 1)),
        other => panic!("expected duplicate key error, got {other:?}"),
    }
}

#[test]
fn corpus_import_counts_records() {
    let segs = load_corpus(&common::fixture("corpus3.jsonl")).unwrap();
    let mut store = TranslationMemory::in_memory();
    assert_eq!(store.seed_from_corpus(&segs).unwrap(), 10);
    assert_eq!(store.len(), 10);
    assert!(store.iter().all(|e| e.origin == Origin::Corpus));
    // Seeding again writes nothing.
    assert_eq!(store.seed_from_corpus(&segs).unwrap(), 0);
}
