mod common;

use hmit_core::agents::backend::{BackendRegistry, RetryPolicy};
use hmit_core::agents::mock::{mock_translate, TRANSLATION_MARK};
use hmit_core::agents::pipeline::{run_tap, Memories, Phase, RunContext, RunLogRecord, RunOutput};
use hmit_core::agents::{AnnotatorSpec, PipelineConfig, RolePrompts};
use hmit_core::memory::{MemoryEntry, Origin, ProofreadingEntry, SegmentKey, TranslationEntry};

fn run(config: &PipelineConfig, mem: &mut Memories) -> RunOutput {
    let backends = BackendRegistry::with_mock();
    let prompts = RolePrompts::default();
    let manual = common::doc10_manual();
    let mut ctx = RunContext::new("test-run", &backends, &prompts);
    ctx.retry = RetryPolicy::no_delay();
    ctx.manual_annotations = Some(&manual);
    let doc = common::sources(&common::doc10());
    let mut progress = Vec::new();
    let out = run_tap(&doc, config, &ctx, mem, &mut |d| progress.push((d.index, d.total, d.ok))).unwrap();
    assert_eq!(progress.len(), doc.len());
    assert!(progress.iter().enumerate().all(|(i, p)| p.0 == i && p.1 == doc.len()));
    out
}

fn phase_records(out: &RunOutput, phase: Phase) -> Vec<&RunLogRecord> {
    out.log.iter().filter(|r| r.phase == phase).collect()
}

#[test]
fn full_tap_feedback_loop() {
    let mut mem = Memories::default();
    let out = run(&PipelineConfig::full("mock"), &mut mem);
    assert_eq!(out.entries.len(), 10);
    assert!(out.failed.is_empty());
    assert_eq!(mem.proofreading.len(), 10);
    assert_eq!(mem.translation.len(), 10);

    let proofread = phase_records(&out, Phase::Proofread);
    let translate = phase_records(&out, Phase::Translate);
    assert_eq!(proofread.len(), 10);
    for (i, (p, t)) in proofread.iter().zip(&translate).enumerate() {
        let seg = i as u32 + 1;
        assert_eq!(p.seg_id, seg);
        // The pool holds exactly the segments already committed.
        assert_eq!(p.pool_size, i, "proofreading pool for segment {seg}");
        assert_eq!(t.pool_size, i, "translation pool for segment {seg}");
        assert!(p.examples.iter().all(|k| k.seg_id < seg));
        assert_eq!(p.examples.len(), i.min(5));
        // Nearest committed neighbours first.
        let want: Vec<u32> = (1..seg).rev().take(5).collect();
        assert_eq!(p.examples.iter().map(|k| k.seg_id).collect::<Vec<_>>(), want);
    }
    // Memory entries match the returned entries.
    for e in &out.entries {
        assert_eq!(mem.proofreading.get(&e.key()), Some(e));
        assert_eq!(mem.translation.get(&e.key()).unwrap().target_text, e.final_translation);
    }
}

fn without_timestamps(out: &RunOutput) -> Vec<RunLogRecord> {
    out.log
        .iter()
        .cloned()
        .map(|mut r| {
            r.timestamp.clear();
            r
        })
        .collect()
}

#[test]
fn runs_are_deterministic() {
    let config = PipelineConfig::full("mock");
    let a = run(&config, &mut Memories::default());
    let b = run(&config, &mut Memories::default());
    assert_eq!(without_timestamps(&a), without_timestamps(&b));
    assert_eq!(a.entries, b.entries);
    assert_eq!(a.usage, b.usage);
}

#[test]
fn translator_only_outputs() {
    let config = PipelineConfig::translator_only("mock", 0);
    let out = run(&config, &mut Memories::default());
    for (e, s) in out.entries.iter().zip(common::doc10()) {
        assert!(e.annotated_errors.is_empty());
        assert_eq!(e.final_translation, e.machine_translation);
        assert_eq!(e.final_translation, mock_translate(&s.source_text));
    }

    // Proofreading memory is never consulted.
    let mut seeded = Memories::default();
    seeded
        .proofreading
        .upsert(ProofreadingEntry {
            doc_id: "HCA 2045/2019".into(),
            seg_id: 1,
            source_text: "x".into(),
            machine_translation: "y".into(),
            annotated_errors: vec![],
            final_translation: "z".into(),
            origin: Origin::PostEdit,
            version: 3,
        })
        .unwrap();
    let config = PipelineConfig::translator_only("mock", 5);
    let plain = run(&config, &mut Memories::default());
    let with_pm = run(&config, &mut seeded);
    let finals = |o: &RunOutput| o.entries.iter().map(|e| e.final_translation.clone()).collect::<Vec<_>>();
    assert_eq!(finals(&plain), finals(&with_pm));
}

#[test]
fn manual_annotations_drive_the_proofreader() {
    let mut config = PipelineConfig::translator_only("mock", 5);
    config.annotator = Some(AnnotatorSpec::Manual { annotations: None });
    config.proofreader = Some(hmit_core::AgentSpec::new("mock", 0));
    let out = run(&config, &mut Memories::default());
    let seg4 = &out.entries[3];
    assert_eq!(seg4.annotated_errors.len(), 1);
    assert_eq!(seg4.annotated_errors[0].code.as_str(), "CW");
    assert!(seg4.final_translation.contains("受信") && !seg4.final_translation.contains("fiduciary"));
    assert!(out.entries[0].annotated_errors.is_empty());
    let ann = phase_records(&out, Phase::Annotate);
    assert_eq!(ann.len(), 10);
    assert!(ann.iter().all(|r| r.backend_id == "manual"));
}

#[test]
fn proofreader_without_annotator_sees_none() {
    let mut config = PipelineConfig::translator_only("mock", 0);
    config.proofreader = Some(hmit_core::AgentSpec::new("mock", 0));
    let out = run(&config, &mut Memories::default());
    for r in phase_records(&out, Phase::Proofread) {
        assert!(r.prompt.contains("\n\nAnnotated errors: NONE\n\n"));
    }
    assert!(out.entries.iter().all(|e| e.final_translation.starts_with(TRANSLATION_MARK)));
}

#[test]
fn translator_sees_prior_corpus_and_fresh_pairs() {
    // Default: corpus entries and this run's own outputs are both eligible.
    let mut mem = Memories::default();
    mem.translation
        .upsert(TranslationEntry {
            doc_id: "AAA 1/2000".into(),
            seg_id: 1,
            source_text: "Old source.".into(),
            target_text: "舊譯文。".into(),
            origin: Origin::Corpus,
        })
        .unwrap();
    let out = run(&PipelineConfig::translator_only("mock", 5), &mut mem);
    let t = phase_records(&out, Phase::Translate);
    assert_eq!(t[0].examples, vec![SegmentKey::new("AAA 1/2000", 1)]);
    assert_eq!(t[2].pool_size, 3);

    // Restricting to corpus origin hides the fresh pairs.
    let mut config = PipelineConfig::translator_only("mock", 5);
    config.translator_example_origins = Some(vec![Origin::Corpus]);
    let out = run(&config, &mut Memories::default());
    assert!(phase_records(&out, Phase::Translate).iter().all(|r| r.pool_size == 0));
}
