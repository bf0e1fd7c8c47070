use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use hmit_core::costing::UsageRecord;
use hmit_core::evaluation::sheet::{read_sheet, write_sheet};
use hmit_core::jsonl;
use rust_decimal::Decimal;
use serde_json::Value;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures").join(name)
}

fn repo_file(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

/// A temp dir holding `hmit.toml` with the given extra lines.
fn setup(extra: &str) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("hmit.toml"), format!("data_dir = \"data\"\n{extra}")).unwrap();
    dir
}

fn hmit(dir: &Path, args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_hmit"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap();
    out
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = hmit(dir, args);
    assert!(
        out.status.success(),
        "hmit {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect()
}

#[test]
fn ingest_is_idempotent() {
    let dir = setup("");
    let corpus = fixture("corpus3.jsonl");
    let corpus = corpus.to_str().unwrap();
    let first = ok(dir.path(), &["ingest", "--corpus", corpus, "--documents", corpus]);
    assert!(first.contains("3 documents, 10 segments, 10 written"), "{first}");
    let data = dir.path().join("data");
    let before = snapshot(&data);
    let second = ok(dir.path(), &["ingest", "--corpus", corpus, "--documents", corpus]);
    assert_eq!(second.matches(", 0 written").count(), 2, "{second}");
    assert_eq!(before, snapshot(&data));

    let out = hmit(dir.path(), &["ingest"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error: nothing to ingest"));
}

#[test]
fn run_persists_each_paragraph() {
    let dir = setup("");
    let corpus = fixture("corpus3.jsonl");
    ok(dir.path(), &["ingest", "--documents", corpus.to_str().unwrap()]);
    let out = ok(dir.path(), &["run", "--doc", "CACC 12/2019", "--run-id", "r1"]);
    assert!(out.starts_with("3 entries persisted, 0 failed"), "{out}");
    let pm = std::fs::read_to_string(dir.path().join("data/proofreading_memory.jsonl")).unwrap();
    assert_eq!(pm.lines().count(), 3);
    let log = std::fs::read_to_string(dir.path().join("data/runs/r1.jsonl")).unwrap();
    assert!(log.lines().count() >= 9);

    let out = hmit(dir.path(), &["run", "--doc", "nope"]);
    assert!(!out.status.success());
    let out = hmit(dir.path(), &["run", "--doc", "CACC 12/2019", "--backend", "nope"]);
    assert!(!out.status.success());
}

#[test]
fn matrix_prints_eleven_rows() {
    let dir = setup(&format!("manual_annotations = {:?}\n", fixture("doc10_manual.jsonl")));
    let table1 = repo_file("configs/table1.toml");
    let testset = fixture("doc10.jsonl");
    let json = dir.path().join("matrix.json");
    let out = ok(
        dir.path(),
        &[
            "matrix",
            "--matrix",
            table1.to_str().unwrap(),
            "--testset",
            testset.to_str().unwrap(),
            "--json",
            json.to_str().unwrap(),
        ],
    );
    assert_eq!(out.lines().count(), 12, "{out}");
    for i in 1..=11 {
        assert!(out.contains(&format!("MAS {i}")), "{out}");
    }
    let rows: Vec<Value> = serde_json::from_str(&std::fs::read_to_string(json).unwrap()).unwrap();
    assert_eq!(rows.len(), 11);
    let seq = ok(
        dir.path(),
        &["matrix", "--matrix", table1.to_str().unwrap(), "--testset", testset.to_str().unwrap(), "--sequential"],
    );
    assert_eq!(out, seq);
}

#[test]
fn sheet_and_score_round_trip() {
    let dir = setup("");
    let testset = fixture("doc10.jsonl");
    let segs: Vec<Value> = std::fs::read_to_string(&testset)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    let mut args: Vec<String> = vec!["sheet".into(), "--testset".into(), testset.to_str().unwrap().into()];
    for (name, tag) in [("base", "甲"), ("mas", "乙")] {
        let p = dir.path().join(format!("{name}.jsonl"));
        let lines: Vec<String> = segs
            .iter()
            .map(|s| {
                serde_json::json!({"doc_id": s["doc_id"], "seg_id": s["seg_id"],
                                   "final_translation": format!("{tag}譯文{}。", s["seg_id"])})
                .to_string()
            })
            .collect();
        std::fs::write(&p, lines.join("\n")).unwrap();
        args.push("--system".into());
        args.push(format!("{name}={}", p.display()));
    }
    args.extend(["--sample".into(), "10".into(), "--seed".into(), "3".into()]);
    let args: Vec<&str> = args.iter().map(String::as_str).collect();
    let out = ok(dir.path(), &args);
    assert!(out.starts_with("20 rows"), "{out}");

    let sheet_path = dir.path().join("data/eval/sheet.csv");
    let mapping_path = dir.path().join("data/private/mapping.jsonl");
    let csv = std::fs::read_to_string(&sheet_path).unwrap();
    assert!(!csv.contains("base") && !csv.contains("mas"));
    // An evaluator fills the sheet by translation tag.
    let mut rows = read_sheet(csv.as_bytes()).unwrap();
    for r in &mut rows {
        let v = if r.translation.starts_with('甲') { 8.0 } else { 9.0 };
        (r.a, r.c, r.s) = (Some(v), Some(v), Some(v));
    }
    write_sheet(std::fs::File::create(&sheet_path).unwrap(), &rows).unwrap();
    let out = ok(
        dir.path(),
        &["score", "--sheet", "data/eval/sheet.csv", "--mapping", mapping_path.to_str().unwrap(), "--baseline", "base", "--json"],
    );
    let scores: Vec<Value> = serde_json::from_str(&out).unwrap();
    let by: BTreeMap<&str, &Value> = scores.iter().map(|s| (s["system"].as_str().unwrap(), s)).collect();
    assert!((by["base"]["I"].as_f64().unwrap() - 8.0).abs() < 1e-9);
    assert!((by["mas"]["I"].as_f64().unwrap() - 9.0).abs() < 1e-9);
    assert_eq!(by["mas"]["deltas"][3], "+12.50%");
}

#[test]
fn cost_matches_hand_recount() {
    let dir = setup("pricing = \"pricing.jsonl\"\n");
    std::fs::write(
        dir.path().join("pricing.jsonl"),
        "{\"backend_id\": \"mock\", \"in_price\": \"0.0025\", \"out_price\": \"0.01\"}\n",
    )
    .unwrap();
    ok(dir.path(), &["ingest", "--documents", fixture("doc10.jsonl").to_str().unwrap()]);
    ok(dir.path(), &["run", "--doc", "HCA 2045/2019", "--run-id", "priced"]);
    let usage: Vec<UsageRecord> = jsonl::read_records(&dir.path().join("data/usage.jsonl"))
        .unwrap()
        .into_iter()
        .map(|(_, r)| r)
        .collect();
    assert_eq!(usage.len(), 30);
    // Nano-dollars: 2,500 per input token, 10,000 per output token.
    let nano: i64 = usage
        .iter()
        .map(|r| 2_500 * r.input_tokens as i64 + 10_000 * r.output_tokens as i64)
        .sum();
    let out = ok(dir.path(), &["cost", "--run-id", "priced", "--json"]);
    let c: Value = serde_json::from_str(&out).unwrap();
    let total: Decimal = c["api_total"].as_str().unwrap().parse().unwrap();
    assert_eq!(total, Decimal::new(nano, 9));
    let roles: Decimal = c["api_per_role"]
        .as_object()
        .unwrap()
        .values()
        .map(|v| v.as_str().unwrap().parse::<Decimal>().unwrap())
        .sum();
    assert_eq!(roles, total);
    assert!(c["unpriced_backends"].as_array().unwrap().is_empty());
    assert!(c["human_to_api_ratio"].as_f64().unwrap() > 1.0);

    assert!(!hmit(dir.path(), &["cost", "--run-id", "missing"]).status.success());
}

#[test]
fn bad_config_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("hmit.toml"), "nonsense = 1\n").unwrap();
    let out = hmit(dir.path(), &["cost"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("hmit.toml"));
}

#[test]
fn shipped_configs_load_and_run() {
    let cfg = hmit_service::ServiceConfig::load(&repo_file("configs/hmit.toml")).unwrap();
    assert_eq!(cfg.backends.len(), 1);
    assert!(cfg.glossary.as_ref().unwrap().exists());
    assert!(cfg.pricing.as_ref().unwrap().exists());

    let configs = repo_file("configs");
    let dir = setup(&format!(
        "pricing = {:?}\nglossary = {:?}\n",
        configs.join("pricing.jsonl"),
        configs.join("glossary.csv")
    ));
    ok(dir.path(), &["ingest", "--documents", fixture("corpus3.jsonl").to_str().unwrap()]);
    let full = configs.join("full.toml");
    let out = ok(dir.path(), &["run", "--doc", "CACC 12/2019", "--pipeline", full.to_str().unwrap(), "--run-id", "g"]);
    assert!(out.starts_with("3 entries persisted"), "{out}");
    // Glossary terms reach the translator prompt for the first paragraph.
    let log = std::fs::read_to_string(dir.path().join("data/runs/g.jsonl")).unwrap();
    assert!(log.lines().next().unwrap().contains("申請人"));
    let text = ok(dir.path(), &["cost"]);
    assert!(text.contains("API total:         US$0"), "{text}");
}
