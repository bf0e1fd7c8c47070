//! `hmit` command line.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use hmit_core::agents::PipelineConfig;
use hmit_core::corpus::{load_corpus, SegmentationRules};
use hmit_core::evaluation::adapter::MetricAdapter;
use hmit_core::evaluation::matrix::{MatrixEnv, MatrixFile};
use hmit_core::evaluation::sheet::{read_mapping, read_sheet, write_mapping, write_sheet, SystemOutput};
use hmit_core::evaluation::{
    builtin_overlap_adapter, make_eval_sheet, run_config_matrix, score_eval_sheet, AcsWeights, RuleSentenceSplitter,
};
use hmit_core::exec::ExecMode;
use hmit_core::jsonl;
use hmit_core::memory::SegmentKey;
use serde::Deserialize;

use crate::config::ServiceConfig;
use crate::workspace::Workspace;

#[derive(Debug, Parser)]
#[command(name = "hmit", version, about = "Multi-agent translation of bilingual legal judgments")]
pub struct Cli {
    /// Service config (TOML): store paths, backends, pricing, glossary.
    #[arg(long, global = true, default_value = "hmit.toml")]
    pub config: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Import corpora, documents, proofreading exports and glossaries into the stores.
    Ingest {
        /// Parallel corpus (JSONL) seeded into translation memory.
        #[arg(long)]
        corpus: Vec<PathBuf>,
        /// Corpus-format JSONL whose source side is registered for translation.
        #[arg(long)]
        documents: Vec<PathBuf>,
        /// Plain-text judgment segmented into paragraphs; needs --doc-id.
        #[arg(long, requires = "doc_id")]
        text: Option<PathBuf>,
        #[arg(long)]
        doc_id: Option<String>,
        /// Exported proofreading memory (JSONL).
        #[arg(long)]
        proofreading: Vec<PathBuf>,
        /// `term,translation` CSV.
        #[arg(long)]
        glossary: Option<PathBuf>,
    },
    /// Translate one registered document with a pipeline config.
    Run {
        #[arg(long)]
        doc: String,
        /// Pipeline config (TOML). Without it the full pipeline runs on --backend.
        #[arg(long)]
        pipeline: Option<PathBuf>,
        #[arg(long, default_value = "mock")]
        backend: String,
        #[arg(long)]
        run_id: Option<String>,
        /// Start at this segment; earlier segments keep their current entries.
        #[arg(long)]
        from_seg: Option<u32>,
    },
    /// Run every configuration of a matrix file over a test set and print the report.
    Matrix {
        #[arg(long)]
        matrix: PathBuf,
        /// Corpus-format JSONL with reference translations.
        #[arg(long)]
        testset: PathBuf,
        #[arg(long)]
        sequential: bool,
        /// Keep test-set documents in the memories the configurations start from.
        #[arg(long)]
        keep_test_documents: bool,
        /// Also write per-cell records as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Build a blinded human-evaluation sheet from system outputs.
    Sheet {
        /// Corpus-format JSONL providing the source paragraphs.
        #[arg(long)]
        testset: PathBuf,
        /// `NAME=FILE`; FILE holds `{doc_id, seg_id, translation}` lines
        /// (a proofreading memory export also works).
        #[arg(long = "system", required = true)]
        systems: Vec<String>,
        #[arg(long)]
        sample: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        mapping: Option<PathBuf>,
    },
    /// Score a filled evaluation sheet.
    Score {
        #[arg(long)]
        sheet: PathBuf,
        #[arg(long)]
        mapping: PathBuf,
        #[arg(long)]
        baseline: String,
        #[arg(long)]
        json: bool,
    },
    /// Human vs API cost report from the recorded usage.
    Cost {
        #[arg(long)]
        run_id: Option<String>,
        #[arg(long)]
        json: bool,
    },
    /// Start the HTTP API.
    Serve {
        #[arg(long)]
        bind: Option<String>,
    },
}

pub fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn open(config: &Path) -> Result<Workspace> {
    let cfg = ServiceConfig::load(config).with_context(|| format!("loading {}", config.display()))?;
    Ok(Workspace::open(cfg)?)
}

pub fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Ingest {
            corpus,
            documents,
            text,
            doc_id,
            proofreading,
            glossary,
        } => {
            let ws = open(&cli.config)?;
            let mut any = false;
            for p in &corpus {
                let r = ws.ingest_corpus(p).with_context(|| p.display().to_string())?;
                println!("corpus {}: {} documents, {} segments, {} written", p.display(), r.documents, r.segments, r.written);
                any = true;
            }
            for p in &documents {
                let r = ws.ingest_documents(p).with_context(|| p.display().to_string())?;
                println!("documents {}: {} documents, {} segments, {} written", p.display(), r.documents, r.segments, r.written);
                any = true;
            }
            if let (Some(p), Some(id)) = (&text, &doc_id) {
                let r = ws.ingest_text(id, p, &SegmentationRules::default())?;
                println!("text {}: {} paragraphs, {} written", p.display(), r.segments, r.written);
                any = true;
            }
            for p in &proofreading {
                let r = ws.ingest_proofreading(p).with_context(|| p.display().to_string())?;
                println!("proofreading {}: {} entries, {} written", p.display(), r.segments, r.written);
                any = true;
            }
            if let Some(p) = &glossary {
                println!("glossary {}: {} terms", p.display(), ws.ingest_glossary(p)?);
                any = true;
            }
            if !any {
                bail!("nothing to ingest; pass --corpus, --documents, --text, --proofreading or --glossary");
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Run {
            doc,
            pipeline,
            backend,
            run_id,
            from_seg,
        } => {
            let ws = open(&cli.config)?;
            let config = match &pipeline {
                Some(p) => PipelineConfig::load(p).with_context(|| p.display().to_string())?,
                None => PipelineConfig::full(&backend),
            };
            let job = ws.submit_job(&doc, config, run_id, from_seg)?;
            eprintln!("run {} on {} ({} segments)", job.run_id, doc, job.progress.total);
            let out = ws.execute_job(&job.job_id, &mut |d| {
                eprintln!("  [{}/{}] seg {} {}", d.index + 1, d.total, d.key.seg_id, if d.ok { "ok" } else { "FAILED" });
            })?;
            println!(
                "{} entries persisted, {} failed; log: {}",
                out.entries.len(),
                out.failed.len(),
                ws.config.run_log_path(&job.run_id).display()
            );
            Ok(if out.failed.is_empty() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
        Command::Matrix {
            matrix,
            testset,
            sequential,
            keep_test_documents,
            json,
        } => {
            let ws = open(&cli.config)?;
            let text = std::fs::read_to_string(&matrix).with_context(|| matrix.display().to_string())?;
            let entries = MatrixFile::from_toml(&text)?.configs;
            let testset = load_corpus(&testset)?;
            let metrics: Vec<Arc<dyn MetricAdapter>> = if ws.config.metrics.is_empty() {
                vec![builtin_overlap_adapter()]
            } else {
                ws.config.metrics.iter().map(|m| m.build()).collect::<Result<_, _>>()?
            };
            let memories = ws.memories_snapshot();
            let mut env = MatrixEnv::new(&ws.backends, &ws.role_prompts, &memories, &ws.manual_annotations, metrics);
            env.glossary = ws.glossary.as_ref();
            env.exec = if sequential { ExecMode::Sequential } else { ExecMode::Parallel };
            env.exclude_test_documents = !keep_test_documents;
            let report = run_config_matrix(&entries, &testset, &env)?;
            print!("{}", report.to_table());
            if let Some(p) = json {
                std::fs::write(&p, serde_json::to_string_pretty(&report.records())?)?;
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Sheet {
            testset,
            systems,
            sample,
            seed,
            out,
            mapping,
        } => {
            let cfg = ServiceConfig::load(&cli.config).ok();
            let segs = load_corpus(&testset)?;
            let outputs = systems.iter().map(|s| load_system(s)).collect::<Result<Vec<_>>>()?;
            let sheet = make_eval_sheet(&segs, &outputs, sample, &RuleSentenceSplitter::default(), seed)?;
            let out = out
                .or_else(|| cfg.as_ref().map(|c| c.eval_sheet_path()))
                .context("--out is required without a config file")?;
            let mapping = mapping
                .or_else(|| cfg.as_ref().map(|c| c.eval_mapping_path()))
                .context("--mapping is required without a config file")?;
            for p in [&out, &mapping] {
                if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                    std::fs::create_dir_all(dir)?;
                }
            }
            write_sheet(std::fs::File::create(&out)?, &sheet.rows)?;
            write_mapping(std::fs::File::create(&mapping)?, &sheet.mapping)?;
            println!("{} rows -> {}; mapping -> {}", sheet.rows.len(), out.display(), mapping.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Score {
            sheet,
            mapping,
            baseline,
            json,
        } => {
            let rows = read_sheet(std::fs::File::open(&sheet).with_context(|| sheet.display().to_string())?)?;
            let map = read_mapping(std::fs::File::open(&mapping).with_context(|| mapping.display().to_string())?)?;
            let table = score_eval_sheet(&rows, &map, &AcsWeights::default(), &baseline)?;
            if json {
                let rows: Vec<_> = table
                    .systems
                    .iter()
                    .map(|s| {
                        serde_json::json!({
                            "system": s.system_id, "A": s.score.a, "C": s.score.c, "S": s.score.s,
                            "I": s.score.i, "deltas": s.deltas,
                        })
                    })
                    .collect();
                println!("{}", serde_json::to_string_pretty(&rows)?);
            } else {
                print!("{}", table.to_table());
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Cost { run_id, json } => {
            let ws = open(&cli.config)?;
            let c = ws.cost_summary(run_id.as_deref())?;
            if json {
                println!("{}", serde_json::to_string_pretty(&c)?);
            } else {
                println!("source words:      {}", c.source_words);
                println!("human translation: US${}", c.human_translation);
                println!("human editing:     US${}", c.human_editing);
                println!("API total:         US${}", c.api_total);
                for (role, v) in &c.api_per_role {
                    println!("  {role:<12} US${v}");
                }
                if let Some(r) = c.human_to_api_ratio {
                    println!("human / API:       {r:.1}x");
                }
                if !c.unpriced_backends.is_empty() {
                    println!("unpriced backends: {}", c.unpriced_backends.join(", "));
                }
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Serve { bind } => {
            let ws = Arc::new(open(&cli.config)?);
            let addr = bind.unwrap_or_else(|| ws.config.bind.clone());
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::bind(&addr).await.with_context(|| addr.clone())?;
                eprintln!("listening on http://{}", listener.local_addr()?);
                axum::serve(listener, crate::api::router(ws))
                    .with_graceful_shutdown(async {
                        let _ = tokio::signal::ctrl_c().await;
                    })
                    .await?;
                anyhow::Ok(())
            })?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

#[derive(Deserialize)]
struct OutputRecord {
    doc_id: String,
    seg_id: u32,
    #[serde(alias = "final_translation")]
    translation: String,
}

fn load_system(spec: &str) -> Result<SystemOutput> {
    let (name, path) = spec.split_once('=').context("--system takes NAME=FILE")?;
    let translations: BTreeMap<SegmentKey, String> = jsonl::read_records::<OutputRecord>(Path::new(path))?
        .into_iter()
        .map(|(_, r)| (SegmentKey::new(r.doc_id, r.seg_id), r.translation))
        .collect();
    Ok(SystemOutput {
        system_id: name.to_string(),
        translations,
    })
}

