//! Prompt builders for the three agents.
//!
//! Layout: the role prompt, a blank line, then blocks separated by blank
//! lines. Few-shot example blocks keep their lines together; the zero-shot
//! task blocks put a blank line between fields. Prompts never end with a
//! newline.

use std::sync::OnceLock;

use regex::Regex;

use crate::codes::format_annotations;
use crate::memory::{ProofreadingEntry, TranslationEntry};

pub const ONE_LINE_INSTRUCTION: &str = "(Do not output in separate lines; output only in one line.)";

const SOURCE_LABEL: &str = "Source text:";
const MT_LABEL: &str = "machine translation:";
const ERRORS_LABEL: &str = "Annotated errors:";
const FINAL_LABEL: &str = "Final translation:";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PromptError {
    #[error("machine translation is empty")]
    EmptyTranslation,
}

/// Language names used in the Translator field labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LanguageLabels {
    pub source: String,
    pub target: String,
}

impl Default for LanguageLabels {
    fn default() -> Self {
        LanguageLabels {
            source: "English".into(),
            target: "Traditional Chinese".into(),
        }
    }
}

impl LanguageLabels {
    pub fn for_tags(source: &str, target: &str) -> Self {
        LanguageLabels {
            source: language_name(source),
            target: language_name(target),
        }
    }

    fn source_field(&self) -> String {
        format!("{} text:", self.source)
    }

    fn target_cue(&self) -> String {
        format!("Translate to {} text:", self.target)
    }
}

pub fn language_name(tag: &str) -> String {
    match tag.to_ascii_lowercase().as_str() {
        "en" | "en-gb" | "en-us" | "en-hk" => "English".into(),
        "zh-hk" | "zh-hant" | "zh-tw" => "Traditional Chinese".into(),
        "zh" | "zh-cn" | "zh-hans" => "Simplified Chinese".into(),
        _ => tag.into(),
    }
}

fn field(label: &str, value: &str) -> String {
    if value.is_empty() {
        label.to_string()
    } else {
        format!("{label} {value}")
    }
}

fn assemble(role_prompt: &str, blocks: Vec<String>) -> String {
    let role = role_prompt.trim_end();
    let mut parts: Vec<&str> = Vec::with_capacity(blocks.len() + 1);
    if !role.is_empty() {
        parts.push(role);
    }
    parts.extend(blocks.iter().map(String::as_str));
    parts.join("\n\n")
}

pub fn build_translator_prompt(
    src: &str,
    examples: &[TranslationEntry],
    role_prompt: &str,
    labels: &LanguageLabels,
) -> String {
    let src_label = labels.source_field();
    let cue = labels.target_cue();
    let mut blocks: Vec<String> = examples
        .iter()
        .map(|e| format!("{}\n{}", field(&src_label, &e.source_text), field(&cue, &e.target_text)))
        .collect();
    if examples.is_empty() {
        blocks.push(field(&src_label, src));
        blocks.push(cue);
    } else {
        blocks.push(format!("{}\n{}", field(&src_label, src), cue));
    }
    assemble(role_prompt, blocks)
}

pub fn build_annotator_prompt(src: &str, mt: &str, role_prompt: &str) -> Result<String, PromptError> {
    if mt.trim().is_empty() {
        return Err(PromptError::EmptyTranslation);
    }
    Ok(assemble(
        role_prompt,
        vec![
            field(SOURCE_LABEL, src),
            field(MT_LABEL, mt),
            format!("{ERRORS_LABEL} {ONE_LINE_INSTRUCTION}"),
        ],
    ))
}

/// `errors_line` is the canonical one-line annotation rendering (or `NONE`).
pub fn build_proofreader_prompt(
    src: &str,
    mt: &str,
    errors_line: &str,
    examples: &[ProofreadingEntry],
    role_prompt: &str,
) -> String {
    let mut blocks: Vec<String> = examples
        .iter()
        .map(|e| {
            [
                field(SOURCE_LABEL, &e.source_text),
                field(MT_LABEL, &e.machine_translation),
                field(ERRORS_LABEL, &format_annotations(&e.annotated_errors)),
                field(FINAL_LABEL, &e.final_translation),
            ]
            .join("\n")
        })
        .collect();
    if examples.is_empty() {
        blocks.extend([
            field(SOURCE_LABEL, src),
            field(MT_LABEL, mt),
            field(ERRORS_LABEL, errors_line),
            format!("{FINAL_LABEL} {ONE_LINE_INSTRUCTION}"),
        ]);
    } else {
        blocks.push(
            [
                field(SOURCE_LABEL, src),
                field(MT_LABEL, mt),
                field(ERRORS_LABEL, errors_line),
                FINAL_LABEL.to_string(),
            ]
            .join("\n"),
        );
    }
    assemble(role_prompt, blocks)
}

/// Which agent a rendered prompt addresses, recovered from its final cue line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TaskView {
    Translate { src: String },
    Annotate { src: String, mt: String },
    Proofread { src: String, mt: String, errors_line: String },
}

fn translate_cue() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?:^|\n)Translate to [^\n]* text:$").unwrap())
}

fn source_field_start() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?m)^[A-Z][A-Za-z ]* text: ").unwrap())
}

/// Value of the last `label` field that starts a line, up to the next line
/// that starts with `next_label` (or the end).
fn last_field<'a>(text: &'a str, label: &str, next_label: &str) -> Option<&'a str> {
    let needle = format!("\n{label} ");
    let start = text.rfind(&needle)? + needle.len();
    let rest = &text[start..];
    let end = rest.find(&format!("\n{next_label}")).unwrap_or(rest.len());
    Some(rest[..end].trim_end_matches('\n'))
}

/// Recovers the task inputs from a prompt built by this module.
pub fn parse_task(prompt: &str) -> Option<TaskView> {
    let body = format!("\n{prompt}");
    if let Some(cue) = translate_cue().find(&body) {
        let head = &body[..cue.start()];
        let m = source_field_start().find_iter(head).last()?;
        let src = head[m.end()..].trim_end_matches('\n');
        return Some(TaskView::Translate { src: src.to_string() });
    }
    if body.ends_with(&format!("{ERRORS_LABEL} {ONE_LINE_INSTRUCTION}")) {
        let src = last_field(&body, SOURCE_LABEL, MT_LABEL)?;
        let mt = last_field(&body, MT_LABEL, ERRORS_LABEL)?;
        return Some(TaskView::Annotate {
            src: src.to_string(),
            mt: mt.to_string(),
        });
    }
    if body.ends_with(FINAL_LABEL) || body.ends_with(&format!("{FINAL_LABEL} {ONE_LINE_INSTRUCTION}")) {
        let src = last_field(&body, SOURCE_LABEL, MT_LABEL)?;
        let mt = last_field(&body, MT_LABEL, ERRORS_LABEL)?;
        let errors_line = last_field(&body, ERRORS_LABEL, FINAL_LABEL)?;
        return Some(TaskView::Proofread {
            src: src.to_string(),
            mt: mt.to_string(),
            errors_line: errors_line.to_string(),
        });
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::memory::Origin;

    fn tm(i: usize) -> TranslationEntry {
        TranslationEntry {
            doc_id: "D".into(),
            seg_id: i as u32,
            source_text: format!("example {i}"),
            target_text: format!("例子{i}"),
            origin: Origin::Corpus,
        }
    }

    #[test]
    fn zero_shot_translator_shape() {
        let p = build_translator_prompt("Hello", &[], "ROLE", &LanguageLabels::default());
        assert_eq!(p, "ROLE\n\nEnglish text: Hello\n\nTranslate to Traditional Chinese text:");
    }

    #[test]
    fn few_shot_blocks_keep_order() {
        let ex: Vec<_> = [3, 1, 4, 5, 2].into_iter().map(tm).collect();
        let p = build_translator_prompt("Hello", &ex, "ROLE", &LanguageLabels::default());
        assert_eq!(p.matches("English text: ").count(), 6);
        let order: Vec<usize> = [3, 1, 4, 5, 2].iter().map(|i| p.find(&format!("example {i}\n")).unwrap()).collect();
        assert!(order.windows(2).all(|w| w[0] < w[1]));
        assert!(p.ends_with("English text: Hello\nTranslate to Traditional Chinese text:"));
    }

    #[test]
    fn annotator_field_order() {
        let p = build_annotator_prompt("src", "mt", "ROLE").unwrap();
        let a = p.find("Source text:").unwrap();
        let b = p.find("machine translation:").unwrap();
        let c = p.find("Annotated errors:").unwrap();
        assert!(a < b && b < c);
        assert_eq!(build_annotator_prompt("src", "", "ROLE"), Err(PromptError::EmptyTranslation));
    }

    #[test]
    fn proofreader_includes_none_verbatim() {
        let p = build_proofreader_prompt("s", "m", "NONE", &[], "ROLE");
        assert!(p.contains("\n\nAnnotated errors: NONE\n\n"));
        assert!(p.ends_with(ONE_LINE_INSTRUCTION));
    }

    #[test]
    fn empty_role_prompt_starts_with_task() {
        let p = build_translator_prompt("x", &[], "  \n", &LanguageLabels::default());
        assert!(p.starts_with("English text: x"));
    }

    #[test]
    fn task_views_round_trip() {
        let labels = LanguageLabels::default();
        let ex: Vec<_> = (1..=5).map(tm).collect();
        let src = "1. The appellant\nwas convicted.";
        for p in [
            build_translator_prompt(src, &[], DEFAULT_ROLE, &labels),
            build_translator_prompt(src, &ex, DEFAULT_ROLE, &labels),
        ] {
            assert_eq!(parse_task(&p), Some(TaskView::Translate { src: src.into() }));
        }
        let p = build_annotator_prompt(src, "上訴人\n被定罪", DEFAULT_ROLE).unwrap();
        assert_eq!(
            parse_task(&p),
            Some(TaskView::Annotate {
                src: src.into(),
                mt: "上訴人\n被定罪".into()
            })
        );
        let p = build_proofreader_prompt(src, "上訴人", r#"[CW] "上" -> "下""#, &[], DEFAULT_ROLE);
        assert_eq!(
            parse_task(&p),
            Some(TaskView::Proofread {
                src: src.into(),
                mt: "上訴人".into(),
                errors_line: r#"[CW] "上" -> "下""#.into()
            })
        );
        assert_eq!(parse_task("hello"), None);
    }

    const DEFAULT_ROLE: &str = crate::agents::DEFAULT_ANNOTATOR_ROLE;
}
