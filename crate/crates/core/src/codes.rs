//! Proofreading error codes and the one-line annotation format.
//!
//! Canonical line grammar (byte-stable, used in prompts, memory files and the
//! HTTP API):
//!
//! ```text
//! line    = "NONE" | record *( "; " record )
//! record  = "[" CODE "] " quoted [ " -> " quoted ] [ " # " quoted ]
//! quoted  = '"' *( char | '\"' | '\\' | '\n' | '\r' ) '"'
//! ```
//!
//! The optional trailing `# "..."` carries the free-text note.

use std::fmt::{self, Write as _};
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ErrorCategory {
    Accuracy,
    Grammar,
    UsageAndStyle,
}

impl fmt::Display for ErrorCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ErrorCategory::Accuracy => "Accuracy",
            ErrorCategory::Grammar => "Grammar",
            ErrorCategory::UsageAndStyle => "Usage and style",
        })
    }
}

#[derive(Debug, PartialEq, Eq, Hash)]
pub struct ErrorCode {
    pub code: &'static str,
    pub category: ErrorCategory,
    pub description: &'static str,
}

macro_rules! codes {
    ($($cat:ident $code:literal $desc:literal;)*) => {
        static REGISTRY: &[ErrorCode] = &[
            $(ErrorCode { code: $code, category: ErrorCategory::$cat, description: $desc },)*
        ];
    };
}

codes! {
    Accuracy "CW" "Choice of word. The word or expression is not a good choice.";
    Accuracy "IF" "Information structure not preserved.";
    Accuracy "MC" "Meaning has been changed because of inappropriate restructuring, e.g., changing the passive to active or vice versa.";
    Accuracy "MT" "Mistranslation due to inadequate comprehension or misinterpretation of the source text.";
    Accuracy "NA" "The translation conveys a different meaning from that of the source text.";
    Accuracy "NC" "Meaning not clear, e.g., because of ambiguity, vagueness or syntactic problems.";
    Accuracy "OM" "Omission. Part of the original has been left untranslated.";
    Accuracy "OT" "Over-translation. Too much has been read into the source text.";
    Accuracy "TL" "Too literal, affecting comprehensibility.";
    Accuracy "UT" "Under-translation. Meaning is not adequately captured in translation.";
    Grammar "Art" "Article.";
    Grammar "Det" "Determiner.";
    Grammar "MD" "Modality.";
    Grammar "NB" "Number.";
    Grammar "PN" "Punctuation.";
    Grammar "Prep" "Wrong preposition.";
    Grammar "PS" "Part of speech.";
    Grammar "SP" "Spelling or wrong character.";
    Grammar "ST" "The sentence or part of the sentence is ill-formed or ambiguous.";
    Grammar "SV" "Subject verb agreement.";
    Grammar "TN" "Tense problem.";
    Grammar "WO" "Word order.";
    UsageAndStyle "CL" "Collocation problem.";
    UsageAndStyle "CN" "The word or expression has connotation not appropriate in the context.";
    UsageAndStyle "CO" "Connective problem, e.g., inappropriate connectives.";
    UsageAndStyle "IC" "Inconsistent use of a word; or incoherence between clauses or sentences.";
    UsageAndStyle "ID" "Idiomaticity, i.e., unidiomatic expression.";
    UsageAndStyle "RF" "Reference problem, e.g., ambiguous use of a pronoun.";
    UsageAndStyle "RN" "Redundancy: the word or expression should be deleted.";
    UsageAndStyle "SL" "Stylistic problems, e.g., the word or expression is not of an appropriate style.";
    UsageAndStyle "TS" "Transition problems: sentences not well connected; bad language flow.";
}

/// The full taxonomy in table order.
pub fn registry() -> &'static [ErrorCode] {
    REGISTRY
}

/// Exact, case-sensitive lookup (`Art`, `Det` and `Prep` keep their casing).
pub fn lookup(code: &str) -> Option<&'static ErrorCode> {
    REGISTRY.iter().find(|c| c.code == code)
}

/// Case-insensitive lookup used by the lenient parser.
fn lookup_loose(code: &str) -> Option<&'static ErrorCode> {
    lookup(code).or_else(|| REGISTRY.iter().find(|c| c.code.eq_ignore_ascii_case(code)))
}

/// A registry code; serialises as its short identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Code(&'static ErrorCode);

impl Code {
    pub fn new(code: &str) -> Option<Code> {
        lookup(code).map(Code)
    }

    pub fn as_str(&self) -> &'static str {
        self.0.code
    }

    pub fn info(&self) -> &'static ErrorCode {
        self.0
    }
}

impl fmt::Display for Code {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.0.code)
    }
}

impl Serialize for Code {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.0.code)
    }
}

impl<'de> Deserialize<'de> for Code {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Code::new(&s).ok_or_else(|| serde::de::Error::custom(format!("unknown proofread code {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub code: Code,
    /// Offending span of the translation, verbatim.
    pub excerpt: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub suggestion: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl AnnotationRecord {
    pub fn new(code: Code, excerpt: impl Into<String>, suggestion: Option<String>) -> Self {
        AnnotationRecord {
            code,
            excerpt: excerpt.into(),
            suggestion,
            note: None,
        }
    }
}

// ---------------------------------------------------------------------------
// Formatting

pub const NONE_LINE: &str = "NONE";

fn push_quoted(out: &mut String, text: &str) {
    out.push('"');
    for ch in text.chars() {
        match ch {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out.push('"');
}

pub fn format_annotations(records: &[AnnotationRecord]) -> String {
    if records.is_empty() {
        return NONE_LINE.to_string();
    }
    let mut out = String::new();
    for (i, r) in records.iter().enumerate() {
        if i > 0 {
            out.push_str("; ");
        }
        let _ = write!(out, "[{}] ", r.code);
        push_quoted(&mut out, &r.excerpt);
        if let Some(s) = &r.suggestion {
            out.push_str(" -> ");
            push_quoted(&mut out, s);
        }
        if let Some(n) = &r.note {
            out.push_str(" # ");
            push_quoted(&mut out, n);
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Parsing

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ParseWarning {
    /// A bracketed code that is not in the registry.
    UnknownCode { code: String, fragment: String },
    /// A code was found but no excerpt could be extracted.
    MissingExcerpt { code: String, fragment: String },
    /// Text that could not be read as annotations at all.
    Unparsed { fragment: String },
}

impl fmt::Display for ParseWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParseWarning::UnknownCode { code, fragment } => write!(f, "unknown code {code:?} in {fragment:?}"),
            ParseWarning::MissingExcerpt { code, fragment } => write!(f, "no excerpt for {code} in {fragment:?}"),
            ParseWarning::Unparsed { fragment } => write!(f, "unparsed annotation text {fragment:?}"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParsedAnnotations {
    pub records: Vec<AnnotationRecord>,
    pub warnings: Vec<ParseWarning>,
    /// True when the line matched the canonical grammar exactly.
    pub canonical: bool,
}

/// Parses the canonical grammar, falling back to best-effort extraction for
/// drifted model output. Never fails; problems surface as warnings.
pub fn parse_annotations(line: &str) -> ParsedAnnotations {
    match parse_strict(line) {
        Some(records) => ParsedAnnotations {
            records,
            warnings: Vec::new(),
            canonical: true,
        },
        None => parse_lenient(line),
    }
}

/// Canonical grammar only; `None` on any deviation.
pub fn parse_strict(line: &str) -> Option<Vec<AnnotationRecord>> {
    if line == NONE_LINE {
        return Some(Vec::new());
    }
    let mut cur = Cursor { rest: line };
    let mut out = Vec::new();
    loop {
        cur.eat("[")?;
        let end = cur.rest.find(']')?;
        let code = Code::new(&cur.rest[..end])?;
        cur.rest = &cur.rest[end + 1..];
        cur.eat(" ")?;
        let excerpt = cur.quoted()?;
        if excerpt.is_empty() {
            return None;
        }
        let suggestion = if cur.eat(" -> ").is_some() { Some(cur.quoted()?) } else { None };
        let note = if cur.eat(" # ").is_some() { Some(cur.quoted()?) } else { None };
        out.push(AnnotationRecord {
            code,
            excerpt,
            suggestion,
            note,
        });
        if cur.rest.is_empty() {
            return Some(out);
        }
        cur.eat("; ")?;
    }
}

struct Cursor<'a> {
    rest: &'a str,
}

impl Cursor<'_> {
    fn eat(&mut self, tok: &str) -> Option<()> {
        self.rest = self.rest.strip_prefix(tok)?;
        Some(())
    }

    fn quoted(&mut self) -> Option<String> {
        self.eat("\"")?;
        let mut out = String::new();
        let mut chars = self.rest.char_indices();
        while let Some((i, c)) = chars.next() {
            match c {
                '"' => {
                    self.rest = &self.rest[i + 1..];
                    return Some(out);
                }
                '\\' => match chars.next()?.1 {
                    '"' => out.push('"'),
                    '\\' => out.push('\\'),
                    'n' => out.push('\n'),
                    'r' => out.push('\r'),
                    _ => return None,
                },
                c => out.push(c),
            }
        }
        None
    }
}

fn marker_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"\[\s*(?P<b>[A-Za-z]{1,6})\s*\]|(?:^|[\s;,，；(（])(?P<c>[A-Za-z]{2,4})\s*[:：]").unwrap()
    })
}

fn quoted_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r#""((?:[^"\\]|\\.)*)"|“([^”]*)”|「([^」]*)」"#).unwrap())
}

fn arrow_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\s*(?:->|→|=>|⇒)\s*|\s+should be\s+|\s+instead of\s+|\s*應為\s*|\s*改為\s*").unwrap())
}

fn unescape_loose(s: &str) -> String {
    s.replace("\\\"", "\"").replace("\\\\", "\\")
}

fn trim_span(s: &str) -> &str {
    s.trim_matches(|c: char| c.is_whitespace() || matches!(c, ';' | ',' | '.' | '。' | '，' | '；' | ':' | '：'))
}

/// Best-effort extraction: every known code marker (`[CW]` or `CW:`) opens a
/// record whose body runs to the next marker.
pub fn parse_lenient(line: &str) -> ParsedAnnotations {
    let mut parsed = ParsedAnnotations::default();
    let trimmed = line.trim();
    if trimmed.is_empty() || trimmed.eq_ignore_ascii_case(NONE_LINE) {
        return parsed;
    }
    struct Marker<'a> {
        start: usize,
        body_start: usize,
        code: &'a str,
        bracketed: bool,
    }
    let mut markers = Vec::new();
    for caps in marker_regex().captures_iter(line) {
        let whole = caps.get(0).unwrap();
        let (m, bracketed) = match (caps.name("b"), caps.name("c")) {
            (Some(b), _) => (b, true),
            (None, Some(c)) => (c, false),
            _ => continue,
        };
        // Colon-form candidates that are not registry codes are ordinary prose.
        if !bracketed && lookup_loose(m.as_str()).is_none() {
            continue;
        }
        markers.push(Marker {
            start: whole.start(),
            body_start: whole.end(),
            code: m.as_str(),
            bracketed,
        });
    }
    if markers.is_empty() {
        parsed.warnings.push(ParseWarning::Unparsed {
            fragment: trimmed.to_string(),
        });
        return parsed;
    }
    let lead = trim_span(&line[..markers[0].start]);
    if !lead.is_empty() {
        parsed.warnings.push(ParseWarning::Unparsed {
            fragment: lead.to_string(),
        });
    }
    for (i, mk) in markers.iter().enumerate() {
        let body_end = markers.get(i + 1).map_or(line.len(), |n| n.start);
        let body = &line[mk.body_start..body_end];
        let fragment = line[mk.start..body_end].trim().to_string();
        let Some(info) = lookup_loose(mk.code) else {
            debug_assert!(mk.bracketed);
            parsed.warnings.push(ParseWarning::UnknownCode {
                code: mk.code.to_string(),
                fragment,
            });
            continue;
        };
        let (excerpt, suggestion) = extract_spans(body);
        match excerpt {
            Some(excerpt) if !excerpt.is_empty() => parsed.records.push(AnnotationRecord {
                code: Code(info),
                excerpt,
                suggestion,
                note: None,
            }),
            _ => parsed.warnings.push(ParseWarning::MissingExcerpt {
                code: info.code.to_string(),
                fragment,
            }),
        }
    }
    parsed
}

fn extract_spans(body: &str) -> (Option<String>, Option<String>) {
    let quoted: Vec<String> = quoted_regex()
        .captures_iter(body)
        .filter_map(|c| (1..=3).find_map(|g| c.get(g)).map(|m| unescape_loose(m.as_str())))
        .collect();
    if !quoted.is_empty() {
        let mut it = quoted.into_iter();
        let excerpt = it.next();
        return (excerpt, it.next());
    }
    let body = trim_span(body);
    if body.is_empty() {
        return (None, None);
    }
    if let Some(m) = arrow_regex().find(body) {
        let excerpt = trim_span(&body[..m.start()]);
        let after = trim_span(&body[m.end()..]);
        // The suggestion is the nearest span after the arrow.
        let suggestion = after.split_whitespace().next().map(|s| trim_span(s).to_string());
        return (Some(excerpt.to_string()), suggestion.filter(|s| !s.is_empty()));
    }
    (body.split_whitespace().next().map(|s| trim_span(s).to_string()), None)
}

/// Serde adapter storing annotation lists as one canonical line.
pub mod annotation_line {
    use super::*;

    pub fn serialize<S: Serializer>(records: &[AnnotationRecord], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format_annotations(records))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<AnnotationRecord>, D::Error> {
        let line = String::deserialize(d)?;
        parse_strict(&line).ok_or_else(|| serde::de::Error::custom(format!("non-canonical annotation line {line:?}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(code: &str, ex: &str, sug: Option<&str>) -> AnnotationRecord {
        AnnotationRecord::new(Code::new(code).unwrap(), ex, sug.map(str::to_string))
    }

    #[test]
    fn registry_shape() {
        let r = registry();
        assert_eq!(r.len(), 31);
        let count = |c| r.iter().filter(|e| e.category == c).count();
        assert_eq!(count(ErrorCategory::Accuracy), 10);
        assert_eq!(count(ErrorCategory::Grammar), 12);
        assert_eq!(count(ErrorCategory::UsageAndStyle), 9);
        let mut codes: Vec<_> = r.iter().map(|c| c.code).collect();
        codes.sort();
        codes.dedup();
        assert_eq!(codes.len(), 31);
    }

    #[test]
    fn omission_entry() {
        let om = lookup("OM").unwrap();
        assert_eq!(om.category, ErrorCategory::Accuracy);
        assert!(om.description.starts_with("Omission."));
        assert!(om.description.contains("Part of the original has been left untranslated."));
    }

    #[test]
    fn lookup_is_case_sensitive() {
        assert!(lookup("ZZ").is_none());
        assert!(lookup("Prep").is_some());
        assert!(lookup("PREP").is_none());
        assert_eq!(lookup_loose("PREP").unwrap().code, "Prep");
    }

    #[test]
    fn format_examples() {
        assert_eq!(format_annotations(&[]), "NONE");
        assert_eq!(
            format_annotations(&[rec("CW", "判案書", Some("判決書"))]),
            r#"[CW] "判案書" -> "判決書""#
        );
        assert_eq!(
            format_annotations(&[rec("OM", "a", None), rec("Art", "the", Some("a"))]),
            r#"[OM] "a"; [Art] "the" -> "a""#
        );
    }

    #[test]
    fn escapes_keep_one_line() {
        let r = rec("SP", "line1\nline\"2\\", Some("x\r"));
        let line = format_annotations(std::slice::from_ref(&r));
        assert!(!line.contains('\n') && !line.contains('\r'));
        assert_eq!(parse_strict(&line).unwrap(), vec![r]);
    }

    #[test]
    fn note_round_trips() {
        let mut r = rec("TN", "was", Some("is"));
        r.note = Some("present tense in holdings".into());
        let line = format_annotations(std::slice::from_ref(&r));
        assert_eq!(line, r#"[TN] "was" -> "is" # "present tense in holdings""#);
        assert_eq!(parse_annotations(&line).records, vec![r]);
    }

    #[test]
    fn strict_inverse() {
        let p = parse_annotations(r#"[CW] "判案書" -> "判決書""#);
        assert!(p.canonical);
        assert_eq!(p.records, vec![rec("CW", "判案書", Some("判決書"))]);
        assert!(parse_annotations("NONE").records.is_empty());
        assert!(parse_annotations("NONE").warnings.is_empty());
    }

    #[test]
    fn lenient_colon_form() {
        let p = parse_annotations("CW: 判案書 should be 判決書");
        assert!(!p.canonical);
        assert_eq!(p.records, vec![rec("CW", "判案書", Some("判決書"))]);
        assert!(p.warnings.is_empty());
    }

    #[test]
    fn lenient_missing_quotes_and_commas() {
        let p = parse_annotations("[CW] 判案書 -> 判決書, [OM] \"the appellant\"");
        assert_eq!(p.records.len(), 2);
        assert_eq!(p.records[0], rec("CW", "判案書", Some("判決書")));
        assert_eq!(p.records[1].excerpt, "the appellant");
    }

    #[test]
    fn lenient_trailing_prose() {
        let p = parse_annotations(r#"[CW] "判案書" -> "判決書" because the official term differs."#);
        assert_eq!(p.records, vec![rec("CW", "判案書", Some("判決書"))]);
    }

    #[test]
    fn unknown_code_is_warning() {
        let p = parse_annotations(r#"[ZZ] "x"; [MT] "y""#);
        assert_eq!(p.records, vec![rec("MT", "y", None)]);
        assert!(matches!(&p.warnings[..], [ParseWarning::UnknownCode { code, .. }] if code == "ZZ"));
    }

    #[test]
    fn prose_only_is_warning() {
        let p = parse_annotations("The translation looks fine to me.");
        assert!(p.records.is_empty());
        assert!(matches!(&p.warnings[..], [ParseWarning::Unparsed { .. }]));
        assert!(parse_annotations("none").warnings.is_empty());
    }

    #[test]
    fn code_serde_validates() {
        let r: AnnotationRecord = serde_json::from_str(r#"{"code":"Det","excerpt":"這"}"#).unwrap();
        assert_eq!(r.code.as_str(), "Det");
        assert!(serde_json::from_str::<AnnotationRecord>(r#"{"code":"XX","excerpt":"a"}"#).is_err());
    }
}
