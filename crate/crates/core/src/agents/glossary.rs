//! Bilingual term glossary and term matching for Translator prompts.

use std::collections::BTreeSet;
use std::path::Path;

use aho_corasick::{AhoCorasick, AhoCorasickBuilder, MatchKind};
use serde::{Deserialize, Serialize};

pub const DEFAULT_GLOSSARY_ID: &str = "doj-combined";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GlossaryTerm {
    pub term: String,
    pub translation: String,
}

#[derive(Debug, thiserror::Error)]
pub enum GlossaryError {
    #[error("cannot read glossary {path}: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },
    #[error("glossary automaton: {0}")]
    Build(String),
}

pub struct Glossary {
    pub id: String,
    terms: Vec<GlossaryTerm>,
    matcher: AhoCorasick,
}

impl std::fmt::Debug for Glossary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Glossary").field("id", &self.id).field("terms", &self.terms.len()).finish()
    }
}

impl Glossary {
    pub fn new(id: impl Into<String>, terms: Vec<GlossaryTerm>) -> Result<Self, GlossaryError> {
        let matcher = AhoCorasickBuilder::new()
            .ascii_case_insensitive(true)
            .match_kind(MatchKind::Standard)
            .build(terms.iter().map(|t| t.term.as_str()))
            .map_err(|e| GlossaryError::Build(e.to_string()))?;
        Ok(Glossary {
            id: id.into(),
            terms,
            matcher,
        })
    }

    /// Reads a two-column CSV with a `term,translation` header.
    pub fn from_csv(id: impl Into<String>, path: &Path) -> Result<Self, GlossaryError> {
        let err = |source| GlossaryError::Csv {
            path: path.display().to_string(),
            source,
        };
        let mut rdr = csv::Reader::from_path(path).map_err(err)?;
        let terms = rdr
            .deserialize()
            .collect::<Result<Vec<GlossaryTerm>, _>>()
            .map_err(err)?;
        Self::new(id, terms)
    }

    pub fn terms(&self) -> &[GlossaryTerm] {
        &self.terms
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }
}

fn is_word_char(c: Option<char>) -> bool {
    c.is_some_and(|c| c.is_alphanumeric())
}

/// Glossary terms occurring in `src`: word-bounded, case-insensitive,
/// leftmost-longest with no overlaps. Each term is reported once, in order
/// of first occurrence.
pub fn glossary_inject(src: &str, glossary: &Glossary) -> Vec<(String, String)> {
    let mut hits: Vec<(usize, usize, usize)> = glossary
        .matcher
        .find_overlapping_iter(src)
        .filter(|m| {
            let before = src[..m.start()].chars().next_back();
            let after = src[m.end()..].chars().next();
            let term = &src[m.start()..m.end()];
            // Only enforce word boundaries where the term itself starts/ends with a word character.
            let starts_word = is_word_char(term.chars().next()) && term.is_ascii();
            let ends_word = is_word_char(term.chars().next_back()) && term.is_ascii();
            !(starts_word && is_word_char(before)) && !(ends_word && is_word_char(after))
        })
        .map(|m| (m.start(), m.end(), m.pattern().as_usize()))
        .collect();
    // Leftmost first, longest first at the same start.
    hits.sort_by(|a, b| a.0.cmp(&b.0).then(b.1.cmp(&a.1)));
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    let mut cursor = 0;
    for (start, end, pat) in hits {
        if start < cursor {
            continue;
        }
        cursor = end;
        if seen.insert(pat) {
            let t = &glossary.terms[pat];
            out.push((t.term.clone(), t.translation.clone()));
        }
    }
    out
}

/// Constraint lines appended to the Translator role prompt.
pub fn constraint_block(matches: &[(String, String)]) -> Option<String> {
    if matches.is_empty() {
        return None;
    }
    let mut s = String::from("Use these glossary translations:");
    for (term, tr) in matches {
        s.push_str(&format!("\n{term} => {tr}"));
    }
    Some(s)
}
