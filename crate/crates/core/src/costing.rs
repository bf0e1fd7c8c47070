//! Word and token accounting and cost comparison.
//!
//! Currency is `rust_decimal::Decimal` throughout: sums are exact, so totals
//! do not depend on summation order. Display rounds half away from zero to
//! two places.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use rust_decimal::prelude::ToPrimitive;
use rust_decimal::{Decimal, RoundingStrategy};
use serde::{Deserialize, Deserializer, Serialize};

use crate::agents::AgentRole;
use crate::jsonl::{self, JsonlError};

pub fn is_cjk(c: char) -> bool {
    matches!(c as u32,
        0x3000..=0x303F   // CJK punctuation
        | 0x3400..=0x4DBF
        | 0x4E00..=0x9FFF
        | 0xF900..=0xFAFF
        | 0xFF00..=0xFFEF // full-width forms
        | 0x20000..=0x2FA1F)
}

fn is_cjk_lang(lang: &str) -> bool {
    let l = lang.to_ascii_lowercase();
    l.starts_with("zh") || l.starts_with("ja") || l.starts_with("ko")
}

/// Whitespace-delimited tokens for space-delimited languages; for Chinese,
/// Japanese and Korean every non-whitespace character counts as one word.
pub fn count_words(text: &str, lang: &str) -> usize {
    if is_cjk_lang(lang) {
        text.chars().filter(|c| !c.is_whitespace()).count()
    } else {
        text.split_whitespace().count()
    }
}

/// Token estimate when a provider reports no usage: one token per CJK
/// character plus one per four other characters (rounded up).
pub fn estimate_tokens(text: &str) -> u64 {
    let (cjk, other) = text
        .chars()
        .fold((0u64, 0u64), |(c, o), ch| if is_cjk(ch) { (c + 1, o) } else { (c, o + 1) });
    cjk + other.div_ceil(4)
}

fn decimal_lenient<'de, D: Deserializer<'de>>(d: D) -> Result<Decimal, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        S(String),
        F(f64),
        I(i64),
    }
    match Raw::deserialize(d)? {
        Raw::S(s) => Decimal::from_str(s.trim()).map_err(serde::de::Error::custom),
        // Shortest round-trip rendering keeps values like 0.12 exact.
        Raw::F(f) => Decimal::from_str(&f.to_string()).map_err(serde::de::Error::custom),
        Raw::I(i) => Ok(Decimal::from(i)),
    }
}

/// Per-1K-token prices of one backend.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendPrice {
    pub backend_id: String,
    #[serde(deserialize_with = "decimal_lenient", serialize_with = "rust_decimal::serde::str::serialize")]
    pub in_price: Decimal,
    #[serde(deserialize_with = "decimal_lenient", serialize_with = "rust_decimal::serde::str::serialize")]
    pub out_price: Decimal,
    #[serde(default = "usd")]
    pub currency: String,
}

fn usd() -> String {
    "USD".into()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HumanWork {
    Translation,
    Editing,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PricingTable {
    pub per_word_human_translation: Decimal,
    pub per_word_human_editing: Decimal,
    pub backends: BTreeMap<String, BackendPrice>,
}

impl Default for PricingTable {
    fn default() -> Self {
        PricingTable {
            per_word_human_translation: Decimal::new(12, 2),
            per_word_human_editing: Decimal::new(4, 2),
            backends: BTreeMap::new(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CostError {
    #[error(transparent)]
    File(#[from] JsonlError),
    #[error("no price for backend {0:?}")]
    Unpriced(String),
    #[error("negative price for backend {0:?}")]
    NegativePrice(String),
    #[error("API cost must be positive to compute ratios")]
    ZeroApiCost,
}

impl PricingTable {
    pub fn add(&mut self, price: BackendPrice) -> Result<(), CostError> {
        if price.in_price.is_sign_negative() || price.out_price.is_sign_negative() {
            return Err(CostError::NegativePrice(price.backend_id));
        }
        self.backends.insert(price.backend_id.clone(), price);
        Ok(())
    }

    /// Loads backend prices from an object-per-line pricing file; human
    /// rates keep their defaults.
    pub fn load(path: &Path) -> Result<Self, CostError> {
        let mut t = PricingTable::default();
        for (_, p) in jsonl::read_records::<BackendPrice>(path)? {
            t.add(p)?;
        }
        Ok(t)
    }
}

pub fn human_cost(words: u64, pricing: &PricingTable, kind: HumanWork) -> Decimal {
    let rate = match kind {
        HumanWork::Translation => pricing.per_word_human_translation,
        HumanWork::Editing => pricing.per_word_human_editing,
    };
    Decimal::from(words) * rate
}

/// Token usage of one agent call.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UsageRecord {
    pub run_id: String,
    pub doc_id: String,
    pub seg_id: u32,
    pub role: AgentRole,
    pub backend_id: String,
    pub input_tokens: u64,
    pub output_tokens: u64,
    /// True when the counts come from [`estimate_tokens`] rather than the provider.
    #[serde(default)]
    pub estimated: bool,
}

/// Append-only usage ledger.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct UsageLedger {
    records: Vec<UsageRecord>,
}

impl UsageLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn append(&mut self, r: UsageRecord) {
        self.records.push(r);
    }

    pub fn extend(&mut self, rs: impl IntoIterator<Item = UsageRecord>) {
        self.records.extend(rs);
    }

    pub fn records(&self) -> &[UsageRecord] {
        &self.records
    }

    pub fn load(path: &Path) -> Result<Self, JsonlError> {
        Ok(UsageLedger {
            records: jsonl::read_records(path)?.into_iter().map(|(_, r)| r).collect(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), JsonlError> {
        jsonl::write_records(path, &self.records)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ApiCost {
    pub per_role: BTreeMap<AgentRole, Decimal>,
    pub total: Decimal,
}

pub fn record_cost(r: &UsageRecord, pricing: &PricingTable) -> Result<Decimal, CostError> {
    let p = pricing
        .backends
        .get(&r.backend_id)
        .ok_or_else(|| CostError::Unpriced(r.backend_id.clone()))?;
    let thousand = Decimal::from(1000);
    Ok(Decimal::from(r.input_tokens) * p.in_price / thousand + Decimal::from(r.output_tokens) * p.out_price / thousand)
}

pub fn api_cost(ledger: &[UsageRecord], pricing: &PricingTable) -> Result<ApiCost, CostError> {
    let mut out = ApiCost::default();
    for r in ledger {
        let c = record_cost(r, pricing)?;
        *out.per_role.entry(r.role).or_default() += c;
        out.total += c;
    }
    Ok(out)
}

pub fn round_money(d: Decimal) -> Decimal {
    d.round_dp_with_strategy(2, RoundingStrategy::MidpointAwayFromZero)
}

/// `1390.2` → `"1,390.20"`.
pub fn format_money(d: Decimal) -> String {
    let r = round_money(d);
    let s = format!("{:.2}", r.abs());
    let (int, frac) = s.split_once('.').unwrap_or((&s, "00"));
    let mut grouped = String::new();
    for (i, ch) in int.chars().enumerate() {
        if i > 0 && (int.len() - i) % 3 == 0 {
            grouped.push(',');
        }
        grouped.push(ch);
    }
    format!("{}{grouped}.{frac}", if r.is_sign_negative() && !r.is_zero() { "-" } else { "" })
}

/// `cost_a` as a percentage saving relative to `cost_b`: `(b - a) / b * 100`.
pub fn saving_percent(cost_a: Decimal, cost_b: Decimal) -> Option<f64> {
    if cost_b.is_zero() {
        return None;
    }
    ((cost_b - cost_a) / cost_b * Decimal::from(100)).to_f64()
}

pub fn cost_ratio(human: Decimal, api: Decimal) -> Result<f64, CostError> {
    if api <= Decimal::ZERO {
        return Err(CostError::ZeroApiCost);
    }
    Ok((human / api).to_f64().unwrap_or(f64::INFINITY))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SystemCost {
    pub system: String,
    pub api_total: Decimal,
    /// Human translation cost divided by this system's API cost.
    pub human_ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostReport {
    pub human_translation: Decimal,
    pub systems: Vec<SystemCost>,
    /// (system a, system b, saving of a relative to b in percent)
    pub savings: Vec<(String, String, f64)>,
}

pub fn cost_report(human: Decimal, api_totals: &[(String, Decimal)]) -> Result<CostReport, CostError> {
    let mut systems = Vec::new();
    for (name, total) in api_totals {
        systems.push(SystemCost {
            system: name.clone(),
            api_total: *total,
            human_ratio: cost_ratio(human, *total)?,
        });
    }
    let mut savings = Vec::new();
    for a in api_totals {
        for b in api_totals {
            if a.0 != b.0 {
                if let Some(p) = saving_percent(a.1, b.1) {
                    savings.push((a.0.clone(), b.0.clone(), p));
                }
            }
        }
    }
    Ok(CostReport {
        human_translation: human,
        systems,
        savings,
    })
}

impl CostReport {
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "human translation: US${}", format_money(self.human_translation));
        let _ = writeln!(out, "{:<16} {:>12} {:>14}", "system", "api cost", "human / api");
        for s in &self.systems {
            let _ = writeln!(
                out,
                "{:<16} {:>12} {:>13.1}x",
                s.system,
                format!("US${}", format_money(s.api_total)),
                s.human_ratio
            );
        }
        for (a, b, p) in &self.savings {
            let _ = writeln!(out, "{a} vs {b}: {p:+.2}%");
        }
        out
    }
}
