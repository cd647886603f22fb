//! Parsing of the fenced `{"facts": [...]}` answer block.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use super::RawAnswer;
use crate::estimate::Estimate;
use crate::fusion::Prompt;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractedFact {
    pub fact_key: String,
    pub value: Estimate,
    pub unit: String,
    /// 1-based fragment numbers cited by the answer.
    pub sources: Vec<usize>,
    /// Fragment ids resolved from `sources` against the prompt.
    pub provenance: Vec<String>,
    /// The fact's JSON entry as it appeared in the answer.
    pub raw_span: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "warning", rename_all = "snake_case")]
pub enum ParseWarning {
    /// Kept, but not among the requested keys.
    UnexpectedKey { key: String },
    /// Requested but absent from the answer.
    MissingKey { key: String },
    /// `lower > upper`; the fact is rejected.
    InvertedRange { key: String, lower: f64, upper: f64 },
    InvalidKey { key: String },
    DuplicateKey { key: String },
    MalformedEntry { index: usize, reason: String },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Extraction {
    pub facts: Vec<ExtractedFact>,
    pub warnings: Vec<ParseWarning>,
}

#[derive(Debug, Error)]
#[error("no structured facts block found in answer: {raw:?}")]
pub struct ExtractionError {
    pub raw: String,
}

/// `segment(.segment)*` with segments of `[a-z0-9_]+`.
pub fn is_canonical_key(key: &str) -> bool {
    !key.is_empty()
        && key.split('.').all(|seg| {
            !seg.is_empty()
                && seg
                    .bytes()
                    .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_')
        })
}

fn fenced_blocks(text: &str) -> Vec<&str> {
    let mut blocks = Vec::new();
    let mut rest = text;
    while let Some(open) = rest.find("```") {
        let after = &rest[open + 3..];
        let body_start = after.find('\n').map_or(after.len(), |i| i + 1);
        let body = &after[body_start..];
        let Some(close) = body.find("```") else { break };
        blocks.push(&body[..close]);
        rest = &body[close + 3..];
    }
    blocks
}

// First JSON object carrying a "facts" array: fenced blocks first, then any `{` in the text.
fn find_facts_block(text: &str) -> Option<Vec<Value>> {
    let try_at = |s: &str| -> Option<Vec<Value>> {
        let mut stream = serde_json::Deserializer::from_str(s).into_iter::<Value>();
        match stream.next() {
            Some(Ok(Value::Object(mut obj))) => match obj.remove("facts") {
                Some(Value::Array(items)) => Some(items),
                _ => None,
            },
            _ => None,
        }
    };
    for block in fenced_blocks(text) {
        if let Some(start) = block.find('{') {
            if let Some(items) = try_at(&block[start..]) {
                return Some(items);
            }
        }
    }
    text.match_indices('{').find_map(|(i, _)| try_at(&text[i..]))
}

fn parse_value(v: &Value) -> Result<Estimate, String> {
    match v {
        Value::Number(n) => n
            .as_f64()
            .filter(|x| x.is_finite())
            .map(Estimate::Point)
            .ok_or_else(|| format!("unrepresentable number {n}")),
        Value::Object(o) => {
            let bound = |name: &str| {
                o.get(name)
                    .and_then(Value::as_f64)
                    .ok_or_else(|| format!("range is missing numeric \"{name}\""))
            };
            Ok(Estimate::Range { lower: bound("lower")?, upper: bound("upper")? })
        }
        other => Err(format!("value must be a number or {{lower, upper}}, got {other}")),
    }
}

/// Extracts facts from a raw answer.
///
/// Facts outside `expected_keys` are kept and flagged; expected keys that are
/// absent are reported, never filled in. Entries that break an invariant
/// (inverted range, empty unit, non-canonical key) are dropped with a warning.
pub fn parse_extraction(raw: &RawAnswer, expected_keys: &[String]) -> Result<Extraction, ExtractionError> {
    let items = find_facts_block(&raw.text).ok_or_else(|| ExtractionError { raw: raw.text.clone() })?;
    let expected: BTreeSet<&str> = expected_keys.iter().map(String::as_str).collect();
    let mut out = Extraction::default();
    let mut seen = BTreeSet::new();

    for (index, item) in items.iter().enumerate() {
        let malformed = |reason: String| ParseWarning::MalformedEntry { index, reason };
        let Some(key) = item.get("key").and_then(Value::as_str) else {
            out.warnings.push(malformed("missing string \"key\"".into()));
            continue;
        };
        if !is_canonical_key(key) {
            out.warnings.push(ParseWarning::InvalidKey { key: key.to_string() });
            continue;
        }
        let value = match item.get("value").map(parse_value) {
            Some(Ok(v)) => v,
            Some(Err(reason)) => {
                out.warnings.push(malformed(format!("{key}: {reason}")));
                continue;
            }
            None => {
                out.warnings.push(malformed(format!("{key}: missing \"value\"")));
                continue;
            }
        };
        if let Estimate::Range { lower, upper } = value {
            if lower > upper {
                out.warnings.push(ParseWarning::InvertedRange { key: key.to_string(), lower, upper });
                continue;
            }
        }
        let unit = item.get("unit").and_then(Value::as_str).unwrap_or("").trim();
        if unit.is_empty() {
            out.warnings.push(malformed(format!("{key}: missing unit")));
            continue;
        }
        if !seen.insert(key.to_string()) {
            out.warnings.push(ParseWarning::DuplicateKey { key: key.to_string() });
            continue;
        }
        if !expected.contains(key) {
            out.warnings.push(ParseWarning::UnexpectedKey { key: key.to_string() });
        }
        let sources = item
            .get("sources")
            .and_then(Value::as_array)
            .map(|a| a.iter().filter_map(Value::as_u64).map(|n| n as usize).collect())
            .unwrap_or_default();
        out.facts.push(ExtractedFact {
            fact_key: key.to_string(),
            value,
            unit: unit.to_string(),
            sources,
            provenance: Vec::new(),
            raw_span: item.to_string(),
        });
    }
    for key in expected {
        if !seen.contains(key) {
            out.warnings.push(ParseWarning::MissingKey { key: key.to_string() });
        }
    }
    Ok(out)
}

/// Maps each fact's cited fragment numbers onto the prompt's fragment ids.
/// Numbers outside `1..=fragments.len()` are ignored.
pub fn resolve_provenance(facts: &mut [ExtractedFact], prompt: &Prompt) {
    for fact in facts {
        fact.provenance = fact
            .sources
            .iter()
            .filter_map(|&n| n.checked_sub(1).and_then(|i| prompt.fragments.get(i)))
            .map(|f| f.source_id.clone())
            .collect();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw(text: &str) -> RawAnswer {
        RawAnswer {
            text: text.into(),
            backend: "test".into(),
            attempts: 1,
            latency_ms: None,
            request_hash: None,
        }
    }

    #[test]
    fn point_fact() {
        let ex = parse_extraction(
            &raw(r#"Here: {"facts":[{"key":"k1","value":13500,"unit":"kWh/t"}]}"#),
            &["k1".into()],
        )
        .unwrap();
        assert_eq!(ex.facts.len(), 1);
        assert_eq!(ex.facts[0].fact_key, "k1");
        assert_eq!(ex.facts[0].value, Estimate::Point(13500.0));
        assert_eq!(ex.facts[0].unit, "kWh/t");
        assert!(ex.warnings.is_empty());
    }

    #[test]
    fn range_fact_in_fence() {
        let text = "Answer:\n```json\n{\"facts\":[{\"key\":\"k1\",\"value\":{\"lower\":12500,\"upper\":14000},\"unit\":\"kWh/t\",\"sources\":[2]}]}\n```\n";
        let ex = parse_extraction(&raw(text), &["k1".into()]).unwrap();
        assert_eq!(ex.facts[0].value, Estimate::Range { lower: 12500.0, upper: 14000.0 });
        assert_eq!(ex.facts[0].sources, [2]);
    }

    #[test]
    fn prose_only_is_error() {
        let err = parse_extraction(&raw("About 13,500 kWh per ton."), &[]).unwrap_err();
        assert_eq!(err.raw, "About 13,500 kWh per ton.");
    }

    #[test]
    fn inverted_range_rejected_not_swapped() {
        let ex = parse_extraction(
            &raw(r#"{"facts":[{"key":"k","value":{"lower":5,"upper":3},"unit":"kg"}]}"#),
            &["k".into()],
        )
        .unwrap();
        assert!(ex.facts.is_empty());
        assert!(matches!(ex.warnings[0], ParseWarning::InvertedRange { .. }));
        assert!(ex.warnings.contains(&ParseWarning::MissingKey { key: "k".into() }));
    }

    #[test]
    fn unexpected_kept_missing_reported() {
        let ex = parse_extraction(
            &raw(r#"{"facts":[{"key":"extra","value":1,"unit":"kg"}]}"#),
            &["wanted".into()],
        )
        .unwrap();
        assert_eq!(ex.facts.len(), 1);
        assert_eq!(
            ex.warnings,
            vec![
                ParseWarning::UnexpectedKey { key: "extra".into() },
                ParseWarning::MissingKey { key: "wanted".into() }
            ]
        );
    }

    #[test]
    fn skips_non_facts_objects() {
        let text = r#"{"note": "x"} then {"facts":[{"key":"a.b","value":2,"unit":"t"}]}"#;
        let ex = parse_extraction(&raw(text), &[]).unwrap();
        assert_eq!(ex.facts[0].fact_key, "a.b");
    }

    #[test]
    fn key_syntax() {
        assert!(is_canonical_key("aluminum.smelting.electricity_kwh_per_t"));
        assert!(!is_canonical_key("Aluminum.x"));
        assert!(!is_canonical_key("a..b"));
        assert!(!is_canonical_key(""));
    }
}
