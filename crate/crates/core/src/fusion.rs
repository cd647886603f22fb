//! Datasource strategy selection and enhanced-prompt construction.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::LengthClass;

pub const TEMPLATE_VERSION: &str = "cfa-prompt/v1";
pub const DEFAULT_PROMPT_BUDGET: usize = 12_000;

const ROLE_HEADER: &str = "You are a carbon footprint accounting (CFA) assistant. \
Answer the question with quantitative life cycle inventory data. \
When reference information is given, base the answer on it and cite the fragment numbers you used.";

const NO_REFERENCE: &str = "(no reference information provided)";

/// Demands the structured answer block understood by the extraction parser.
pub const SCHEMA_INSTRUCTION: &str = "Respond with a fenced ```json block holding one object of the form \
{\"facts\": [{\"key\": \"<canonical.fact.key>\", \"value\": <number> or {\"lower\": <number>, \"upper\": <number>}, \
\"unit\": \"<unit>\", \"sources\": [<fragment numbers>]}]}. \
Use one entry per requested data point and omit data points you cannot determine.";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FusionError {
    #[error("query is empty")]
    EmptyQuery,
    #[error("strategy {0:?} takes no reference fragments")]
    UnexpectedFragments(Strategy),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Strategy {
    /// Long datasource: retrieve the top-K chunks.
    RagLong,
    /// Short datasource: pass the full texts.
    ShortDirect,
    /// No datasource: the query alone.
    NoDatasource,
}

pub fn select_strategy(class: LengthClass) -> Strategy {
    match class {
        LengthClass::Long => Strategy::RagLong,
        LengthClass::Short => Strategy::ShortDirect,
        LengthClass::None => Strategy::NoDatasource,
    }
}

/// One reference passage: a retrieved chunk or a literal short text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fragment {
    /// Chunk id for retrieved fragments, document id or label for literal ones.
    pub source_id: String,
    pub text: String,
    pub similarity: Option<f64>,
}

impl Fragment {
    pub fn retrieved(chunk_id: impl Into<String>, text: impl Into<String>, similarity: f64) -> Self {
        Self {
            source_id: chunk_id.into(),
            text: text.into(),
            similarity: Some(similarity),
        }
    }

    pub fn literal(label: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            source_id: label.into(),
            text: text.into(),
            similarity: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "note", rename_all = "snake_case")]
pub enum PromptNote {
    DuplicateCollapsed { kept: String, dropped: String },
    DroppedForBudget { source_id: String },
    OverBudget { rendered_chars: usize, budget: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prompt {
    pub query: String,
    /// Benchmark query id, used as the scripted-mock key when present.
    pub query_id: Option<String>,
    pub strategy: Strategy,
    pub fragments: Vec<Fragment>,
    pub rendered: String,
    pub schema_instruction: String,
    pub template_version: String,
    pub notes: Vec<PromptNote>,
}

impl Prompt {
    pub fn with_query_id(mut self, id: impl Into<String>) -> Self {
        self.query_id = Some(id.into());
        self
    }

    /// Key used to look the prompt up in a scripted answer table.
    pub fn lookup_key(&self) -> &str {
        self.query_id.as_deref().unwrap_or(&self.query)
    }
}

fn render(query: &str, fragments: &[Fragment]) -> String {
    let mut out = String::new();
    out.push_str(ROLE_HEADER);
    out.push_str("\n\nReference information:\n");
    if fragments.is_empty() {
        out.push_str(NO_REFERENCE);
        out.push('\n');
    }
    for (i, f) in fragments.iter().enumerate() {
        out.push_str(&format!("[{}] {}\n", i + 1, f.text));
    }
    out.push_str("\nQuestion: ");
    out.push_str(query);
    out.push_str("\n\n");
    out.push_str(SCHEMA_INSTRUCTION);
    out.push('\n');
    out
}

/// Renders the enhanced prompt `[header; fragments; query; schema]`.
///
/// Fragments keep their input order. Exact-duplicate texts collapse to the
/// first occurrence; if the rendered prompt exceeds `budget` characters,
/// lowest-similarity fragments (or, without similarities, the last ones) are
/// dropped until it fits. Both actions are recorded in `notes`.
pub fn build_prompt(
    query: &str,
    strategy: Strategy,
    fragments: Vec<Fragment>,
    budget: usize,
) -> Result<Prompt, FusionError> {
    if query.trim().is_empty() {
        return Err(FusionError::EmptyQuery);
    }
    if strategy == Strategy::NoDatasource && !fragments.is_empty() {
        return Err(FusionError::UnexpectedFragments(strategy));
    }

    let mut notes = Vec::new();
    let mut seen: HashSet<&str> = HashSet::new();
    let mut first_owner: Vec<(&str, &str)> = Vec::new();
    let mut keep = vec![true; fragments.len()];
    for (i, f) in fragments.iter().enumerate() {
        if !seen.insert(f.text.as_str()) {
            keep[i] = false;
            let kept = first_owner
                .iter()
                .find(|(t, _)| *t == f.text)
                .map(|(_, id)| id.to_string())
                .unwrap_or_default();
            notes.push(PromptNote::DuplicateCollapsed { kept, dropped: f.source_id.clone() });
        } else {
            first_owner.push((f.text.as_str(), f.source_id.as_str()));
        }
    }
    let mut kept: Vec<Fragment> = fragments
        .into_iter()
        .zip(keep)
        .filter_map(|(f, k)| k.then_some(f))
        .collect();

    let mut rendered = render(query, &kept);
    while rendered.chars().count() > budget && !kept.is_empty() {
        // lowest similarity; among equals (or no similarities) the latest one
        let victim = kept
            .iter()
            .enumerate()
            .min_by(|(ia, a), (ib, b)| {
                let sa = a.similarity.unwrap_or(f64::NEG_INFINITY);
                let sb = b.similarity.unwrap_or(f64::NEG_INFINITY);
                sa.total_cmp(&sb).then(ib.cmp(ia))
            })
            .map(|(i, _)| i)
            .expect("non-empty");
        let dropped = kept.remove(victim);
        notes.push(PromptNote::DroppedForBudget { source_id: dropped.source_id });
        rendered = render(query, &kept);
    }
    let rendered_chars = rendered.chars().count();
    if rendered_chars > budget {
        notes.push(PromptNote::OverBudget { rendered_chars, budget });
    }

    Ok(Prompt {
        query: query.to_string(),
        query_id: None,
        strategy,
        fragments: kept,
        rendered,
        schema_instruction: SCHEMA_INSTRUCTION.to_string(),
        template_version: TEMPLATE_VERSION.to_string(),
        notes,
    })
}
