use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::{GenerationError, RawAnswer};
use crate::fusion::Prompt;

/// Deterministic backend answering from a fixed table.
///
/// Lookup order: the prompt's query id, then its query text, then the fallback.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScriptedMock {
    pub script: BTreeMap<String, String>,
    pub fallback: Option<String>,
}

impl ScriptedMock {
    pub fn new(script: BTreeMap<String, String>) -> Self {
        Self { script, fallback: None }
    }

    pub fn with_fallback(mut self, fallback: impl Into<String>) -> Self {
        self.fallback = Some(fallback.into());
        self
    }

    /// Reads a JSON object mapping query keys to answer texts.
    pub fn load(path: &Path) -> Result<Self, GenerationError> {
        let err = |reason: String| GenerationError::Script {
            path: path.display().to_string(),
            reason,
        };
        let text = fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        let script = serde_json::from_str(&text).map_err(|e| err(e.to_string()))?;
        Ok(Self::new(script))
    }

    pub fn generate(&self, prompt: &Prompt) -> Result<RawAnswer, GenerationError> {
        let text = prompt
            .query_id
            .as_ref()
            .and_then(|id| self.script.get(id))
            .or_else(|| self.script.get(&prompt.query))
            .or(self.fallback.as_ref())
            .ok_or_else(|| GenerationError::MockMiss {
                key: prompt.lookup_key().to_string(),
            })?;
        Ok(RawAnswer {
            text: text.clone(),
            backend: "scripted_mock".into(),
            attempts: 1,
            latency_ms: None,
            request_hash: None,
        })
    }
}
