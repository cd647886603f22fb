//! Answer generation backends and structured fact extraction.

mod mock;
mod parse;
mod remote;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use mock::ScriptedMock;
pub use parse::{
    is_canonical_key, parse_extraction, resolve_provenance, ExtractedFact, Extraction,
    ExtractionError, ParseWarning,
};
pub use remote::{AuditRecord, RemoteChat, GENERATION_API_KEY_VAR};

use crate::fusion::Prompt;
use crate::http::TransportError;

pub const DEFAULT_MAX_IN_FLIGHT: usize = 4;

#[derive(Debug, Error)]
pub enum GenerationError {
    #[error("prompt is empty")]
    EmptyPrompt,
    #[error("scripted mock has no answer for {key:?} and no fallback")]
    MockMiss { key: String },
    #[error("generation transport failed: {0}")]
    Transport(#[from] TransportError),
    #[error("generation response malformed: {0}")]
    BadResponse(String),
    #[error("backend misconfigured: {0}")]
    Config(String),
    #[error("mock script {path}: {reason}")]
    Script { path: String, reason: String },
}

/// The backend's answer text, verbatim, plus call metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawAnswer {
    pub text: String,
    pub backend: String,
    pub attempts: u32,
    /// Wall-clock latency; absent for the mock so that its runs stay reproducible.
    pub latency_ms: Option<u64>,
    pub request_hash: Option<String>,
}

#[derive(Debug)]
pub enum GenerationBackend {
    ScriptedMock(ScriptedMock),
    Remote(RemoteChat),
}

impl GenerationBackend {
    pub fn kind(&self) -> &'static str {
        match self {
            GenerationBackend::ScriptedMock(_) => "scripted_mock",
            GenerationBackend::Remote(_) => "remote",
        }
    }

    pub fn max_in_flight(&self) -> usize {
        match self {
            GenerationBackend::ScriptedMock(_) => DEFAULT_MAX_IN_FLIGHT,
            GenerationBackend::Remote(r) => r.max_in_flight(),
        }
    }

    pub fn generate(&self, prompt: &Prompt) -> Result<RawAnswer, GenerationError> {
        if prompt.rendered.trim().is_empty() {
            return Err(GenerationError::EmptyPrompt);
        }
        match self {
            GenerationBackend::ScriptedMock(m) => m.generate(prompt),
            GenerationBackend::Remote(r) => r.generate(prompt),
        }
    }
}
