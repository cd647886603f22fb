//! Run configuration: a JSON file whose fields all have defaults, later
//! overridden by command-line flags.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{ChunkConfig, DEFAULT_CHUNK_SIZE, DEFAULT_LENGTH_THRESHOLD, DEFAULT_OVERLAP};
use crate::fusion::{DEFAULT_PROMPT_BUDGET, TEMPLATE_VERSION};
use crate::generation::{GenerationBackend, GenerationError, RemoteChat, ScriptedMock, DEFAULT_MAX_IN_FLIGHT};
use crate::http::RetryPolicy;
use crate::index::DEFAULT_K;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config file {path}: {reason}")]
    File { path: String, reason: String },
    #[error("{what} path {path} does not exist")]
    MissingPath { what: &'static str, path: String },
    #[error("{0} is required but not configured")]
    Unset(&'static str),
    #[error("template version {pinned:?} is pinned, this build renders {TEMPLATE_VERSION:?}")]
    TemplateVersion { pinned: String },
    #[error("invalid setting: {0}")]
    Invalid(String),
    #[error(transparent)]
    Backend(#[from] GenerationError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendSpec {
    ScriptedMock {
        #[serde(default)]
        script: Option<PathBuf>,
        #[serde(default)]
        fallback: Option<String>,
    },
    Remote {
        endpoint: String,
        model: String,
        #[serde(default)]
        retry: RetryPolicy,
        #[serde(default = "default_in_flight")]
        max_in_flight: usize,
    },
}

fn default_in_flight() -> usize {
    DEFAULT_MAX_IN_FLIGHT
}

impl Default for BackendSpec {
    fn default() -> Self {
        BackendSpec::ScriptedMock { script: None, fallback: None }
    }
}

impl BackendSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            BackendSpec::ScriptedMock { .. } => "scripted_mock",
            BackendSpec::Remote { .. } => "remote",
        }
    }

    pub fn build(&self, audit_log: Option<&Path>) -> Result<GenerationBackend, ConfigError> {
        Ok(match self {
            BackendSpec::ScriptedMock { script, fallback } => {
                let mut mock = match script {
                    Some(p) => ScriptedMock::load(p)?,
                    None => ScriptedMock::default(),
                };
                mock.fallback = fallback.clone();
                GenerationBackend::ScriptedMock(mock)
            }
            BackendSpec::Remote { endpoint, model, retry, max_in_flight } => {
                let mut chat = RemoteChat::new(endpoint.clone(), model.clone())
                    .with_retry(*retry)
                    .with_max_in_flight(*max_in_flight);
                if let Some(p) = audit_log {
                    chat = chat.with_audit_log(p)?;
                }
                GenerationBackend::Remote(chat)
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub catalog: Option<PathBuf>,
    pub index: Option<PathBuf>,
    pub factor_db: Option<PathBuf>,
    pub benchmark: Option<PathBuf>,
    pub report_out: Option<PathBuf>,
    pub audit_log: Option<PathBuf>,
    pub encoder: String,
    pub k: usize,
    pub chunk_size: usize,
    pub overlap: usize,
    pub length_threshold: usize,
    pub backend: BackendSpec,
    pub prompt_budget: usize,
    pub template_version: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            catalog: None,
            index: None,
            factor_db: None,
            benchmark: None,
            report_out: None,
            audit_log: None,
            encoder: "lexical:64".into(),
            k: DEFAULT_K,
            chunk_size: DEFAULT_CHUNK_SIZE,
            overlap: DEFAULT_OVERLAP,
            length_threshold: DEFAULT_LENGTH_THRESHOLD,
            backend: BackendSpec::default(),
            prompt_budget: DEFAULT_PROMPT_BUDGET,
            template_version: TEMPLATE_VERSION.into(),
        }
    }
}

fn rebase(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(path) = p {
        if path.is_relative() {
            *path = base.join(&*path);
        }
    }
}

impl RunConfig {
    /// Reads a JSON config. Relative paths are resolved against the file's directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let err = |reason: String| ConfigError::File { path: path.display().to_string(), reason };
        let text = fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        let mut cfg: RunConfig = serde_json::from_str(&text).map_err(|e| err(e.to_string()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [
            &mut cfg.catalog,
            &mut cfg.index,
            &mut cfg.factor_db,
            &mut cfg.benchmark,
            &mut cfg.report_out,
            &mut cfg.audit_log,
        ] {
            rebase(base, p);
        }
        if let BackendSpec::ScriptedMock { script, .. } = &mut cfg.backend {
            rebase(base, script);
        }
        if let Some(rest) = cfg.encoder.strip_prefix("toy:") {
            if Path::new(rest).is_relative() {
                cfg.encoder = format!("toy:{}", base.join(rest).display());
            }
        }
        Ok(cfg)
    }

    pub fn chunk_config(&self) -> ChunkConfig {
        ChunkConfig { chunk_size: self.chunk_size, overlap: self.overlap }
    }

    /// Checks settings that do not depend on the command.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.template_version != TEMPLATE_VERSION {
            return Err(ConfigError::TemplateVersion { pinned: self.template_version.clone() });
        }
        if self.chunk_size <= self.overlap {
            return Err(ConfigError::Invalid(format!(
                "chunk_size {} must exceed overlap {}",
                self.chunk_size, self.overlap
            )));
        }
        if self.k == 0 {
            return Err(ConfigError::Invalid("k must be positive".into()));
        }
        if self.length_threshold == 0 {
            return Err(ConfigError::Invalid("length_threshold must be positive".into()));
        }
        if let BackendSpec::ScriptedMock { script: Some(p), .. } = &self.backend {
            require_existing("mock script", p)?;
        }
        Ok(())
    }

    /// Returns the configured path, checking that it exists.
    pub fn existing(&self, what: &'static str, path: &Option<PathBuf>) -> Result<PathBuf, ConfigError> {
        let p = path.as_ref().ok_or(ConfigError::Unset(what))?;
        require_existing(what, p)?;
        Ok(p.clone())
    }
}

pub fn require_existing(what: &'static str, path: &Path) -> Result<(), ConfigError> {
    if path.exists() {
        Ok(())
    } else {
        Err(ConfigError::MissingPath { what, path: path.display().to_string() })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn template_pin_enforced() {
        let cfg = RunConfig { template_version: "cfa-prompt/v0".into(), ..Default::default() };
        assert!(matches!(cfg.validate(), Err(ConfigError::TemplateVersion { .. })));
    }

    #[test]
    fn load_rebases_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        fs::write(
            &path,
            r#"{"benchmark": "b.json", "k": 3, "backend": {"kind": "scripted_mock", "script": "m.json"}}"#,
        )
        .unwrap();
        let cfg = RunConfig::load(&path).unwrap();
        assert_eq!(cfg.benchmark.unwrap(), dir.path().join("b.json"));
        assert_eq!(cfg.k, 3);
        assert_eq!(cfg.chunk_size, DEFAULT_CHUNK_SIZE);
        match cfg.backend {
            BackendSpec::ScriptedMock { script, .. } => assert_eq!(script.unwrap(), dir.path().join("m.json")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_fields_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        fs::write(&path, r#"{"kk": 3}"#).unwrap();
        assert!(RunConfig::load(&path).is_err());
    }
}
