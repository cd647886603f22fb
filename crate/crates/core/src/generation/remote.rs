use std::fs::{File, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::{Condvar, Mutex};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use super::{GenerationError, RawAnswer, DEFAULT_MAX_IN_FLIGHT};
use crate::fusion::Prompt;
use crate::http::{post_json, RetryPolicy};

pub const GENERATION_API_KEY_VAR: &str = "GENERATION_API_KEY";

/// One line of the JSON-lines audit log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub request_hash: String,
    pub query_key: String,
    pub ok: bool,
    pub attempts: u32,
    pub latency_ms: Option<u64>,
    pub error: Option<String>,
}

#[derive(Debug)]
struct Slots {
    free: Mutex<usize>,
    cv: Condvar,
}

struct SlotGuard<'a>(&'a Slots);

impl Slots {
    fn new(n: usize) -> Self {
        Self { free: Mutex::new(n.max(1)), cv: Condvar::new() }
    }

    fn acquire(&self) -> SlotGuard<'_> {
        let mut free = self.free.lock().expect("slot lock");
        while *free == 0 {
            free = self.cv.wait(free).expect("slot lock");
        }
        *free -= 1;
        SlotGuard(self)
    }
}

impl Drop for SlotGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().expect("slot lock") += 1;
        self.0.cv.notify_one();
    }
}

/// Chat-completion client: `POST {"model", "messages", "temperature": 0}`,
/// answer taken from the first choice's message content.
#[derive(Debug)]
pub struct RemoteChat {
    endpoint: String,
    model: String,
    api_key: Option<String>,
    retry: RetryPolicy,
    max_in_flight: usize,
    slots: Slots,
    audit: Option<(PathBuf, Mutex<File>)>,
}

impl RemoteChat {
    /// Reads the credential from `GENERATION_API_KEY`.
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            model: model.into(),
            api_key: std::env::var(GENERATION_API_KEY_VAR).ok(),
            retry: RetryPolicy::default(),
            max_in_flight: DEFAULT_MAX_IN_FLIGHT,
            slots: Slots::new(DEFAULT_MAX_IN_FLIGHT),
            audit: None,
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_max_in_flight(mut self, n: usize) -> Self {
        self.max_in_flight = n.max(1);
        self.slots = Slots::new(self.max_in_flight);
        self
    }

    pub fn with_audit_log(mut self, path: &Path) -> Result<Self, GenerationError> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| GenerationError::Config(format!("audit log {}: {e}", path.display())))?;
        self.audit = Some((path.to_path_buf(), Mutex::new(file)));
        Ok(self)
    }

    pub fn max_in_flight(&self) -> usize {
        self.max_in_flight
    }

    fn request_body(&self, prompt: &Prompt) -> Value {
        json!({
            "model": self.model,
            "messages": [{"role": "user", "content": prompt.rendered}],
            "temperature": 0,
        })
    }

    fn audit(&self, record: &AuditRecord) {
        if let Some((path, file)) = &self.audit {
            let line = serde_json::to_string(record).expect("audit record serializes");
            let mut f = file.lock().expect("audit lock");
            if let Err(e) = writeln!(f, "{line}") {
                log::error!("cannot append to audit log {}: {e}", path.display());
            }
        }
    }

    pub fn generate(&self, prompt: &Prompt) -> Result<RawAnswer, GenerationError> {
        let body = self.request_body(prompt);
        let request_hash = hex::encode(Sha256::digest(body.to_string().as_bytes()));
        let _slot = self.slots.acquire();
        let outcome = post_json(&self.endpoint, &body, self.api_key.as_deref(), &self.retry);
        let mut record = AuditRecord {
            request_hash: request_hash.clone(),
            query_key: prompt.lookup_key().to_string(),
            ok: false,
            attempts: self.retry.max_attempts,
            latency_ms: None,
            error: None,
        };
        let exchange = match outcome {
            Ok(x) => x,
            Err(e) => {
                record.attempts = e.attempts;
                record.error = Some(e.to_string());
                self.audit(&record);
                return Err(e.into());
            }
        };
        record.attempts = exchange.attempts;
        record.latency_ms = Some(exchange.latency.as_millis() as u64);
        let content = exchange
            .body
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string);
        record.ok = content.is_some();
        if content.is_none() {
            record.error = Some("missing choices[0].message.content".into());
        }
        self.audit(&record);
        let text = content.ok_or_else(|| {
            GenerationError::BadResponse("missing choices[0].message.content".into())
        })?;
        Ok(RawAnswer {
            text,
            backend: "remote".into(),
            attempts: exchange.attempts,
            latency_ms: record.latency_ms,
            request_hash: Some(request_hash),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusion::{build_prompt, Strategy};

    #[test]
    fn request_pins_temperature_zero() {
        let chat = RemoteChat::new("http://localhost", "m");
        let p = build_prompt("Q", Strategy::NoDatasource, vec![], 10_000).unwrap();
        let body = chat.request_body(&p);
        assert_eq!(body["temperature"], 0);
        assert_eq!(body["messages"][0]["content"], p.rendered.as_str());
    }

    #[test]
    fn unreachable_endpoint_fails_after_three_attempts_and_audits() {
        let dir = tempfile::tempdir().unwrap();
        let log = dir.path().join("audit.jsonl");
        let chat = RemoteChat::new("http://127.0.0.1:9/v1/chat", "m")
            .with_retry(RetryPolicy { base_backoff_ms: 1, timeout_ms: 500, ..Default::default() })
            .with_audit_log(&log)
            .unwrap();
        let p = build_prompt("Q", Strategy::NoDatasource, vec![], 10_000).unwrap();
        match chat.generate(&p) {
            Err(GenerationError::Transport(e)) => assert_eq!(e.attempts, 3),
            other => panic!("expected transport error, got {other:?}"),
        }
        let line = std::fs::read_to_string(&log).unwrap();
        let rec: AuditRecord = serde_json::from_str(line.trim()).unwrap();
        assert!(!rec.ok);
        assert_eq!(rec.attempts, 3);
    }
}
