//! Blocking JSON-over-HTTP with bounded retries and exponential backoff.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    /// Total attempts, including the first.
    pub max_attempts: u32,
    pub base_backoff_ms: u64,
    pub timeout_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            base_backoff_ms: 200,
            timeout_ms: 60_000,
        }
    }
}

impl RetryPolicy {
    fn backoff(&self, attempt: u32) -> Duration {
        Duration::from_millis(self.base_backoff_ms.saturating_mul(1 << (attempt - 1).min(16)))
    }
}

#[derive(Debug, Error)]
#[error("{url}: giving up after {attempts} attempt(s): {last_error}")]
pub struct TransportError {
    pub url: String,
    pub attempts: u32,
    pub last_error: String,
}

/// Outcome of a successful exchange.
#[derive(Debug, Clone)]
pub struct Exchange {
    pub body: Value,
    pub attempts: u32,
    pub latency: Duration,
}

pub fn post_json(
    url: &str,
    payload: &Value,
    bearer: Option<&str>,
    policy: &RetryPolicy,
) -> Result<Exchange, TransportError> {
    let agent: ureq::Agent = ureq::Agent::config_builder()
        .timeout_global(Some(Duration::from_millis(policy.timeout_ms)))
        .build()
        .into();
    let attempts_allowed = policy.max_attempts.max(1);
    let mut last_error = String::new();
    for attempt in 1..=attempts_allowed {
        let started = Instant::now();
        let mut request = agent.post(url);
        if let Some(token) = bearer {
            request = request.header("Authorization", &format!("Bearer {token}"));
        }
        let outcome = request
            .send_json(payload)
            .and_then(|mut resp| resp.body_mut().read_json::<Value>());
        match outcome {
            Ok(body) => {
                return Ok(Exchange {
                    body,
                    attempts: attempt,
                    latency: started.elapsed(),
                })
            }
            Err(e) => {
                log::warn!("POST {url} attempt {attempt}/{attempts_allowed} failed: {e}");
                last_error = e.to_string();
                if attempt < attempts_allowed {
                    std::thread::sleep(policy.backoff(attempt));
                }
            }
        }
    }
    Err(TransportError {
        url: url.to_string(),
        attempts: attempts_allowed,
        last_error,
    })
}
