use serde_json::{json, Value};

use super::{EmbeddingError, EmbeddingVector};
use crate::http::{post_json, RetryPolicy};

/// Environment variable holding the embedding endpoint credential.
pub const EMBEDDING_API_KEY_VAR: &str = "EMBEDDING_API_KEY";

/// Remote embedding endpoint: `POST {"input": [texts]}` returning
/// `{"embeddings": [[...], ...]}`. Returned vectors are re-normalized locally.
#[derive(Debug, Clone)]
pub struct RemoteEncoder {
    pub endpoint: String,
    pub expected_dims: Option<usize>,
    pub retry: RetryPolicy,
}

impl RemoteEncoder {
    pub fn new(endpoint: String) -> Self {
        Self {
            endpoint,
            expected_dims: None,
            retry: RetryPolicy::default(),
        }
    }

    pub fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbeddingError> {
        let key = std::env::var(EMBEDDING_API_KEY_VAR).ok();
        let exchange = post_json(&self.endpoint, &json!({ "input": texts }), key.as_deref(), &self.retry)?;
        let rows = exchange
            .body
            .get("embeddings")
            .and_then(Value::as_array)
            .ok_or_else(|| EmbeddingError::BadResponse("missing \"embeddings\" array".into()))?;
        if rows.len() != texts.len() {
            return Err(EmbeddingError::BadResponse(format!(
                "sent {} texts, received {} embeddings",
                texts.len(),
                rows.len()
            )));
        }
        let mut out = Vec::with_capacity(rows.len());
        for row in rows {
            let values: Vec<f64> = serde_json::from_value(row.clone())
                .map_err(|e| EmbeddingError::BadResponse(e.to_string()))?;
            if let Some(d) = self.expected_dims {
                if values.len() != d {
                    return Err(EmbeddingError::DimensionMismatch { left: d, right: values.len() });
                }
            }
            out.push(EmbeddingVector::normalize(values)?);
        }
        Ok(out)
    }
}
