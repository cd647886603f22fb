//! Text embedding into a shared unit-norm vector space, and cosine similarity.
//!
//! Three encoders are available: a hashed bag-of-tokens baseline, a toy
//! weight-shared dual-tower encoder trained contrastively, and a remote
//! embedding endpoint.

mod dual_tower;
mod lexical;
mod remote;

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use dual_tower::{
    train_dual_tower, DualTowerEncoder, TrainingConfig, TrainingPair, TrainingReport,
};
pub use lexical::{hashed_token_counts, tokenize, LexicalEncoder, LEXICAL_HASH_SEED};
pub use remote::RemoteEncoder;

use crate::http::TransportError;

pub const DEFAULT_DIMS: usize = 64;

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("cannot embed empty text")]
    EmptyInput,
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("zero vector has no direction")]
    ZeroVector,
    #[error("vector contains non-finite values")]
    NonFinite,
    #[error("vector norm {norm} is not 1")]
    NotUnit { norm: f64 },
    #[error("invalid encoder configuration: {0}")]
    Config(String),
    #[error("embedding transport failed: {0}")]
    Transport(#[from] TransportError),
    #[error("remote embedding response malformed: {0}")]
    BadResponse(String),
    #[error("encoder file {path}: {reason}")]
    Persist { path: String, reason: String },
}

/// A unit-norm embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct EmbeddingVector {
    values: Vec<f64>,
}

/// Tolerance on the stored norm.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-6;

impl EmbeddingVector {
    /// L2-normalizes `values`.
    pub fn normalize(values: Vec<f64>) -> Result<Self, EmbeddingError> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EmbeddingError::NonFinite);
        }
        let norm = l2_norm(&values);
        if values.is_empty() || norm == 0.0 {
            return Err(EmbeddingError::ZeroVector);
        }
        Ok(Self {
            values: values.into_iter().map(|v| v / norm).collect(),
        })
    }

    /// Accepts `values` as-is if they already have unit norm.
    pub fn from_unit(values: Vec<f64>) -> Result<Self, EmbeddingError> {
        if values.is_empty() {
            return Err(EmbeddingError::ZeroVector);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EmbeddingError::NonFinite);
        }
        let norm = l2_norm(&values);
        if (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
            return Err(EmbeddingError::NotUnit { norm });
        }
        Ok(Self { values })
    }

    /// The standard basis vector e_0.
    pub fn basis(dims: usize) -> Self {
        let mut values = vec![0.0; dims.max(1)];
        values[0] = 1.0;
        Self { values }
    }

    pub fn dims(&self) -> usize {
        self.values.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn cosine(&self, other: &EmbeddingVector) -> Result<f64, EmbeddingError> {
        cosine_similarity(&self.values, &other.values)
    }
}

impl TryFrom<Vec<f64>> for EmbeddingVector {
    type Error = EmbeddingError;

    fn try_from(values: Vec<f64>) -> Result<Self, Self::Error> {
        Self::from_unit(values)
    }
}

impl From<EmbeddingVector> for Vec<f64> {
    fn from(v: EmbeddingVector) -> Self {
        v.values
    }
}

pub(crate) fn l2_norm(values: &[f64]) -> f64 {
    values.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Cosine of the angle between two vectors, clamped to `[-1, 1]`.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64, EmbeddingError> {
    if a.len() != b.len() {
        return Err(EmbeddingError::DimensionMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    let (na, nb) = (l2_norm(a), l2_norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(EmbeddingError::ZeroVector);
    }
    if !(na.is_finite() && nb.is_finite()) {
        return Err(EmbeddingError::NonFinite);
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// A constructed encoder. Immutable after construction, so `embed` may be
/// called from many threads at once.
#[derive(Debug, Clone)]
pub enum Encoder {
    Lexical(LexicalEncoder),
    DualTower(DualTowerEncoder),
    Remote(RemoteEncoder),
}

impl Encoder {
    pub fn lexical(dims: usize) -> Result<Self, EmbeddingError> {
        LexicalEncoder::new(dims).map(Encoder::Lexical)
    }

    /// Parses an encoder spec string:
    /// `lexical[:DIMS]`, `toy:PATH` (a trained dual-tower JSON file) or `remote:URL`.
    pub fn from_spec(spec: &str) -> Result<Self, EmbeddingError> {
        let (kind, arg) = spec.split_once(':').unwrap_or((spec, ""));
        match kind {
            "lexical" | "lexical_baseline" => {
                let dims = if arg.is_empty() {
                    DEFAULT_DIMS
                } else {
                    arg.parse()
                        .map_err(|_| EmbeddingError::Config(format!("bad dims in {spec:?}")))?
                };
                Self::lexical(dims)
            }
            "toy" | "toy_dual_tower" => DualTowerEncoder::load(Path::new(arg)).map(Encoder::DualTower),
            "remote" => Ok(Encoder::Remote(RemoteEncoder::new(arg.to_string()))),
            _ => Err(EmbeddingError::Config(format!("unknown encoder spec {spec:?}"))),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Encoder::Lexical(_) => "lexical_baseline",
            Encoder::DualTower(_) => "toy_dual_tower",
            Encoder::Remote(_) => "remote",
        }
    }

    /// Output dimension, if known before the first call.
    pub fn dims(&self) -> Option<usize> {
        match self {
            Encoder::Lexical(e) => Some(e.dims()),
            Encoder::DualTower(e) => Some(e.dims()),
            Encoder::Remote(e) => e.expected_dims,
        }
    }

    pub fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbeddingError> {
        if text.trim().is_empty() {
            return Err(EmbeddingError::EmptyInput);
        }
        match self {
            Encoder::Lexical(e) => Ok(e.embed(text)),
            Encoder::DualTower(e) => Ok(e.embed(text)),
            Encoder::Remote(e) => e
                .embed_batch(&[text])
                .map(|mut v| v.pop().expect("one input, one output")),
        }
    }

    pub fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbeddingError> {
        if texts.iter().any(|t| t.trim().is_empty()) {
            return Err(EmbeddingError::EmptyInput);
        }
        match self {
            Encoder::Remote(e) => e.embed_batch(texts),
            _ => texts.iter().map(|t| self.embed(t)).collect(),
        }
    }
}

impl fmt::Display for Encoder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Encoder::Lexical(e) => write!(f, "lexical_baseline:{}", e.dims()),
            Encoder::DualTower(e) => write!(f, "toy_dual_tower:{}:seed={}", e.dims(), e.seed()),
            Encoder::Remote(e) => write!(f, "remote:{}", e.endpoint),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_vectors_have_similarity_one() {
        let v = EmbeddingVector::normalize(vec![0.3, -2.0, 5.0]).unwrap();
        assert!((v.cosine(&v).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn orthogonal_vectors() {
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
    }

    #[test]
    fn diagonal_against_axis() {
        let d = EmbeddingVector::normalize(vec![1.0, 1.0]).unwrap();
        let s = cosine_similarity(d.as_slice(), &[1.0, 0.0]).unwrap();
        assert!((s - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
    }

    #[test]
    fn error_cases() {
        assert!(matches!(
            cosine_similarity(&[1.0], &[1.0, 0.0]),
            Err(EmbeddingError::DimensionMismatch { .. })
        ));
        assert!(matches!(
            cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]),
            Err(EmbeddingError::ZeroVector)
        ));
        assert!(EmbeddingVector::normalize(vec![0.0; 4]).is_err());
        assert!(EmbeddingVector::from_unit(vec![1.0, 1.0]).is_err());
    }

    #[test]
    fn empty_text_rejected() {
        let enc = Encoder::lexical(64).unwrap();
        assert!(matches!(enc.embed("   "), Err(EmbeddingError::EmptyInput)));
    }

    #[test]
    fn spec_strings() {
        assert_eq!(Encoder::from_spec("lexical").unwrap().dims(), Some(64));
        assert_eq!(Encoder::from_spec("lexical:32").unwrap().dims(), Some(32));
        assert!(Encoder::from_spec("bert").is_err());
        assert!(Encoder::from_spec("lexical:x").is_err());
    }

    #[test]
    fn vector_json_rejects_non_unit() {
        assert!(serde_json::from_str::<EmbeddingVector>("[1.0, 1.0]").is_err());
        let v: EmbeddingVector = serde_json::from_str("[0.6, 0.8]").unwrap();
        assert_eq!(v.dims(), 2);
    }
}
