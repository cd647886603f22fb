use std::hash::Hasher;

use fnv::FnvHasher;

use super::{EmbeddingError, EmbeddingVector};

/// FNV-1a 64-bit offset basis, used as the hasher key. Bucket assignment is
/// therefore plain FNV-1a over the token's UTF-8 bytes, stable across
/// platforms and releases.
pub const LEXICAL_HASH_SEED: u64 = 0xcbf2_9ce4_8422_2325;

/// Lowercased alphanumeric runs.
pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

fn bucket(token: &str, dims: usize) -> usize {
    let mut h = FnvHasher::with_key(LEXICAL_HASH_SEED);
    h.write(token.as_bytes());
    (h.finish() % dims as u64) as usize
}

/// Raw (unnormalized) hashed token counts.
pub fn hashed_token_counts(text: &str, dims: usize) -> Vec<f64> {
    let mut counts = vec![0.0; dims];
    for token in tokenize(text) {
        counts[bucket(&token, dims)] += 1.0;
    }
    counts
}

/// Hashed bag-of-tokens encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LexicalEncoder {
    dims: usize,
}

impl LexicalEncoder {
    pub fn new(dims: usize) -> Result<Self, EmbeddingError> {
        if dims == 0 {
            return Err(EmbeddingError::Config("dims must be positive".into()));
        }
        Ok(Self { dims })
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn embed(&self, text: &str) -> EmbeddingVector {
        EmbeddingVector::normalize(hashed_token_counts(text, self.dims)).unwrap_or_else(|_| {
            log::warn!("text {text:?} has no tokens; embedding as e_0");
            EmbeddingVector::basis(self.dims)
        })
    }
}
