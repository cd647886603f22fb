//! Exact top-K cosine retrieval over stored chunk vectors.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::embedding::{cosine_similarity, EmbeddingError, EmbeddingVector};

pub const DEFAULT_K: usize = 5;

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("vector has {got} dims, index holds {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("query vector is empty")]
    EmptyQuery,
    #[error(transparent)]
    Similarity(#[from] EmbeddingError),
    #[error("index I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("index file {path}: {reason}")]
    Format { path: String, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub chunk_id: String,
    pub vector: EmbeddingVector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalHit {
    pub chunk_id: String,
    pub similarity: f64,
    /// 1-based.
    pub rank: usize,
}

/// Flat vector store. `&self` queries may run concurrently; inserts need `&mut`.
#[derive(Debug, Clone, Default)]
pub struct VectorIndex {
    dims: Option<usize>,
    entries: Vec<IndexEntry>,
    positions: HashMap<String, usize>,
}

// Heap element ordered so the *worst* candidate sits on top of the max-heap:
// lower similarity is "greater", and among equal similarities the larger chunk_id.
struct Candidate<'a> {
    similarity: f64,
    chunk_id: &'a str,
}

impl Candidate<'_> {
    fn rank_cmp(&self, other: &Self) -> Ordering {
        other
            .similarity
            .total_cmp(&self.similarity)
            .then_with(|| self.chunk_id.cmp(other.chunk_id))
    }
}

impl PartialEq for Candidate<'_> {
    fn eq(&self, other: &Self) -> bool {
        self.rank_cmp(other) == Ordering::Equal
    }
}
impl Eq for Candidate<'_> {}
impl PartialOrd for Candidate<'_> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Candidate<'_> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.rank_cmp(other)
    }
}

#[derive(Serialize)]
struct IndexFileRef<'a> {
    dims: Option<usize>,
    entries: &'a [IndexEntry],
}

impl VectorIndex {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn dims(&self) -> Option<usize> {
        self.dims
    }

    pub fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }

    pub fn get(&self, chunk_id: &str) -> Option<&EmbeddingVector> {
        self.positions.get(chunk_id).map(|&i| &self.entries[i].vector)
    }

    /// Adds an entry; an existing `chunk_id` has its vector replaced.
    pub fn insert(&mut self, entry: IndexEntry) -> Result<(), IndexError> {
        let got = entry.vector.dims();
        match self.dims {
            Some(expected) if expected != got => {
                return Err(IndexError::DimensionMismatch { expected, got })
            }
            _ => self.dims = Some(got),
        }
        match self.positions.get(&entry.chunk_id) {
            Some(&i) => self.entries[i].vector = entry.vector,
            None => {
                self.positions.insert(entry.chunk_id.clone(), self.entries.len());
                self.entries.push(entry);
            }
        }
        Ok(())
    }

    /// The `min(k, len)` most similar entries, similarity descending, ties by
    /// ascending `chunk_id`. Exact: every entry is scored.
    pub fn top_k(&self, query: &EmbeddingVector, k: usize) -> Result<Vec<RetrievalHit>, IndexError> {
        if query.dims() == 0 {
            return Err(IndexError::EmptyQuery);
        }
        let Some(dims) = self.dims else {
            return Ok(Vec::new());
        };
        if query.dims() != dims {
            return Err(IndexError::DimensionMismatch { expected: dims, got: query.dims() });
        }
        if k == 0 {
            return Ok(Vec::new());
        }

        let mut heap: BinaryHeap<Candidate<'_>> = BinaryHeap::with_capacity(k + 1);
        for entry in &self.entries {
            let candidate = Candidate {
                similarity: cosine_similarity(query.as_slice(), entry.vector.as_slice())?,
                chunk_id: &entry.chunk_id,
            };
            if heap.len() < k {
                heap.push(candidate);
            } else if let Some(worst) = heap.peek() {
                if candidate < *worst {
                    heap.pop();
                    heap.push(candidate);
                }
            }
        }
        Ok(heap
            .into_sorted_vec()
            .into_iter()
            .enumerate()
            .map(|(i, c)| RetrievalHit {
                chunk_id: c.chunk_id.to_string(),
                similarity: c.similarity,
                rank: i + 1,
            })
            .collect())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&IndexFileRef {
            dims: self.dims,
            entries: &self.entries,
        })
        .expect("index serializes")
    }

    pub fn save(&self, path: &Path) -> Result<(), IndexError> {
        crate::corpus::write_atomic(path, self.to_json().as_bytes()).map_err(|source| IndexError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    /// Parses an index file. Any malformed record fails the whole load.
    pub fn load(path: &Path) -> Result<Self, IndexError> {
        let text = fs::read_to_string(path).map_err(|source| IndexError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text).map_err(|reason| IndexError::Format {
            path: path.display().to_string(),
            reason,
        })
    }

    pub fn from_json(text: &str) -> Result<Self, String> {
        let root: Value = serde_json::from_str(text).map_err(|e| format!("not valid JSON: {e}"))?;
        let dims = match root.get("dims") {
            None | Some(Value::Null) => None,
            Some(v) => Some(
                v.as_u64()
                    .filter(|&d| d > 0)
                    .ok_or_else(|| format!("\"dims\" must be a positive integer, got {v}"))?
                    as usize,
            ),
        };
        let records = root
            .get("entries")
            .and_then(Value::as_array)
            .ok_or("missing \"entries\" array")?;

        let mut index = VectorIndex::new();
        for (i, record) in records.iter().enumerate() {
            let label = record
                .get("chunk_id")
                .and_then(Value::as_str)
                .map_or_else(|| format!("entry #{i}"), |id| format!("entry #{i} ({id})"));
            let entry: IndexEntry =
                serde_json::from_value(record.clone()).map_err(|e| format!("{label}: {e}"))?;
            if index.positions.contains_key(&entry.chunk_id) {
                return Err(format!("{label}: duplicate chunk_id"));
            }
            if let Some(d) = dims {
                if entry.vector.dims() != d {
                    return Err(format!("{label}: vector has {} dims, file declares {d}", entry.vector.dims()));
                }
            }
            index.insert(entry).map_err(|e| format!("{label}: {e}"))?;
        }
        if index.dims.is_none() {
            index.dims = dims;
        }
        Ok(index)
    }
}
