//! Per-query flow shared by the CLI and the benchmark runner:
//! retrieve → build prompt → generate → parse.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{classify_datasource, Chunk, ChunkConfig, CorpusError, Document};
use crate::embedding::{EmbeddingError, Encoder};
use crate::fusion::{build_prompt, select_strategy, Fragment, FusionError, Prompt, Strategy};
use crate::generation::{
    parse_extraction, resolve_provenance, Extraction, ExtractionError, GenerationBackend, GenerationError,
    RawAnswer,
};
use crate::index::{IndexEntry, IndexError, RetrievalHit, VectorIndex};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Config,
    Ingest,
    Segment,
    Embed,
    Index,
    Retrieve,
    Prompt,
    Generate,
    Parse,
    Account,
    Score,
    Report,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).expect("stage serializes");
        f.write_str(s.as_str().expect("stage is a string"))
    }
}

#[derive(Debug, Error)]
pub enum StageError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error(transparent)]
    Generation(#[from] GenerationError),
    #[error(transparent)]
    Extraction(#[from] ExtractionError),
    #[error("{0}")]
    Other(String),
}

/// An error tagged with the pipeline stage that raised it.
#[derive(Debug, Error)]
#[error("[{stage}] {source}")]
pub struct PipelineError {
    pub stage: Stage,
    #[source]
    pub source: StageError,
}

pub(crate) trait AtStage<T> {
    fn at(self, stage: Stage) -> Result<T, PipelineError>;
}

impl<T, E: Into<StageError>> AtStage<T> for Result<T, E> {
    fn at(self, stage: Stage) -> Result<T, PipelineError> {
        self.map_err(|e| PipelineError { stage, source: e.into() })
    }
}

/// Embeds every chunk and inserts it into a fresh index.
pub fn build_index(chunks: &[Chunk], encoder: &Encoder) -> Result<VectorIndex, PipelineError> {
    let texts: Vec<&str> = chunks.iter().map(|c| c.text.as_str()).collect();
    let mut index = VectorIndex::new();
    // whitespace-only chunks cannot be embedded and are not retrievable
    let embeddable: Vec<usize> = (0..texts.len()).filter(|&i| !texts[i].trim().is_empty()).collect();
    let batch: Vec<&str> = embeddable.iter().map(|&i| texts[i]).collect();
    let vectors = encoder.embed_batch(&batch).at(Stage::Embed)?;
    for (i, vector) in embeddable.into_iter().zip(vectors) {
        index
            .insert(IndexEntry { chunk_id: chunks[i].chunk_id.clone(), vector })
            .at(Stage::Index)?;
    }
    Ok(index)
}

/// Everything needed to answer queries against one set of datasources.
#[derive(Debug)]
pub struct RetrievalContext {
    pub strategy: Strategy,
    pub encoder: Encoder,
    pub k: usize,
    pub prompt_budget: usize,
    index: VectorIndex,
    chunks: HashMap<String, Chunk>,
    short_texts: Vec<Fragment>,
}

/// Trace of one answered query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryOutcome {
    pub hits: Vec<RetrievalHit>,
    pub prompt: Prompt,
    pub answer: RawAnswer,
    pub extraction: Extraction,
}

impl RetrievalContext {
    /// Classifies the datasources and, for long ones, chunks, embeds and indexes them.
    pub fn prepare(
        docs: &[Document],
        chunking: ChunkConfig,
        length_threshold: usize,
        encoder: Encoder,
        k: usize,
        prompt_budget: usize,
    ) -> Result<Self, PipelineError> {
        let strategy = select_strategy(classify_datasource(docs, length_threshold));
        let mut ctx = Self {
            strategy,
            encoder,
            k,
            prompt_budget,
            index: VectorIndex::new(),
            chunks: HashMap::new(),
            short_texts: Vec::new(),
        };
        match strategy {
            Strategy::RagLong => {
                let mut chunks = Vec::new();
                for doc in docs {
                    chunks.extend(crate::corpus::segment(doc, chunking).at(Stage::Segment)?);
                }
                ctx.index = build_index(&chunks, &ctx.encoder)?;
                ctx.chunks = chunks.into_iter().map(|c| (c.chunk_id.clone(), c)).collect();
            }
            Strategy::ShortDirect => {
                ctx.short_texts = docs
                    .iter()
                    .filter(|d| !d.body.trim().is_empty())
                    .map(|d| Fragment::literal(d.doc_id.clone(), d.body.clone()))
                    .collect();
            }
            Strategy::NoDatasource => {}
        }
        Ok(ctx)
    }

    /// Wraps a prebuilt index and its chunks for long-datasource retrieval.
    pub fn from_index(
        index: VectorIndex,
        chunks: Vec<Chunk>,
        encoder: Encoder,
        k: usize,
        prompt_budget: usize,
    ) -> Self {
        Self {
            strategy: Strategy::RagLong,
            encoder,
            k,
            prompt_budget,
            index,
            chunks: chunks.into_iter().map(|c| (c.chunk_id.clone(), c)).collect(),
            short_texts: Vec::new(),
        }
    }

    pub fn index(&self) -> &VectorIndex {
        &self.index
    }

    pub fn chunk(&self, chunk_id: &str) -> Option<&Chunk> {
        self.chunks.get(chunk_id)
    }

    /// Top-K hits for a query (empty unless the strategy is retrieval).
    pub fn retrieve(&self, query: &str) -> Result<Vec<RetrievalHit>, PipelineError> {
        if self.strategy != Strategy::RagLong {
            return Ok(Vec::new());
        }
        let q = self.encoder.embed(query).at(Stage::Embed)?;
        self.index.top_k(&q, self.k).at(Stage::Retrieve)
    }

    pub fn prompt(&self, query: &str, hits: &[RetrievalHit]) -> Result<Prompt, PipelineError> {
        let fragments = match self.strategy {
            Strategy::RagLong => hits
                .iter()
                .map(|h| {
                    self.chunks
                        .get(&h.chunk_id)
                        .map(|c| Fragment::retrieved(h.chunk_id.clone(), c.text.clone(), h.similarity))
                        .ok_or_else(|| StageError::Other(format!("index hit {} has no chunk text", h.chunk_id)))
                })
                .collect::<Result<Vec<_>, _>>()
                .at(Stage::Retrieve)?,
            Strategy::ShortDirect => self.short_texts.clone(),
            Strategy::NoDatasource => Vec::new(),
        };
        build_prompt(query, self.strategy, fragments, self.prompt_budget).at(Stage::Prompt)
    }

    /// Runs one query end to end.
    pub fn answer(
        &self,
        query: &str,
        query_id: Option<&str>,
        expected_keys: &[String],
        backend: &GenerationBackend,
    ) -> Result<QueryOutcome, PipelineError> {
        let hits = self.retrieve(query)?;
        let mut prompt = self.prompt(query, &hits)?;
        if let Some(id) = query_id {
            prompt = prompt.with_query_id(id);
        }
        let answer = backend.generate(&prompt).at(Stage::Generate)?;
        let mut extraction = parse_extraction(&answer, expected_keys).at(Stage::Parse)?;
        resolve_provenance(&mut extraction.facts, &prompt);
        Ok(QueryOutcome { hits, prompt, answer, extraction })
    }
}
