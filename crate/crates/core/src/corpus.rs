//! Datasource ingestion, text normalization, fixed-stride chunking and
//! long/short datasource classification.

use std::collections::HashSet;
use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::time::Duration;

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const DEFAULT_CHUNK_SIZE: usize = 1000;
pub const DEFAULT_OVERLAP: usize = 200;
pub const DEFAULT_LENGTH_THRESHOLD: usize = 4000;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("payload is not valid UTF-8: {0}")]
    Encoding(#[from] std::string::FromUtf8Error),
    #[error("failed to fetch {url}: {reason}")]
    Fetch { url: String, reason: String },
    #[error("chunk_size ({chunk_size}) must be greater than overlap ({overlap})")]
    Config { chunk_size: usize, overlap: usize },
    #[error("catalog I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("catalog {path} is malformed: {reason}")]
    Format { path: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    LocalFile,
    RawText,
    UrlFetch,
}

/// Optional descriptive fields supplied at ingestion time.
#[derive(Debug, Clone, Default)]
pub struct IngestMetadata {
    pub title: Option<String>,
    pub industry_tag: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub title: String,
    pub source: SourceKind,
    pub industry_tag: Option<String>,
    pub body: String,
    #[serde(with = "iso8601")]
    pub fetched_at: DateTime<Utc>,
}

impl Document {
    /// Body length in characters.
    pub fn char_len(&self) -> usize {
        self.body.chars().count()
    }
}

/// A contiguous character range `[start_offset, end_offset)` of a document body.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub chunk_id: String,
    pub doc_id: String,
    pub start_offset: usize,
    pub end_offset: usize,
    pub text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LengthClass {
    Long,
    Short,
    None,
}

/// Chunking parameters, in characters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkConfig {
    pub chunk_size: usize,
    pub overlap: usize,
}

impl Default for ChunkConfig {
    fn default() -> Self {
        Self {
            chunk_size: DEFAULT_CHUNK_SIZE,
            overlap: DEFAULT_OVERLAP,
        }
    }
}

impl ChunkConfig {
    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.chunk_size <= self.overlap {
            return Err(CorpusError::Config {
                chunk_size: self.chunk_size,
                overlap: self.overlap,
            });
        }
        Ok(())
    }
}

/// Normalizes raw text: CRLF becomes LF, every other C0 control character
/// (including lone CR and TAB) becomes a single space, and runs of more than
/// two blank lines collapse to two.
pub fn normalize(raw: &str) -> String {
    let mut out = String::with_capacity(raw.len());
    let mut chars = raw.chars().peekable();
    // consecutive '\n' emitted so far; 4 newlines in a row = 3 blank lines
    let mut newline_run = 0usize;
    while let Some(c) = chars.next() {
        let c = match c {
            '\r' if chars.peek() == Some(&'\n') => continue,
            '\n' => '\n',
            c if (c as u32) < 0x20 => ' ',
            c => c,
        };
        if c == '\n' {
            newline_run += 1;
            if newline_run > 3 {
                continue;
            }
        } else {
            newline_run = 0;
        }
        out.push(c);
    }
    out
}

/// Splits a document into overlapping character windows.
///
/// Windows start every `chunk_size - overlap` characters. A final window
/// shorter than `overlap` is folded into its predecessor, which already
/// reaches the end of the body.
pub fn segment(doc: &Document, config: ChunkConfig) -> Result<Vec<Chunk>, CorpusError> {
    config.validate()?;
    let spans = chunk_spans(doc.char_len(), config);

    // byte offset of every char boundary, plus the end of the string
    let boundaries: Vec<usize> = doc
        .body
        .char_indices()
        .map(|(b, _)| b)
        .chain(std::iter::once(doc.body.len()))
        .collect();

    Ok(spans
        .into_iter()
        .enumerate()
        .map(|(i, (start, end))| Chunk {
            chunk_id: format!("{}#{i:04}", doc.doc_id),
            doc_id: doc.doc_id.clone(),
            start_offset: start,
            end_offset: end,
            text: doc.body[boundaries[start]..boundaries[end]].to_string(),
        })
        .collect())
}

fn chunk_spans(len: usize, config: ChunkConfig) -> Vec<(usize, usize)> {
    let stride = config.chunk_size - config.overlap;
    let mut spans: Vec<(usize, usize)> = (0..len)
        .step_by(stride)
        .map(|start| (start, (start + config.chunk_size).min(len)))
        .collect();
    if spans.len() > 1 {
        let (start, end) = spans[spans.len() - 1];
        if end - start < config.overlap {
            spans.pop();
            if let Some(last) = spans.last_mut() {
                last.1 = len;
            }
        }
    }
    spans
}

/// Classifies a set of datasources by their total character length.
pub fn classify_datasource(docs: &[Document], threshold: usize) -> LengthClass {
    if docs.is_empty() {
        return LengthClass::None;
    }
    let total: usize = docs.iter().map(Document::char_len).sum();
    if total <= threshold {
        LengthClass::Short
    } else {
        LengthClass::Long
    }
}

/// Fetches a single URL and returns its body as text. No crawling, no HTML extraction.
pub fn fetch_url(url: &str, timeout: Duration) -> Result<String, CorpusError> {
    let fetch_err = |reason: String| CorpusError::Fetch {
        url: url.to_string(),
        reason,
    };
    let agent: ureq::Agent = ureq::Agent::config_builder()
        .timeout_global(Some(timeout))
        .build()
        .into();
    let mut response = agent.get(url).call().map_err(|e| fetch_err(e.to_string()))?;
    let bytes = response
        .body_mut()
        .read_to_vec()
        .map_err(|e| fetch_err(e.to_string()))?;
    String::from_utf8(bytes).map_err(CorpusError::Encoding)
}

/// Ordered collection of ingested documents, persisted as a JSON array.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Catalog {
    documents: Vec<Document>,
}

impl Catalog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn get(&self, doc_id: &str) -> Option<&Document> {
        self.documents.iter().find(|d| d.doc_id == doc_id)
    }

    /// Ingests one datasource. For [`SourceKind::UrlFetch`] the payload is the URL;
    /// for [`SourceKind::LocalFile`] it is the file's bytes.
    ///
    /// The catalog is untouched when decoding or fetching fails.
    pub fn ingest(
        &mut self,
        kind: SourceKind,
        payload: &[u8],
        metadata: IngestMetadata,
    ) -> Result<&Document, CorpusError> {
        let text = match kind {
            SourceKind::UrlFetch => {
                let url = String::from_utf8(payload.to_vec())?;
                fetch_url(url.trim(), Duration::from_secs(30))?
            }
            SourceKind::LocalFile | SourceKind::RawText => String::from_utf8(payload.to_vec())?,
        };
        Ok(self.push_text(kind, &text, metadata, Utc::now()))
    }

    /// Reads a local file and ingests it, using the file name as default title.
    pub fn ingest_file(
        &mut self,
        path: &Path,
        mut metadata: IngestMetadata,
    ) -> Result<&Document, CorpusError> {
        let bytes = fs::read(path).map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if metadata.title.is_none() {
            metadata.title = path.file_name().map(|n| n.to_string_lossy().into_owned());
        }
        self.ingest(SourceKind::LocalFile, &bytes, metadata)
    }

    /// Appends already-decoded text with a caller-supplied timestamp.
    pub fn push_text(
        &mut self,
        kind: SourceKind,
        text: &str,
        metadata: IngestMetadata,
        fetched_at: DateTime<Utc>,
    ) -> &Document {
        let body = normalize(text);
        let doc_id = self.fresh_id(&body);
        self.documents.push(Document {
            title: metadata.title.unwrap_or_else(|| doc_id.clone()),
            doc_id,
            source: kind,
            industry_tag: metadata.industry_tag,
            body,
            fetched_at,
        });
        self.documents.last().expect("just pushed")
    }

    // Deterministic: catalog position plus a content digest prefix.
    fn fresh_id(&self, body: &str) -> String {
        let digest = hex::encode(Sha256::digest(body.as_bytes()));
        let taken: HashSet<&str> = self.documents.iter().map(|d| d.doc_id.as_str()).collect();
        let mut seq = self.documents.len();
        loop {
            let id = format!("doc{seq:04}-{}", &digest[..8]);
            if !taken.contains(id.as_str()) {
                return id;
            }
            seq += 1;
        }
    }

    /// Chunks every document in catalog order.
    pub fn chunks(&self, config: ChunkConfig) -> Result<Vec<Chunk>, CorpusError> {
        let mut all = Vec::new();
        for doc in &self.documents {
            all.extend(segment(doc, config)?);
        }
        Ok(all)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("catalog serializes")
    }

    pub fn save(&self, path: &Path) -> Result<(), CorpusError> {
        write_atomic(path, self.to_json().as_bytes()).map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let text = fs::read_to_string(path).map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let catalog: Catalog = serde_json::from_str(&text).map_err(|e| CorpusError::Format {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        let mut seen = HashSet::new();
        for doc in &catalog.documents {
            if !seen.insert(doc.doc_id.as_str()) {
                return Err(CorpusError::Format {
                    path: path.display().to_string(),
                    reason: format!("duplicate doc_id {}", doc.doc_id),
                });
            }
        }
        Ok(catalog)
    }

    /// Loads the catalog if the file exists, otherwise starts empty.
    pub fn load_or_default(path: &Path) -> Result<Self, CorpusError> {
        if path.exists() {
            Self::load(path)
        } else {
            Ok(Self::new())
        }
    }
}

/// Writes through a sibling temp file and renames, so readers never see a torn file.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}

mod iso8601 {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(t: &DateTime<Utc>, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&t.to_rfc3339_opts(SecondsFormat::AutoSi, true))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DateTime<Utc>, D::Error> {
        let s = String::deserialize(d)?;
        DateTime::parse_from_rfc3339(&s)
            .map(|t| t.with_timezone(&Utc))
            .map_err(serde::de::Error::custom)
    }
}
