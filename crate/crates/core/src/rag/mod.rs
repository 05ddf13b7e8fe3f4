//! Knowledge base: chunking, embedding, linear-scan retrieval, persistence.

mod embed;

use std::cmp::Ordering;
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use embed::{embedders, normalize, terms, Embedder, EmbedderFactory, EmbedderSpec, Lexical, Remote, LEXICAL_DIM};

pub const DEFAULT_CHUNK_SIZE: usize = 1000;
pub const DEFAULT_OVERLAP: usize = 200;
pub const DEFAULT_K: usize = 4;
const FORMAT: &str = "pacloop-index";
const VERSION: u32 = 1;
const TEXT_EXTENSIONS: [&str; 5] = ["md", "markdown", "txt", "rego", "tf"];

#[derive(Debug, Error)]
pub enum RagError {
    #[error("knowledge base '{0}' is empty")]
    EmptyCollection(Collection),
    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("embedder failed: {message}")]
    Embedder { message: String, retriable: bool },
    #[error("invalid chunking: size {size} must exceed overlap {overlap}")]
    Chunking { size: usize, overlap: usize },
    #[error("index built with embedder `{index}`, queried with `{query}`")]
    EmbedderMismatch { index: String, query: String },
    #[error("vector dimension {got} does not match index dimension {want}")]
    Dimension { want: usize, got: usize },
    #[error("unsupported index version {0}")]
    Version(u32),
    #[error("corrupt index file {}: {reason}", .path.display())]
    Corrupt { path: PathBuf, reason: String },
    #[error("{0}")]
    Config(String),
}

impl RagError {
    pub fn is_retriable(&self) -> bool {
        matches!(self, RagError::Embedder { retriable: true, .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Collection {
    Opa,
    Iac,
}

impl Collection {
    pub fn name(self) -> &'static str {
        match self {
            Collection::Opa => "opa",
            Collection::Iac => "iac",
        }
    }
}

impl fmt::Display for Collection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Collection {
    type Err = RagError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "opa" => Ok(Collection::Opa),
            "iac" => Ok(Collection::Iac),
            other => Err(RagError::Config(format!("unknown collection `{other}` (opa, iac)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeChunk {
    pub chunk_id: String,
    pub doc_path: String,
    /// Half-open range in characters.
    pub char_range: [usize; 2],
    pub body: String,
    pub collection: Collection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Entry {
    #[serde(flatten)]
    chunk: KnowledgeChunk,
    vector: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalHit {
    pub chunk: KnowledgeChunk,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChunkParams {
    pub size: usize,
    pub overlap: usize,
}

impl Default for ChunkParams {
    fn default() -> Self {
        ChunkParams { size: DEFAULT_CHUNK_SIZE, overlap: DEFAULT_OVERLAP }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct IngestStats {
    pub files: usize,
    pub added: usize,
    pub unchanged: usize,
    pub replaced: usize,
}

impl IngestStats {
    pub fn chunks(&self) -> usize {
        self.added + self.unchanged + self.replaced
    }
}

/// Window starts 0, step, 2*step, ... while start < len; the last windows
/// are truncated at the end of the text.
pub fn windows(len: usize, params: ChunkParams) -> Result<Vec<(usize, usize)>, RagError> {
    if params.size == 0 || params.size <= params.overlap {
        return Err(RagError::Chunking { size: params.size, overlap: params.overlap });
    }
    let step = params.size - params.overlap;
    Ok((0..len).step_by(step).map(|s| (s, (s + params.size).min(len))).collect())
}

pub fn chunk_id(doc_path: &str, range: (usize, usize)) -> String {
    let mut h = Sha256::new();
    h.update(doc_path.as_bytes());
    h.update([0u8]);
    h.update(format!("{}:{}", range.0, range.1).as_bytes());
    hex::encode(h.finalize())
}

/// Text files under `path` in sorted order, or `path` itself.
fn collect_files(path: &Path) -> Result<Vec<PathBuf>, RagError> {
    if !path.is_dir() {
        if !path.exists() {
            return Err(RagError::Io {
                path: path.to_path_buf(),
                source: std::io::Error::new(std::io::ErrorKind::NotFound, "no such file or directory"),
            });
        }
        return Ok(vec![path.to_path_buf()]);
    }
    let mut out = Vec::new();
    for entry in walkdir::WalkDir::new(path).sort_by_file_name() {
        let entry = entry.map_err(|e| RagError::Io {
            path: path.to_path_buf(),
            source: e.into(),
        })?;
        let p = entry.path();
        if entry.file_type().is_file() && p.extension().and_then(|x| x.to_str()).is_some_and(|x| TEXT_EXTENSIONS.contains(&x)) {
            out.push(p.to_path_buf());
        }
    }
    Ok(out)
}

fn doc_path_string(p: &Path) -> String {
    p.to_string_lossy().replace('\\', "/")
}

/// An in-memory vector index over both collections.
#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeIndex {
    embedder: String,
    dim: Option<usize>,
    entries: Vec<Entry>,
}

impl KnowledgeIndex {
    pub fn new(embedder: &dyn Embedder) -> Self {
        KnowledgeIndex { embedder: embedder.name(), dim: None, entries: Vec::new() }
    }

    /// Vector length, once anything has been embedded.
    pub fn dim(&self) -> Option<usize> {
        self.dim
    }

    pub fn embedder_name(&self) -> &str {
        &self.embedder
    }

    pub fn len(&self, collection: Collection) -> usize {
        self.entries.iter().filter(|e| e.chunk.collection == collection).count()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn chunks(&self) -> impl Iterator<Item = &KnowledgeChunk> {
        self.entries.iter().map(|e| &e.chunk)
    }

    fn check_embedder(&self, embedder: &dyn Embedder) -> Result<(), RagError> {
        if embedder.name() != self.embedder {
            return Err(RagError::EmbedderMismatch { index: self.embedder.clone(), query: embedder.name() });
        }
        Ok(())
    }

    fn check_dim(&self, dim: usize) -> Result<(), RagError> {
        match self.dim {
            Some(want) if want != dim => Err(RagError::Dimension { want, got: dim }),
            _ => Ok(()),
        }
    }

    /// Chunks and embeds every file first; the index changes only if all of
    /// that succeeds.
    pub fn ingest(
        &mut self,
        embedder: &dyn Embedder,
        paths: &[PathBuf],
        collection: Collection,
        params: ChunkParams,
    ) -> Result<IngestStats, RagError> {
        self.check_embedder(embedder)?;
        windows(0, params)?;
        let mut stats = IngestStats::default();
        let mut staged: Vec<(Option<usize>, Entry)> = Vec::new();
        let mut dim = self.dim;
        for root in paths {
            for file in collect_files(root)? {
                stats.files += 1;
                let text = std::fs::read_to_string(&file).map_err(|e| RagError::Io { path: file.clone(), source: e })?;
                let chars: Vec<char> = text.chars().collect();
                let doc_path = doc_path_string(&file);
                for (s, e) in windows(chars.len(), params)? {
                    let id = chunk_id(&doc_path, (s, e));
                    let body: String = chars[s..e].iter().collect();
                    if staged.iter().any(|(_, x)| x.chunk.chunk_id == id) {
                        stats.unchanged += 1;
                        continue;
                    }
                    let existing = self.entries.iter().position(|x| x.chunk.chunk_id == id);
                    if let Some(k) = existing {
                        let old = &self.entries[k].chunk;
                        if old.body == body && old.collection == collection {
                            stats.unchanged += 1;
                            continue;
                        }
                    }
                    let vector = embedder.embed(&body)?;
                    match dim {
                        Some(d) if d != vector.len() => return Err(RagError::Dimension { want: d, got: vector.len() }),
                        _ => dim = Some(vector.len()),
                    }
                    if existing.is_some() {
                        stats.replaced += 1;
                    } else {
                        stats.added += 1;
                    }
                    let chunk = KnowledgeChunk {
                        chunk_id: id,
                        doc_path: doc_path.clone(),
                        char_range: [s, e],
                        body,
                        collection,
                    };
                    staged.push((existing, Entry { chunk, vector }));
                }
            }
        }
        self.dim = dim;
        for (slot, entry) in staged {
            match slot {
                Some(k) => self.entries[k] = entry,
                None => self.entries.push(entry),
            }
        }
        Ok(stats)
    }

    /// Top `k` chunks of `collection` by cosine similarity, ties broken by
    /// chunk id.
    pub fn query(
        &self,
        embedder: &dyn Embedder,
        question: &str,
        collection: Collection,
        k: usize,
    ) -> Result<Vec<RetrievalHit>, RagError> {
        self.check_embedder(embedder)?;
        if k == 0 {
            return Err(RagError::Config("k must be at least 1".into()));
        }
        if self.len(collection) == 0 {
            return Err(RagError::EmptyCollection(collection));
        }
        let q = embedder.embed(question)?;
        self.check_dim(q.len())?;
        let mut hits: Vec<RetrievalHit> = self
            .entries
            .iter()
            .filter(|e| e.chunk.collection == collection)
            .map(|e| RetrievalHit {
                score: e.vector.iter().zip(&q).map(|(a, b)| a * b).sum(),
                chunk: e.chunk.clone(),
            })
            .collect();
        hits.sort_by(|a, b| {
            b.score
                .partial_cmp(&a.score)
                .unwrap_or(Ordering::Equal)
                .then_with(|| a.chunk.chunk_id.cmp(&b.chunk.chunk_id))
        });
        hits.truncate(k);
        Ok(hits)
    }

    /// One header line, then one JSON line per chunk with its vector.
    pub fn save(&self, path: &Path) -> Result<(), RagError> {
        let io = |source| RagError::Io { path: path.to_path_buf(), source };
        let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
        let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
        let header = serde_json::json!({
            "format": FORMAT,
            "version": VERSION,
            "embedder": self.embedder,
            "dim": self.dim,
            "chunks": self.entries.len(),
        });
        writeln!(tmp, "{header}").map_err(io)?;
        for e in &self.entries {
            writeln!(tmp, "{}", serde_json::to_string(e).expect("entry serialization")).map_err(io)?;
        }
        tmp.persist(path).map_err(|e| io(e.error))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, RagError> {
        let corrupt = |reason: String| RagError::Corrupt { path: path.to_path_buf(), reason };
        let file = std::fs::File::open(path).map_err(|e| RagError::Io { path: path.to_path_buf(), source: e })?;
        let mut lines = BufReader::new(file).lines();
        let header: serde_json::Value = match lines.next() {
            Some(Ok(l)) => serde_json::from_str(&l).map_err(|e| corrupt(format!("header: {e}")))?,
            Some(Err(e)) => return Err(RagError::Io { path: path.to_path_buf(), source: e }),
            None => return Err(corrupt("empty file".into())),
        };
        if header["format"] != FORMAT {
            return Err(corrupt("not an index file".into()));
        }
        let version = header["version"].as_u64().ok_or_else(|| corrupt("missing version".into()))? as u32;
        if version != VERSION {
            return Err(RagError::Version(version));
        }
        let embedder = header["embedder"].as_str().ok_or_else(|| corrupt("missing embedder".into()))?.to_string();
        let dim = header["dim"].as_u64().map(|d| d as usize);
        let count = header["chunks"].as_u64().ok_or_else(|| corrupt("missing chunk count".into()))? as usize;
        let mut entries = Vec::with_capacity(count);
        for (n, line) in lines.enumerate() {
            let line = line.map_err(|e| RagError::Io { path: path.to_path_buf(), source: e })?;
            let entry: Entry = serde_json::from_str(&line).map_err(|e| corrupt(format!("line {}: {e}", n + 2)))?;
            if Some(entry.vector.len()) != dim {
                return Err(corrupt(format!("line {}: vector dimension {}", n + 2, entry.vector.len())));
            }
            entries.push(entry);
        }
        if entries.len() != count {
            return Err(corrupt(format!("expected {count} chunks, found {}", entries.len())));
        }
        Ok(KnowledgeIndex { embedder, dim, entries })
    }
}
