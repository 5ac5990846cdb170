//! Handbook knowledge base: paragraph-aware chunking, text-embedding
//! retrieval of per-disease standards, and checksummed snapshots.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adapters::{BackendError, TextEmbedder};
use crate::domain::{Embedding, KnowledgeSnippet};
use crate::index::{rank_top_k, IndexError, Rankable};
use crate::snapshot::{self, SnapshotError};
use crate::text::normalize_whitespace_lower;

pub const KB_SCHEMA_VERSION: u64 = 1;

#[derive(Debug, Error)]
pub enum KbError {
    #[error("document is empty")]
    EmptyDocument,
    #[error("embedder: {0}")]
    Backend(#[from] BackendError),
    #[error("retrieval: {0}")]
    Index(#[from] IndexError),
    #[error("embedder dimension {embedder} does not match knowledge base dimension {kb}")]
    DimensionMismatch { embedder: usize, kb: usize },
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("snapshot: {0}")]
    Snapshot(#[from] SnapshotError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChunkPolicy {
    pub max_chars: usize,
    pub overlap_chars: usize,
    pub prefer_paragraphs: bool,
}

impl Default for ChunkPolicy {
    fn default() -> Self {
        ChunkPolicy {
            max_chars: 800,
            overlap_chars: 80,
            prefer_paragraphs: true,
        }
    }
}

fn char_len(s: &str) -> usize {
    s.chars().count()
}

fn tail_chars(s: &str, n: usize) -> &str {
    if n == 0 {
        return "";
    }
    let len = char_len(s);
    if n >= len {
        return s;
    }
    let (idx, _) = s.char_indices().nth(len - n).expect("index in range");
    &s[idx..]
}

/// Cuts `text` into windows of at most `max` chars, stepping by `max - overlap`.
fn windows(text: &str, max: usize, overlap: usize) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let step = max.saturating_sub(overlap).max(1);
    let mut out = Vec::new();
    let mut start = 0;
    while start < chars.len() {
        let end = (start + max).min(chars.len());
        out.push(chars[start..end].iter().collect::<String>().trim().to_string());
        if end == chars.len() {
            break;
        }
        start += step;
    }
    out.retain(|s| !s.is_empty());
    out
}

const PARAGRAPH_SEP: &str = "\n\n";

/// Splits a document into chunks of at most `max_chars` characters.
///
/// With paragraph preference, whole paragraphs are packed greedily and a
/// chunk is closed before a paragraph that would overflow it; oversized
/// paragraphs fall back to character windows. Each new chunk is prefixed
/// with up to `overlap_chars` trailing characters of the previous one, as
/// far as the size limit allows.
pub fn chunk_document(document: &str, policy: &ChunkPolicy) -> Vec<String> {
    let max = policy.max_chars.max(1);
    let overlap = policy.overlap_chars.min(max.saturating_sub(1));
    if !policy.prefer_paragraphs {
        return windows(document.trim(), max, overlap);
    }
    let mut pieces = Vec::new();
    for para in document
        .split("\n\n")
        .flat_map(|p| p.split("\r\n\r\n"))
        .map(str::trim)
        .filter(|p| !p.is_empty())
    {
        if char_len(para) <= max {
            pieces.push(para.to_string());
        } else {
            pieces.extend(windows(para, max, overlap));
        }
    }
    let mut chunks: Vec<String> = Vec::new();
    let mut current = String::new();
    for piece in pieces {
        if current.is_empty() {
            current = piece;
            continue;
        }
        if char_len(&current) + PARAGRAPH_SEP.len() + char_len(&piece) <= max {
            current.push_str(PARAGRAPH_SEP);
            current.push_str(&piece);
            continue;
        }
        let room = max.saturating_sub(char_len(&piece) + PARAGRAPH_SEP.len());
        let tail = tail_chars(&current, overlap.min(room)).trim().to_string();
        chunks.push(std::mem::take(&mut current));
        current = if tail.is_empty() {
            piece
        } else {
            format!("{tail}{PARAGRAPH_SEP}{piece}")
        };
    }
    if !current.is_empty() {
        chunks.push(current);
    }
    chunks
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct StoredChunk {
    chunk_id: String,
    source_doc: String,
    text: String,
    embedding: Embedding,
    seq: u64,
    #[serde(skip)]
    norm: f64,
}

impl Rankable for StoredChunk {
    fn vector(&self) -> &[f64] {
        self.embedding.values()
    }
    fn norm(&self) -> f64 {
        self.norm
    }
    fn sequence(&self) -> u64 {
        self.seq
    }
    fn ident(&self) -> &str {
        &self.chunk_id
    }
}

#[derive(Serialize, Deserialize)]
struct KbSnapshot {
    schema_version: u64,
    dim: usize,
    chunks: Vec<StoredChunk>,
}

/// Chunked handbook with embedded chunks.
#[derive(Clone)]
pub struct KnowledgeBase {
    embedder: Arc<dyn TextEmbedder>,
    chunks: Vec<StoredChunk>,
    /// Skip chunks whose normalized text is already stored.
    pub dedupe: bool,
}

impl std::fmt::Debug for KnowledgeBase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("KnowledgeBase")
            .field("chunks", &self.chunks.len())
            .field("dedupe", &self.dedupe)
            .finish()
    }
}

impl KnowledgeBase {
    pub fn new(embedder: Arc<dyn TextEmbedder>) -> Self {
        KnowledgeBase {
            embedder,
            chunks: Vec::new(),
            dedupe: false,
        }
    }

    pub fn with_dedupe(mut self, on: bool) -> Self {
        self.dedupe = on;
        self
    }

    pub fn len(&self) -> usize {
        self.chunks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.embedder.dim()
    }

    /// Chunks, embeds and stores `document`. Returns the number of chunks
    /// added (fewer than produced when dedupe skips known text).
    pub fn ingest(
        &mut self,
        document: &str,
        source_name: &str,
        policy: &ChunkPolicy,
    ) -> Result<usize, KbError> {
        if document.trim().is_empty() {
            return Err(KbError::EmptyDocument);
        }
        let mut added = Vec::new();
        for (i, text) in chunk_document(document, policy).into_iter().enumerate() {
            if self.dedupe {
                let key = normalize_whitespace_lower(&text);
                let known = self
                    .chunks
                    .iter()
                    .chain(added.iter())
                    .any(|c: &StoredChunk| normalize_whitespace_lower(&c.text) == key);
                if known {
                    continue;
                }
            }
            let embedding = self.embedder.embed_text(&text)?;
            if embedding.dim() != self.dim() {
                return Err(KbError::DimensionMismatch {
                    embedder: embedding.dim(),
                    kb: self.dim(),
                });
            }
            let base_id = format!("{source_name}#{i}");
            let mut chunk_id = base_id.clone();
            let mut n = 1;
            while self.chunks.iter().chain(added.iter()).any(|c| c.chunk_id == chunk_id) {
                chunk_id = format!("{base_id}.{n}");
                n += 1;
            }
            added.push(StoredChunk {
                chunk_id,
                source_doc: source_name.to_string(),
                norm: embedding.norm(),
                embedding,
                text,
                seq: (self.chunks.len() + added.len()) as u64,
            });
        }
        let count = added.len();
        self.chunks.extend(added);
        Ok(count)
    }

    /// Ingests every `.md`, `.markdown` and `.txt` file under `dir`, in path
    /// order. Returns the total number of chunks added.
    pub fn ingest_dir(&mut self, dir: &Path, policy: &ChunkPolicy) -> Result<usize, KbError> {
        let mut files: Vec<_> = walkdir::WalkDir::new(dir)
            .sort_by_file_name()
            .into_iter()
            .filter_map(Result::ok)
            .filter(|e| e.file_type().is_file())
            .map(|e| e.into_path())
            .filter(|p| {
                matches!(
                    p.extension().and_then(|x| x.to_str()),
                    Some("md" | "markdown" | "txt")
                )
            })
            .collect();
        files.sort();
        let mut total = 0;
        for f in files {
            let text = std::fs::read_to_string(&f)?;
            if text.trim().is_empty() {
                continue;
            }
            let name = f.strip_prefix(dir).unwrap_or(&f).to_string_lossy().into_owned();
            total += self.ingest(&text, &name, policy)?;
        }
        Ok(total)
    }

    /// Top-`k` chunks by cosine between the embedded label and each chunk.
    /// An empty knowledge base yields an empty list.
    pub fn retrieve_prior(&self, disease_label: &str, k: usize) -> Result<Vec<KnowledgeSnippet>, KbError> {
        if self.chunks.is_empty() {
            return Ok(Vec::new());
        }
        let q = self.embedder.embed_text(disease_label)?;
        Ok(rank_top_k(&q, k, &self.chunks)?
            .into_iter()
            .map(|(i, score)| {
                let c = &self.chunks[i];
                KnowledgeSnippet {
                    chunk_id: c.chunk_id.clone(),
                    source_doc: c.source_doc.clone(),
                    text: c.text.clone(),
                    score: Some(score),
                }
            })
            .collect())
    }

    pub fn save(&self, path: &Path) -> Result<(), KbError> {
        snapshot::save(
            path,
            &KbSnapshot {
                schema_version: KB_SCHEMA_VERSION,
                dim: self.dim(),
                chunks: self.chunks.clone(),
            },
        )?;
        Ok(())
    }

    pub fn load(path: &Path, embedder: Arc<dyn TextEmbedder>) -> Result<Self, KbError> {
        let snap: KbSnapshot = snapshot::load(path, KB_SCHEMA_VERSION)?;
        if snap.dim != embedder.dim() {
            return Err(KbError::DimensionMismatch {
                embedder: embedder.dim(),
                kb: snap.dim,
            });
        }
        let mut chunks = snap.chunks;
        for c in &mut chunks {
            if c.embedding.dim() != snap.dim {
                return Err(KbError::Snapshot(SnapshotError::Corrupt(format!(
                    "chunk {} has dimension {}",
                    c.chunk_id,
                    c.embedding.dim()
                ))));
            }
            c.norm = c.embedding.norm();
        }
        Ok(KnowledgeBase {
            embedder,
            chunks,
            dedupe: false,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adapters::mock::MockTextEmbedder;

    fn kb() -> KnowledgeBase {
        KnowledgeBase::new(Arc::new(MockTextEmbedder { dim: 16, seed: 3 }))
    }

    fn paragraph(i: usize) -> String {
        let head = format!("P{i:02} ");
        format!("{head}{}", "x".repeat(200 - head.len()))
    }

    #[test]
    fn small_document_is_one_chunk() {
        let doc = "First para.\n\nSecond para.\n\nThird para.";
        assert_eq!(chunk_document(doc, &ChunkPolicy::default()), vec![doc.to_string()]);
    }

    #[test]
    fn ten_paragraphs_pack_two_per_chunk() {
        // 200 + 2 + 200 = 402 fits in 500; a third paragraph would reach 604.
        let doc: Vec<_> = (0..10).map(paragraph).collect();
        let policy = ChunkPolicy {
            max_chars: 500,
            overlap_chars: 0,
            prefer_paragraphs: true,
        };
        let chunks = chunk_document(&doc.join("\n\n"), &policy);
        assert_eq!(chunks.len(), 5);
        for (i, c) in chunks.iter().enumerate() {
            assert_eq!(c, &format!("{}\n\n{}", doc[2 * i], doc[2 * i + 1]));
        }
    }

    #[test]
    fn chunks_respect_max_with_overlap() {
        let doc: Vec<_> = (0..10).map(paragraph).collect();
        let policy = ChunkPolicy {
            max_chars: 500,
            overlap_chars: 60,
            prefer_paragraphs: true,
        };
        let chunks = chunk_document(&doc.join("\n\n"), &policy);
        assert!(chunks.iter().all(|c| c.chars().count() <= 500));
        assert!(chunks[1].starts_with(&doc[1][140..]));
    }

    #[test]
    fn oversize_paragraph_is_windowed() {
        let long = "y".repeat(2000);
        let chunks = chunk_document(&long, &ChunkPolicy::default());
        assert!(chunks.iter().all(|c| c.chars().count() <= 800));
        assert!(chunks.len() >= 3);
    }

    #[test]
    fn empty_document_rejected() {
        assert!(matches!(
            kb().ingest("  \n ", "x", &ChunkPolicy::default()),
            Err(KbError::EmptyDocument)
        ));
    }

    #[test]
    fn empty_kb_returns_nothing() {
        assert!(kb().retrieve_prior("Psoriasis", 3).unwrap().is_empty());
    }

    #[test]
    fn exact_label_chunk_ranks_first() {
        let mut k = kb();
        k.ingest("Some unrelated text about nails.", "a", &ChunkPolicy::default()).unwrap();
        k.ingest("Psoriasis", "b", &ChunkPolicy::default()).unwrap();
        k.ingest("Eczema is itchy.", "c", &ChunkPolicy::default()).unwrap();
        let hits = k.retrieve_prior("psoriasis", 1).unwrap();
        assert_eq!(hits[0].source_doc, "b");
        assert!((hits[0].score.unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn dedupe_makes_ingest_idempotent() {
        let mut k = kb().with_dedupe(true);
        let doc = "Alpha para.\n\nBeta para.";
        let n = k.ingest(doc, "doc", &ChunkPolicy::default()).unwrap();
        assert_eq!(n, 1);
        assert_eq!(k.ingest(doc, "doc", &ChunkPolicy::default()).unwrap(), 0);
        assert_eq!(k.len(), 1);
    }

    #[test]
    fn snapshot_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("kb.snapshot");
        let mut k = kb();
        k.ingest("Tinea corporis shows annular plaques.\n\nScale at the border.", "t", &ChunkPolicy::default())
            .unwrap();
        k.save(&p).unwrap();
        let back = KnowledgeBase::load(&p, Arc::new(MockTextEmbedder { dim: 16, seed: 3 })).unwrap();
        assert_eq!(
            k.retrieve_prior("Tinea", 2).unwrap(),
            back.retrieve_prior("Tinea", 2).unwrap()
        );
        assert!(matches!(
            KnowledgeBase::load(&p, Arc::new(MockTextEmbedder { dim: 8, seed: 3 })),
            Err(KbError::DimensionMismatch { .. })
        ));
    }
}
