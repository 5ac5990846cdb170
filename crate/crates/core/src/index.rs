//! Cosine similarity, exact top-K ranking, the feature-extractor port and
//! the precomputed-embedding sidecar format.

use std::cmp::Ordering;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{CaseId, DomainError, Embedding, Label, MemoryEntry};
use crate::text::{seeded_digest, unit_coordinates};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IndexError {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("cosine undefined for the zero vector")]
    ZeroVector,
    #[error("k must be at least 1")]
    InvalidK,
    #[error("invalid embedding: {0}")]
    Invalid(#[from] DomainError),
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Cosine similarity using precomputed norms. Clamped to `[-1, 1]`.
pub fn cosine_with_norms(a: &[f64], norm_a: f64, b: &[f64], norm_b: f64) -> f64 {
    (dot(a, b) / (norm_a * norm_b)).clamp(-1.0, 1.0)
}

/// Cosine similarity of two embeddings.
pub fn cosine(a: &Embedding, b: &Embedding) -> Result<f64, IndexError> {
    if a.dim() != b.dim() {
        return Err(IndexError::DimensionMismatch {
            expected: a.dim(),
            actual: b.dim(),
        });
    }
    if a.is_zero() || b.is_zero() {
        return Err(IndexError::ZeroVector);
    }
    Ok(cosine_with_norms(a.values(), a.norm(), b.values(), b.norm()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseHit {
    pub case_id: CaseId,
    pub score: f64,
    pub diagnosis: Label,
    pub key_findings: String,
}

/// Anything that can be ranked against a query vector.
pub trait Rankable {
    fn vector(&self) -> &[f64];
    /// Cached Euclidean norm of [`Rankable::vector`].
    fn norm(&self) -> f64;
    fn sequence(&self) -> u64;
    fn ident(&self) -> &str;
}

/// Ranking order: score descending, then sequence ascending, then id.
pub fn hit_order(a: (f64, u64, &str), b: (f64, u64, &str)) -> Ordering {
    b.0.total_cmp(&a.0)
        .then(a.1.cmp(&b.1))
        .then_with(|| a.2.cmp(b.2))
}

/// Exact top-`k` over `items`. Returns `min(k, len)` `(index, score)` pairs.
pub fn rank_top_k<T: Rankable>(
    query: &Embedding,
    k: usize,
    items: &[T],
) -> Result<Vec<(usize, f64)>, IndexError> {
    if k == 0 {
        return Err(IndexError::InvalidK);
    }
    if items.is_empty() {
        return Ok(Vec::new());
    }
    let dim = items[0].vector().len();
    query.check_query(dim).map_err(|e| match e {
        DomainError::DimensionMismatch { expected, actual } => {
            IndexError::DimensionMismatch { expected, actual }
        }
        DomainError::ZeroVector => IndexError::ZeroVector,
        other => IndexError::Invalid(other),
    })?;
    let qn = query.norm();
    let q = query.values();
    let mut scored: Vec<(usize, f64)> = items
        .iter()
        .enumerate()
        .map(|(i, it)| (i, cosine_with_norms(q, qn, it.vector(), it.norm())))
        .collect();
    let cmp = |a: &(usize, f64), b: &(usize, f64)| {
        let (x, y) = (&items[a.0], &items[b.0]);
        hit_order((a.1, x.sequence(), x.ident()), (b.1, y.sequence(), y.ident()))
    };
    let k = k.min(scored.len());
    if k < scored.len() {
        scored.select_nth_unstable_by(k - 1, cmp);
        scored.truncate(k);
    }
    scored.sort_by(cmp);
    Ok(scored)
}

/// A stored case together with its cached norm.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexedCase {
    pub entry: MemoryEntry,
    norm: f64,
}

impl IndexedCase {
    pub fn new(entry: MemoryEntry) -> Self {
        let norm = entry.embedding.norm();
        IndexedCase { entry, norm }
    }
}

impl Rankable for IndexedCase {
    fn vector(&self) -> &[f64] {
        self.entry.embedding.values()
    }
    fn norm(&self) -> f64 {
        self.norm
    }
    fn sequence(&self) -> u64 {
        self.entry.created_at
    }
    fn ident(&self) -> &str {
        self.entry.id.as_str()
    }
}

impl Rankable for MemoryEntry {
    fn vector(&self) -> &[f64] {
        self.embedding.values()
    }
    fn norm(&self) -> f64 {
        self.embedding.norm()
    }
    fn sequence(&self) -> u64 {
        self.created_at
    }
    fn ident(&self) -> &str {
        self.id.as_str()
    }
}

/// Top-`k` most similar cases. An empty collection yields an empty list.
pub fn top_k<T: CaseLike>(
    query: &Embedding,
    k: usize,
    cases: &[T],
) -> Result<Vec<CaseHit>, IndexError> {
    Ok(rank_top_k(query, k, cases)?
        .into_iter()
        .map(|(i, score)| {
            let e = cases[i].entry();
            CaseHit {
                case_id: e.id.clone(),
                score,
                diagnosis: e.diagnosis.clone(),
                key_findings: e.key_findings.clone(),
            }
        })
        .collect())
}

/// Anything that wraps a stored case.
pub trait CaseLike: Rankable {
    fn entry(&self) -> &MemoryEntry;
}

impl CaseLike for IndexedCase {
    fn entry(&self) -> &MemoryEntry {
        &self.entry
    }
}

impl CaseLike for MemoryEntry {
    fn entry(&self) -> &MemoryEntry {
        self
    }
}

impl<T: Rankable + ?Sized> Rankable for std::sync::Arc<T> {
    fn vector(&self) -> &[f64] {
        (**self).vector()
    }
    fn norm(&self) -> f64 {
        (**self).norm()
    }
    fn sequence(&self) -> u64 {
        (**self).sequence()
    }
    fn ident(&self) -> &str {
        (**self).ident()
    }
}

impl<T: CaseLike + ?Sized> CaseLike for std::sync::Arc<T> {
    fn entry(&self) -> &MemoryEntry {
        (**self).entry()
    }
}

/// Image feature extractor port.
pub trait FeatureExtractor: Send + Sync {
    fn dim(&self) -> usize;
    fn extract(&self, image: &[u8]) -> Embedding;
}

/// Deterministic stand-in for a neural image encoder.
pub fn mock_extract(image_bytes: &[u8], dim: usize, seed: u64) -> Embedding {
    assert!(dim >= 1, "embedding dimension must be at least 1");
    let digest = seeded_digest(seed, &[b"image-embedding", image_bytes]);
    Embedding::new(unit_coordinates(digest, dim)).expect("coordinates are finite")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MockExtractor {
    pub dim: usize,
    pub seed: u64,
}

impl FeatureExtractor for MockExtractor {
    fn dim(&self) -> usize {
        self.dim
    }
    fn extract(&self, image: &[u8]) -> Embedding {
        mock_extract(image, self.dim, self.seed)
    }
}

#[derive(Debug, Error)]
pub enum SidecarError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("line {line}: {reason}")]
    Malformed { line: u64, reason: String },
}

/// One precomputed embedding record.
#[derive(Debug, Clone, PartialEq)]
pub struct SidecarRecord {
    pub image_path: PathBuf,
    pub embedding: Embedding,
}

/// Writes `image_path,d,v1,...,vd` lines. Floats use Rust's shortest
/// round-trip representation.
pub fn write_sidecar<W: Write>(out: W, records: &[SidecarRecord]) -> Result<(), SidecarError> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_writer(out);
    for r in records {
        let mut row = Vec::with_capacity(r.embedding.dim() + 2);
        row.push(r.image_path.to_string_lossy().into_owned());
        row.push(r.embedding.dim().to_string());
        row.extend(r.embedding.values().iter().map(|v| format!("{v:?}")));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_sidecar<R: BufRead>(input: R) -> Result<Vec<SidecarRecord>, SidecarError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(input);
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let bad = |reason: String| SidecarError::Malformed { line, reason };
        if rec.len() < 3 {
            return Err(bad("expected image_path,d,values...".into()));
        }
        let d: usize = rec[1]
            .trim()
            .parse()
            .map_err(|_| bad(format!("bad dimension {:?}", &rec[1])))?;
        if rec.len() - 2 != d {
            return Err(bad(format!("declared d={d} but found {} values", rec.len() - 2)));
        }
        let values = rec
            .iter()
            .skip(2)
            .map(|v| v.trim().parse::<f64>().map_err(|_| bad(format!("bad float {v:?}"))))
            .collect::<Result<Vec<_>, _>>()?;
        let embedding = Embedding::new(values).map_err(|e| bad(e.to_string()))?;
        out.push(SidecarRecord {
            image_path: PathBuf::from(&rec[0]),
            embedding,
        });
    }
    Ok(out)
}

pub fn load_sidecar(path: &Path) -> Result<Vec<SidecarRecord>, SidecarError> {
    let f = std::fs::File::open(path)?;
    read_sidecar(std::io::BufReader::new(f))
}
