//! The self-evolving case memory: confirmed case triplets linked to their
//! disease category, cosine retrieval over all cases, and per-category
//! guideline versions that evolve once enough new cases accumulate.
//!
//! [`MemoryGraph`] is the pure in-memory model. [`MemoryStore`] wraps it
//! with a single writer, lock-free reader snapshots, and durable storage
//! (snapshot plus append-only operation log).

mod graph;
mod journal;
mod store;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adapters::BackendError;
use crate::domain::{CaseId, DomainError, Label, LabelRegistry, MemoryEntry};
use crate::index::IndexError;
use crate::snapshot::{self, SnapshotError};

pub use graph::{
    refinement_delta, AddOutcome, CategoryState, EvolutionConfig, MemoryGraph, TimelineRow,
};
pub use journal::{Journal, LogOp, LogRecord};
pub use store::{MemoryStore, LOG_FILE, SNAPSHOT_FILE};

pub const SNAPSHOT_SCHEMA_VERSION: u64 = 1;

#[derive(Debug, Error)]
pub enum MemoryError {
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error("duplicate case id {0}")]
    DuplicateId(CaseId),
    #[error("unknown label {0}")]
    UnknownLabel(Label),
    #[error("category {0} has no cases")]
    EmptyCategory(Label),
    #[error("category {0} already has an initial guideline")]
    AlreadyInitialized(Label),
    #[error("versions are not consecutive: {prev} -> {next}")]
    VersionMismatch { prev: u32, next: u32 },
    #[error("category {category} references missing case {case_id}")]
    DanglingCase { category: Label, case_id: CaseId },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("summarizer: {0}")]
    Backend(#[from] BackendError),
    #[error("retrieval: {0}")]
    Index(#[from] IndexError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt snapshot: {0}")]
    CorruptSnapshot(String),
    #[error("corrupt operation log at line {line}: {reason}")]
    CorruptLog { line: usize, reason: String },
    #[error("unsupported snapshot schema version {0}")]
    SchemaVersionUnsupported(u64),
}

impl From<SnapshotError> for MemoryError {
    fn from(e: SnapshotError) -> Self {
        match e {
            SnapshotError::Io(e) => MemoryError::Io(e),
            SnapshotError::Corrupt(m) => MemoryError::CorruptSnapshot(m),
            SnapshotError::SchemaVersionUnsupported { found, .. } => {
                MemoryError::SchemaVersionUnsupported(found)
            }
        }
    }
}

#[derive(Serialize, Deserialize)]
struct SnapshotDoc {
    schema_version: u64,
    /// Sequence number of the last log record folded into this snapshot.
    last_log_seq: u64,
    next_seq: u64,
    config: EvolutionConfig,
    labels: LabelRegistry,
    cases: Vec<MemoryEntry>,
    categories: BTreeMap<Label, CategoryState>,
}

impl MemoryGraph {
    pub(crate) fn to_snapshot_bytes(&self, last_log_seq: u64) -> Vec<u8> {
        let (config, labels, cases, categories) = self.raw_parts();
        let doc = SnapshotDoc {
            schema_version: SNAPSHOT_SCHEMA_VERSION,
            last_log_seq,
            next_seq: self.next_seq(),
            config: config.clone(),
            labels: labels.clone(),
            cases: cases.into_iter().cloned().collect(),
            categories: categories.clone(),
        };
        snapshot::encode(&doc)
    }

    pub(crate) fn from_snapshot_bytes(bytes: &[u8]) -> Result<(Self, u64), MemoryError> {
        let doc: SnapshotDoc = snapshot::decode(bytes, SNAPSHOT_SCHEMA_VERSION)?;
        let g = MemoryGraph::from_parts(
            doc.config,
            doc.labels,
            doc.cases,
            doc.categories,
            doc.next_seq,
        )
        .map_err(|e| MemoryError::CorruptSnapshot(e.to_string()))?;
        Ok((g, doc.last_log_seq))
    }

    /// Writes a checksummed snapshot of the whole graph.
    pub fn save(&self, path: &Path) -> Result<(), MemoryError> {
        snapshot::write_atomic(path, &self.to_snapshot_bytes(0))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, MemoryError> {
        Ok(Self::from_snapshot_bytes(&std::fs::read(path)?)?.0)
    }

    /// The snapshot document as a single JSON line, without the checksum.
    pub fn export_json(&self) -> String {
        let bytes = self.to_snapshot_bytes(0);
        let text = String::from_utf8(bytes).expect("snapshot is UTF-8");
        text.lines().next().unwrap_or_default().to_owned()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adapters::mock::MockSummarizer;
    use crate::domain::MemoryEntry;
    use crate::index::mock_extract;

    fn populated() -> MemoryGraph {
        let mut g = MemoryGraph::new(
            EvolutionConfig {
                n_thresh: 3,
                dim: 8,
                ..Default::default()
            },
            LabelRegistry::new(["A", "B"]),
        )
        .unwrap();
        for i in 0..20 {
            let label = if i % 3 == 0 { "B" } else { "A" };
            let e = MemoryEntry::new(
                format!("c{i}"),
                mock_extract(&[i as u8], 8, 4),
                format!("term{} shared", i % 5),
                label,
            );
            g.add_case(e, &MockSummarizer).unwrap();
        }
        g
    }

    #[test]
    fn save_load_is_observationally_equal() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("mem.snapshot");
        let g = populated();
        g.save(&p).unwrap();
        let h = MemoryGraph::load(&p).unwrap();
        for label in ["A", "B"] {
            let l = Label::new(label);
            assert_eq!(g.guideline_timeline(&l), h.guideline_timeline(&l));
            assert_eq!(g.versions(&l), h.versions(&l));
            assert_eq!(g.pending(&l), h.pending(&l));
        }
        for q in 0..5u8 {
            let q = mock_extract(&[q, 99], 8, 1);
            assert_eq!(g.query_similar(&q, 5).unwrap(), h.query_similar(&q, 5).unwrap());
        }
        assert_eq!(g.next_seq(), h.next_seq());
    }

    #[test]
    fn truncated_file_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("mem.snapshot");
        populated().save(&p).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(MemoryGraph::load(&p), Err(MemoryError::CorruptSnapshot(_))));
    }

    #[test]
    fn empty_snapshot_loads_empty() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("empty.snapshot");
        MemoryGraph::new(EvolutionConfig::default(), LabelRegistry::default())
            .unwrap()
            .save(&p)
            .unwrap();
        let g = MemoryGraph::load(&p).unwrap();
        assert!(g.is_empty());
        assert!(g.categories().is_empty());
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(
            MemoryGraph::load(Path::new("/nonexistent/evoderm/x.snapshot")),
            Err(MemoryError::Io(_))
        ));
    }
}
