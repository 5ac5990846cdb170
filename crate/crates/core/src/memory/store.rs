use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use crate::adapters::Summarizer;
use crate::domain::{GuidelineVersion, Label, MemoryEntry};
use crate::memory::graph::{AddOutcome, MemoryGraph};
use crate::memory::journal::{Journal, LogOp};
use crate::memory::MemoryError;
use crate::snapshot;

pub const SNAPSHOT_FILE: &str = "memory.snapshot";
pub const LOG_FILE: &str = "memory.log.jsonl";

struct Writer {
    dir: Option<PathBuf>,
    journal: Option<Journal>,
}

/// Single-writer, multi-reader handle over a [`MemoryGraph`].
///
/// Readers take an `Arc` snapshot and never block the writer. Every
/// mutation is journaled before it is published; [`MemoryStore::checkpoint`]
/// folds the journal into a fresh snapshot.
pub struct MemoryStore {
    published: RwLock<Arc<MemoryGraph>>,
    writer: Mutex<Writer>,
}

impl std::fmt::Debug for MemoryStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MemoryStore")
            .field("cases", &self.snapshot().len())
            .finish()
    }
}

impl MemoryStore {
    pub fn in_memory(graph: MemoryGraph) -> Self {
        MemoryStore {
            published: RwLock::new(Arc::new(graph)),
            writer: Mutex::new(Writer {
                dir: None,
                journal: None,
            }),
        }
    }

    pub fn exists(dir: &Path) -> bool {
        dir.join(SNAPSHOT_FILE).is_file()
    }

    /// Opens a durable store in `dir`, creating it with `init` when absent.
    /// Recovery is snapshot load followed by replay of the log tail.
    pub fn open(
        dir: &Path,
        init: impl FnOnce() -> Result<MemoryGraph, MemoryError>,
    ) -> Result<Self, MemoryError> {
        std::fs::create_dir_all(dir)?;
        let snap_path = dir.join(SNAPSHOT_FILE);
        let (mut graph, last_seq) = if snap_path.is_file() {
            MemoryGraph::from_snapshot_bytes(&std::fs::read(&snap_path)?)?
        } else {
            let g = init()?;
            snapshot::write_atomic(&snap_path, &g.to_snapshot_bytes(0))?;
            (g, 0)
        };
        let (journal, records) = Journal::open(&dir.join(LOG_FILE), last_seq + 1)?;
        for (line, rec) in records.into_iter().enumerate() {
            if rec.seq <= last_seq {
                continue;
            }
            let applied = match rec.op {
                LogOp::AddCase(e) => graph.insert_replayed(e),
                LogOp::Guideline(v) => graph.apply_replayed(v),
            };
            applied.map_err(|e| MemoryError::CorruptLog {
                line: line + 1,
                reason: e.to_string(),
            })?;
        }
        Ok(MemoryStore {
            published: RwLock::new(Arc::new(graph)),
            writer: Mutex::new(Writer {
                dir: Some(dir.to_path_buf()),
                journal: Some(journal),
            }),
        })
    }

    pub fn dir(&self) -> Option<PathBuf> {
        self.writer.lock().unwrap().dir.clone()
    }

    /// Current immutable view.
    pub fn snapshot(&self) -> Arc<MemoryGraph> {
        self.published.read().unwrap().clone()
    }

    fn write<R>(
        &self,
        f: impl FnOnce(&mut MemoryGraph) -> Result<(R, Vec<LogOp>), MemoryError>,
    ) -> Result<R, MemoryError> {
        let mut w = self.writer.lock().unwrap();
        let mut next = (*self.snapshot()).clone();
        let (out, ops) = f(&mut next)?;
        if let Some(j) = w.journal.as_mut() {
            if !ops.is_empty() {
                j.append(ops)?;
            }
        }
        *self.published.write().unwrap() = Arc::new(next);
        Ok(out)
    }

    fn add_ops(g: &MemoryGraph, out: &AddOutcome) -> Vec<LogOp> {
        let mut ops = vec![LogOp::AddCase(
            g.case(&out.case_id).expect("inserted").clone(),
        )];
        ops.extend(out.evolved.clone().map(LogOp::Guideline));
        ops
    }

    pub fn add_case(
        &self,
        entry: MemoryEntry,
        summarizer: &dyn Summarizer,
    ) -> Result<AddOutcome, MemoryError> {
        self.write(|g| {
            let out = g.add_case(entry, summarizer)?;
            let ops = Self::add_ops(g, &out);
            Ok((out, ops))
        })
    }

    /// Only confirmed cases enter memory; unconfirmed ones return `None`.
    pub fn ingest(
        &self,
        entry: MemoryEntry,
        confirmed: bool,
        summarizer: &dyn Summarizer,
    ) -> Result<Option<AddOutcome>, MemoryError> {
        if !confirmed {
            return Ok(None);
        }
        self.add_case(entry, summarizer).map(Some)
    }

    /// All-or-nothing batch insert.
    pub fn add_cases(
        &self,
        entries: impl IntoIterator<Item = MemoryEntry>,
        summarizer: &dyn Summarizer,
    ) -> Result<Vec<AddOutcome>, MemoryError> {
        self.write(|g| {
            let mut outs = Vec::new();
            let mut ops = Vec::new();
            for e in entries {
                let out = g.add_case(e, summarizer)?;
                ops.extend(Self::add_ops(g, &out));
                outs.push(out);
            }
            Ok((outs, ops))
        })
    }

    pub fn synthesize_initial(
        &self,
        category: &Label,
        summarizer: &dyn Summarizer,
    ) -> Result<GuidelineVersion, MemoryError> {
        self.write(|g| {
            let v = g.synthesize_initial(category, summarizer)?;
            Ok((v.clone(), vec![LogOp::Guideline(v)]))
        })
    }

    pub fn maybe_evolve(
        &self,
        category: &Label,
        summarizer: &dyn Summarizer,
    ) -> Result<Option<GuidelineVersion>, MemoryError> {
        self.write(|g| {
            let v = g.maybe_evolve(category, summarizer)?;
            let ops = v.clone().map(LogOp::Guideline).into_iter().collect();
            Ok((v, ops))
        })
    }

    /// Writes a snapshot covering every journaled record, then empties the log.
    pub fn checkpoint(&self) -> Result<(), MemoryError> {
        let mut w = self.writer.lock().unwrap();
        let Some(dir) = w.dir.clone() else {
            return Ok(());
        };
        let g = self.snapshot();
        let last = w.journal.as_ref().map_or(0, |j| j.next_seq() - 1);
        snapshot::write_atomic(&dir.join(SNAPSHOT_FILE), &g.to_snapshot_bytes(last))?;
        if let Some(j) = w.journal.as_mut() {
            j.truncate()?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adapters::mock::MockSummarizer;
    use crate::domain::LabelRegistry;
    use crate::index::mock_extract;
    use crate::memory::EvolutionConfig;

    fn init() -> Result<MemoryGraph, MemoryError> {
        MemoryGraph::new(
            EvolutionConfig {
                n_thresh: 2,
                dim: 4,
                allow_new_labels: true,
                ..Default::default()
            },
            LabelRegistry::default(),
        )
    }

    fn entry(i: u32, label: &str) -> MemoryEntry {
        MemoryEntry::new(
            format!("c{i}"),
            mock_extract(&i.to_le_bytes(), 4, 0),
            format!("finding{i}"),
            label,
        )
    }

    #[test]
    fn journal_replay_recovers_without_checkpoint() {
        let dir = tempfile::tempdir().unwrap();
        {
            let s = MemoryStore::open(dir.path(), init).unwrap();
            for i in 0..5 {
                s.add_case(entry(i, "A"), &MockSummarizer).unwrap();
            }
        }
        let s = MemoryStore::open(dir.path(), || unreachable!()).unwrap();
        let g = s.snapshot();
        assert_eq!(g.len(), 5);
        assert_eq!(g.versions(&"A".into()).len(), 2);
        assert_eq!(g.pending(&"A".into()), 1);
    }

    #[test]
    fn checkpoint_then_more_writes() {
        let dir = tempfile::tempdir().unwrap();
        let before = {
            let s = MemoryStore::open(dir.path(), init).unwrap();
            s.add_cases((0..3).map(|i| entry(i, "A")), &MockSummarizer).unwrap();
            s.checkpoint().unwrap();
            assert_eq!(std::fs::read(dir.path().join(LOG_FILE)).unwrap().len(), 0);
            s.add_case(entry(3, "B"), &MockSummarizer).unwrap();
            s.add_case(entry(4, "A"), &MockSummarizer).unwrap();
            s.snapshot()
        };
        let s = MemoryStore::open(dir.path(), || unreachable!()).unwrap();
        let g = s.snapshot();
        assert_eq!(g.len(), before.len());
        assert_eq!(g.next_seq(), before.next_seq());
        for l in ["A", "B"] {
            let l = Label::new(l);
            assert_eq!(g.versions(&l), before.versions(&l));
            assert_eq!(g.pending(&l), before.pending(&l));
        }
    }

    #[test]
    fn failed_batch_commits_nothing() {
        let s = MemoryStore::in_memory(init().unwrap());
        let res = s.add_cases(vec![entry(0, "A"), entry(0, "A")], &MockSummarizer);
        assert!(matches!(res, Err(MemoryError::DuplicateId(_))));
        assert!(s.snapshot().is_empty());
    }

    #[test]
    fn unconfirmed_cases_are_ignored() {
        let s = MemoryStore::in_memory(init().unwrap());
        assert!(s.ingest(entry(0, "A"), false, &MockSummarizer).unwrap().is_none());
        assert!(s.snapshot().is_empty());
        assert!(s.ingest(entry(0, "A"), true, &MockSummarizer).unwrap().is_some());
    }

    #[test]
    fn readers_keep_their_snapshot() {
        let s = MemoryStore::in_memory(init().unwrap());
        let old = s.snapshot();
        s.add_case(entry(0, "A"), &MockSummarizer).unwrap();
        assert!(old.is_empty());
        assert_eq!(s.snapshot().len(), 1);
    }
}
