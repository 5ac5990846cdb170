//! Append-only operation log, JSON Lines: `{"seq":N,"op":...,"payload":...}`.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::domain::{GuidelineVersion, MemoryEntry};
use crate::memory::MemoryError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", content = "payload", rename_all = "snake_case")]
pub enum LogOp {
    AddCase(MemoryEntry),
    Guideline(GuidelineVersion),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub seq: u64,
    #[serde(flatten)]
    pub op: LogOp,
}

#[derive(Debug)]
pub struct Journal {
    path: PathBuf,
    out: BufWriter<File>,
    next_seq: u64,
}

impl Journal {
    /// Opens (creating if needed) the log and returns the records it holds.
    ///
    /// A final line without its newline is a torn write and is discarded;
    /// any other unparsable line is corruption.
    pub fn open(path: &Path, first_seq: u64) -> Result<(Journal, Vec<LogRecord>), MemoryError> {
        let bytes = match std::fs::read(path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(e.into()),
        };
        let complete = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
        let mut records = Vec::new();
        for (i, line) in bytes[..complete].split(|&b| b == b'\n').enumerate() {
            if line.is_empty() {
                continue;
            }
            let rec: LogRecord = serde_json::from_slice(line).map_err(|e| MemoryError::CorruptLog {
                line: i + 1,
                reason: e.to_string(),
            })?;
            if let Some(prev) = records.last().map(|r: &LogRecord| r.seq) {
                if rec.seq <= prev {
                    return Err(MemoryError::CorruptLog {
                        line: i + 1,
                        reason: format!("sequence {} after {}", rec.seq, prev),
                    });
                }
            }
            records.push(rec);
        }
        if complete < bytes.len() {
            let f = OpenOptions::new().write(true).open(path)?;
            f.set_len(complete as u64)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        let next_seq = records.last().map_or(first_seq, |r| r.seq + 1).max(first_seq);
        Ok((
            Journal {
                path: path.to_path_buf(),
                out: BufWriter::new(file),
                next_seq,
            },
            records,
        ))
    }

    pub fn next_seq(&self) -> u64 {
        self.next_seq
    }

    /// Appends and flushes records, returning the last assigned sequence.
    pub fn append(&mut self, ops: impl IntoIterator<Item = LogOp>) -> Result<u64, MemoryError> {
        let mut last = self.next_seq.saturating_sub(1);
        for op in ops {
            let rec = LogRecord {
                seq: self.next_seq,
                op,
            };
            serde_json::to_writer(&mut self.out, &rec)
                .map_err(|e| MemoryError::Io(std::io::Error::other(e)))?;
            self.out.write_all(b"\n")?;
            last = self.next_seq;
            self.next_seq += 1;
        }
        self.out.flush()?;
        self.out.get_ref().sync_data()?;
        Ok(last)
    }

    /// Drops all records; sequence numbering continues.
    pub fn truncate(&mut self) -> Result<(), MemoryError> {
        self.out.flush()?;
        let file = OpenOptions::new().write(true).truncate(true).open(&self.path)?;
        drop(file);
        let file = OpenOptions::new().append(true).open(&self.path)?;
        self.out = BufWriter::new(file);
        Ok(())
    }
}
