//! A durable memory store: operation log, checkpoint, reopen, corruption check.

use evoderm::adapters::mock::MockSummarizer;
use evoderm::domain::{Embedding, Label, LabelRegistry, MemoryEntry};
use evoderm::memory::{EvolutionConfig, MemoryError, MemoryGraph, MemoryStore, SNAPSHOT_FILE};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let tmp = tempfile::tempdir()?;
    let dir = tmp.path().to_path_buf();
    let labels = [Label::new("Eczema"), Label::new("Psoriasis")];
    let init = || {
        MemoryGraph::new(
            EvolutionConfig {
                n_thresh: 3,
                dim: 3,
                ..Default::default()
            },
            LabelRegistry::new(labels.clone()),
        )
    };

    let store = MemoryStore::open(&dir, init)?;
    for i in 0..8 {
        let e = MemoryEntry::new(
            format!("case-{i}"),
            Embedding::new(vec![1.0, i as f64, 0.5])?,
            format!("finding-{} finding-{}", i % 3, i % 5),
            labels[i % 2].clone(),
        );
        store.add_case(e, &MockSummarizer)?;
    }
    drop(store);

    let reopened = MemoryStore::open(&dir, init)?;
    let g = reopened.snapshot();
    println!("replayed {} cases from the log", g.len());
    reopened.checkpoint()?;
    drop(reopened);

    let g2 = MemoryStore::open(&dir, init)?.snapshot();
    for l in &labels {
        println!("{l}: {} version(s), pending {}", g2.versions(l).len(), g2.pending(l));
    }

    let snap = dir.join(SNAPSHOT_FILE);
    let mut bytes = std::fs::read(&snap)?;
    bytes[10] ^= 0xff;
    std::fs::write(&snap, bytes)?;
    match MemoryStore::open(&dir, init) {
        Err(MemoryError::CorruptSnapshot(why)) => println!("corrupted snapshot rejected: {why}"),
        Err(e) => println!("unexpected error: {e}"),
        Ok(_) => println!("corruption went unnoticed"),
    }
    Ok(())
}

