//! Chunk a handbook note, embed it and fetch the textbook prior for a label.

use std::sync::Arc;

use evoderm::adapters::mock::MockTextEmbedder;
use evoderm::knowledge::{chunk_document, ChunkPolicy, KnowledgeBase};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let note = evoderm::corpus::HANDBOOK
        .iter()
        .map(|(_, text)| *text)
        .collect::<Vec<_>>()
        .join("\n\n");
    let policy = ChunkPolicy {
        max_chars: 300,
        overlap_chars: 40,
        prefer_paragraphs: true,
    };
    for (i, c) in chunk_document(&note, &policy).iter().enumerate() {
        println!("chunk {i}: {} chars", c.chars().count());
    }

    let mut kb = KnowledgeBase::new(Arc::new(MockTextEmbedder { dim: 32, seed: 7 })).with_dedupe(true);
    let added = kb.ingest(&note, "handbook.md", &policy)?;
    let again = kb.ingest(&note, "handbook.md", &policy)?;
    println!("ingested {added} chunks, {again} on the second pass with dedupe");

    for s in kb.retrieve_prior("Psoriasis", 2)? {
        println!("[{}] {:.4} {}", s.chunk_id, s.score.unwrap_or(0.0), s.text.lines().next().unwrap_or(""));
    }
    Ok(())
}
