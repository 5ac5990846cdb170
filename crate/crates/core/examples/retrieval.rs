//! Exact cosine top-K over a handful of stored cases.

use evoderm::domain::{Embedding, MemoryEntry};
use evoderm::index::{top_k, IndexedCase};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let rows = [
        ("ps-1", [0.9, 0.1, 0.0], "silvery scale", "Psoriasis"),
        ("ps-2", [0.8, 0.2, 0.1], "well-demarcated plaque", "Psoriasis"),
        ("ec-1", [0.1, 0.9, 0.2], "weeping patch", "Eczema"),
        ("ti-1", [0.0, 0.2, 0.9], "annular border", "Tinea Corporis"),
        // Same direction as ps-1: ties are broken by insertion time, then id.
        ("ps-3", [1.8, 0.2, 0.0], "silvery scale", "Psoriasis"),
    ];
    let cases: Vec<IndexedCase> = rows
        .iter()
        .enumerate()
        .map(|(i, (id, v, f, dx))| {
            let mut e = MemoryEntry::new(*id, Embedding::new(v.to_vec())?, *f, *dx);
            e.created_at = i as u64;
            Ok(IndexedCase::new(e))
        })
        .collect::<Result<_, evoderm::domain::DomainError>>()?;

    let query = Embedding::new(vec![1.0, 0.1, 0.0])?;
    for hit in top_k(&query, 3, &cases)? {
        println!("{:<6} {:.6}  {}", hit.case_id, hit.score, hit.diagnosis);
    }
    Ok(())
}
