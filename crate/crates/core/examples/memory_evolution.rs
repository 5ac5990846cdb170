//! Guideline versions appear every `n_thresh` confirmed cases per category.

use evoderm::adapters::mock::MockSummarizer;
use evoderm::domain::{Embedding, Label, LabelRegistry, MemoryEntry};
use evoderm::memory::{EvolutionConfig, MemoryGraph};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let psoriasis = Label::new("Psoriasis");
    let config = EvolutionConfig {
        n_thresh: 2,
        dim: 2,
        ..Default::default()
    };
    let mut graph = MemoryGraph::new(config, LabelRegistry::new([psoriasis.clone()]))?;

    let findings = ["red plaque", "plaque scale", "scale silvery", "nail", "pitting elbow", "scalp knee"];
    for (i, f) in findings.iter().enumerate() {
        let entry = MemoryEntry::new(format!("case-{i}"), Embedding::new(vec![1.0, i as f64])?, *f, psoriasis.clone());
        let out = graph.add_case(entry, &MockSummarizer)?;
        match out.evolved {
            Some(v) => println!("{} -> v{}: {}", out.case_id, v.version, v.text),
            None => println!("{} -> pending {}", out.case_id, graph.pending(&psoriasis)),
        }
    }

    println!("\nversion  delta   sources");
    for row in graph.guideline_timeline(&psoriasis) {
        println!("{:>7}  {:.4}  {:>7}", row.version, row.refinement_delta, row.source_count);
    }
    Ok(())
}
