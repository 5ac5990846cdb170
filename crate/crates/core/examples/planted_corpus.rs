//! Regenerates the planted corpus.
//!
//! ```sh
//! cargo run -p evoderm --example planted_corpus -- crates/core/data/planted
//! ```

use std::path::PathBuf;

fn main() -> std::io::Result<()> {
    let root = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(evoderm::corpus::bundled_root);
    evoderm::corpus::generate(&root)?;
    let corpus = evoderm::corpus::PlantedCorpus::open(&root);
    let wrong = corpus.samples().iter().filter(|s| s.classifier_is_wrong()).count();
    println!(
        "wrote {} test images ({wrong} with a misleading planted label) to {}",
        corpus.samples().len(),
        root.display()
    );
    Ok(())
}
