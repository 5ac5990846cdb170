//! Accuracy on the planted corpus with and without the evolving memory.
//!
//! The mock classifier is steered to a wrong label on 20 of the 60 images.
//! With memory, the evolved guidelines carry each class's findings terms,
//! the review detects the conflict and follows the guideline.

use evoderm::corpus::PlantedCorpus;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let corpus = PlantedCorpus::bundled();
    for use_memory in [true, false] {
        let mut cfg = corpus.config();
        cfg.pipeline.use_memory = use_memory;
        let rt = corpus.runtime(cfg, true)?;
        let mut correct = 0;
        let samples = corpus.samples();
        for s in &samples {
            let d = rt.diagnose(&corpus.load_image(s)?)?;
            if d.report.final_diagnosis == s.gold {
                correct += 1;
            }
        }
        println!(
            "memory {:<8} accuracy {correct}/{} = {:.1}%",
            if use_memory { "enabled" } else { "disabled" },
            samples.len(),
            100.0 * correct as f64 / samples.len() as f64
        );
    }
    Ok(())
}
