//! One image through the full pipeline with mock backends.
//!
//! ```sh
//! cargo run -p evoderm --example diagnose -- psoriasis-01
//! ```

use evoderm::corpus::PlantedCorpus;
use evoderm::orchestrator::ReportDocument;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let corpus = PlantedCorpus::bundled();
    let wanted = std::env::args().nth(1).unwrap_or_else(|| "psoriasis-01".into());
    let sample = corpus
        .samples()
        .into_iter()
        .find(|s| s.sample_id == wanted)
        .ok_or_else(|| format!("no sample {wanted}"))?;

    let rt = corpus.runtime(corpus.config(), true)?;
    let d = rt.diagnose(&corpus.load_image(&sample)?)?;

    println!("gold {}, classifier steered toward {}", sample.gold, sample.planted);
    for c in &d.report.candidates {
        println!("  candidate {:<16} {:.4}", c.label.as_str(), c.confidence);
    }
    for s in &d.report.stage_trace {
        println!("  stage {} {:<40} {}", s.stage_index, s.stage_name.title(), s.decision);
    }
    println!("final diagnosis: {}", d.report.final_diagnosis);
    if std::env::var_os("EVODERM_PRINT_REPORT").is_some() {
        print!("{}", ReportDocument::new(&d).to_json());
    }
    Ok(())
}
