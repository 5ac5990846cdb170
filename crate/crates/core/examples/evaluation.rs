//! Metrics, bootstrap intervals and a paired t-test for two systems.

use evoderm::eval::{correctness, evaluate, paired_ttest, BootstrapSpec, LabeledPrediction};
use evoderm::domain::Label;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let labels: Vec<Label> = ["Eczema", "Psoriasis", "Tinea Corporis"].iter().map(Label::new).collect();
    let mut a = Vec::new();
    let mut b = Vec::new();
    for i in 0..90 {
        let gold = labels[i % 3].clone();
        let wrong = labels[(i + 1) % 3].clone();
        let pa = if i % 10 == 0 { wrong.clone() } else { gold.clone() };
        let pb = if i % 4 == 0 { wrong } else { gold.clone() };
        a.push(LabeledPrediction::new(format!("s{i}"), gold.clone(), pa));
        b.push(LabeledPrediction::new(format!("s{i}"), gold, pb));
    }

    let spec = BootstrapSpec {
        resamples: 1000,
        seed: 42,
        level: 0.95,
    };
    let mut report = evaluate(&a, &labels, Some(spec))?;
    report.comparison = Some(paired_ttest(&correctness(&a), &correctness(&b))?);
    print!("{}", report.to_table());
    Ok(())
}
