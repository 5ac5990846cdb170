//! Sub-label remapping followed by a stratified split.

use evoderm::eval::{remap_labels, split, Manifest, ManifestRecord, RemapRule};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let subs = [
        ("contact-dermatitis-allergic", 7),
        ("contact-dermatitis-irritant", 5),
        ("atopic-dermatitis", 6),
        ("tinea-corporis", 4),
        ("tinea-pedis", 3),
        ("unclear", 5),
    ];
    let mut records = Vec::new();
    for (sub, n) in subs {
        for i in 0..n {
            records.push(ManifestRecord::new(format!("{sub}-{i}"), format!("img/{sub}-{i}.jpg"), "raw").with_sub_label(sub));
        }
    }
    let rules = [
        RemapRule::substring("contact-dermatitis", "Contact Dermatitis"),
        RemapRule::exact("atopic-dermatitis", "Atopic Dermatitis"),
        RemapRule::substring("tinea", "Tinea"),
    ];
    let out = remap_labels(&Manifest::new(records), &rules, true);
    for (label, n) in &out.counts {
        println!("{label}: {n}");
    }
    println!("dropped: {}", out.dropped);

    let (train, test) = split(&out.manifest, 1.0 / 3.0, 7, true)?;
    println!("\ntrain {} / test {}", train.len(), test.len());
    for (label, n) in train.class_counts() {
        println!("  train {label}: {n}");
    }
    Ok(())
}
