//! Deterministic mock backends. Each is a pure function of its inputs and
//! a seed, so whole pipeline runs replay byte-for-byte.

use std::collections::BTreeSet;

use crate::adapters::{BackendError, Classifier, ImageInput, Summarizer, TextEmbedder, VisionDescriber};
use crate::domain::{Embedding, Label};
use crate::index::FeatureExtractor;
use crate::text::{
    join_terms, normalize_whitespace_lower, seeded_digest, short_hex, terms, unit_coordinates,
    unit_interval,
};

/// Additive logit boost given to a planted label.
pub const DEFAULT_PLANT_BOOST: f64 = 6.0;

/// Hash-derived logits per label, softmax-normalized. A planted label in the
/// image metadata gets `boost` added to its logit first.
pub fn mock_classify(image: &ImageInput, labels: &[Label], seed: u64, boost: f64) -> Vec<(Label, f64)> {
    let planted = image.meta.as_ref().and_then(|m| m.planted_label.as_ref());
    let logits: Vec<f64> = labels
        .iter()
        .map(|l| {
            let base = unit_interval(seeded_digest(
                seed,
                &[b"classify", &image.bytes, l.as_str().as_bytes()],
            ));
            if planted == Some(l) {
                base + boost
            } else {
                base
            }
        })
        .collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|x| (x - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    labels
        .iter()
        .cloned()
        .zip(exps.into_iter().map(|e| e / z))
        .collect()
}

/// Joins planted findings into a sentence, or names the blob by hash.
pub fn mock_describe(image: &ImageInput) -> String {
    match image.meta.as_ref() {
        Some(m) if !m.findings_terms.is_empty() => {
            format!("Observed findings: {}.", m.findings_terms.join(", "))
        }
        _ => format!(
            "Lesion image {} without annotated morphology.",
            short_hex(&image.bytes)
        ),
    }
}

/// Realizes `previous ⊕ findings` as the sorted, deduplicated term union
/// joined with `"; "`.
pub fn mock_summarize(previous: Option<&str>, findings: &[String]) -> String {
    let mut all: BTreeSet<String> = previous.map(terms).unwrap_or_default();
    for f in findings {
        all.extend(terms(f));
    }
    join_terms(&all)
}

/// Text embedding of the lowercased, whitespace-normalized input.
pub fn mock_embed_text(text: &str, dim: usize, seed: u64) -> Embedding {
    let norm = normalize_whitespace_lower(text);
    let digest = seeded_digest(seed, &[b"text-embedding", norm.as_bytes()]);
    Embedding::new(unit_coordinates(digest, dim)).expect("coordinates are finite")
}

#[derive(Debug, Clone, Copy, Default)]
pub struct MockDescriber;

impl VisionDescriber for MockDescriber {
    fn describe(&self, image: &ImageInput, _prompt: &str) -> Result<String, BackendError> {
        Ok(mock_describe(image))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct MockClassifier {
    pub seed: u64,
    pub boost: f64,
}

impl MockClassifier {
    pub fn new(seed: u64) -> Self {
        MockClassifier {
            seed,
            boost: DEFAULT_PLANT_BOOST,
        }
    }
}

impl Classifier for MockClassifier {
    fn classify(&self, image: &ImageInput, labels: &[Label]) -> Result<Vec<(Label, f64)>, BackendError> {
        Ok(mock_classify(image, labels, self.seed, self.boost))
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct MockSummarizer;

impl Summarizer for MockSummarizer {
    fn summarize(&self, previous: Option<&str>, findings: &[String]) -> Result<String, BackendError> {
        Ok(mock_summarize(previous, findings))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct MockTextEmbedder {
    pub dim: usize,
    pub seed: u64,
}

impl TextEmbedder for MockTextEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }
    fn embed_text(&self, text: &str) -> Result<Embedding, BackendError> {
        Ok(mock_embed_text(text, self.dim, self.seed))
    }
}

/// Convenience: the mock image encoder with the same seed convention.
pub fn mock_extractor(dim: usize, seed: u64) -> impl FeatureExtractor {
    crate::index::MockExtractor { dim, seed }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adapters::ImageMeta;

    fn labels() -> Vec<Label> {
        ["Psoriasis", "Tinea", "Eczema"].iter().map(|l| Label::new(*l)).collect()
    }

    #[test]
    fn planted_label_is_argmax() {
        let img = ImageInput::new(b"img-7".to_vec()).with_meta(ImageMeta {
            planted_label: Some("Tinea".into()),
            ..Default::default()
        });
        let d = mock_classify(&img, &labels(), 3, DEFAULT_PLANT_BOOST);
        let best = d.iter().max_by(|a, b| a.1.total_cmp(&b.1)).unwrap();
        assert_eq!(best.0.as_str(), "Tinea");
    }

    #[test]
    fn classify_is_deterministic_and_normalized() {
        for i in 0..100u32 {
            let img = ImageInput::new(format!("blob-{i}").into_bytes());
            let a = mock_classify(&img, &labels(), 11, DEFAULT_PLANT_BOOST);
            assert_eq!(a, mock_classify(&img, &labels(), 11, DEFAULT_PLANT_BOOST));
            let s: f64 = a.iter().map(|(_, p)| p).sum();
            assert!((s - 1.0).abs() < 1e-9, "sum {s}");
        }
    }

    #[test]
    fn describe_uses_findings_terms() {
        let img = ImageInput::new(vec![1]).with_meta(ImageMeta {
            findings_terms: vec!["annular".into(), "scaly".into()],
            ..Default::default()
        });
        let t = mock_describe(&img);
        assert!(t.contains("annular") && t.contains("scaly"));
    }

    #[test]
    fn describe_template_is_stable_and_distinct() {
        let texts: BTreeSet<String> = (0..10u8)
            .map(|i| mock_describe(&ImageInput::new(vec![i; 3])))
            .collect();
        assert_eq!(texts.len(), 10);
        assert_eq!(
            mock_describe(&ImageInput::new(vec![0; 3])),
            mock_describe(&ImageInput::new(vec![0; 3]))
        );
    }

    #[test]
    fn summarize_is_sorted_union() {
        let g = mock_summarize(Some("b; a"), &["C a".into(), "d.".into()]);
        assert_eq!(g, "a; b; c; d");
        assert_eq!(mock_summarize(None, &[]), "");
    }

    #[test]
    fn text_embedding_ignores_case_and_spacing() {
        assert_eq!(
            mock_embed_text("Plaque  Psoriasis", 8, 1),
            mock_embed_text("plaque psoriasis", 8, 1)
        );
    }
}
