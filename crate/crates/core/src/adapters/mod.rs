//! Ports for every model role, plus the two backend families that
//! implement them: deterministic mocks and an OpenAI-compatible HTTP client.

pub mod http;
pub mod mock;

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{
    sort_candidates, CandidateDiagnosis, Embedding, EvidenceBundle, GuidelineVersion, Label,
    StageRecord, TOP_CANDIDATES,
};
use crate::index::CaseHit;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BackendError {
    #[error("backend failure after {attempts} attempt(s){}: {message}", status.map(|s| format!(" (status {s})")).unwrap_or_default())]
    Failure {
        status: Option<u16>,
        attempts: u32,
        message: String,
    },
    #[error("backend timed out after {attempts} attempt(s)")]
    Timeout { attempts: u32 },
    #[error("auth token variable {var} is not set")]
    AuthMissing { var: String },
    #[error("invalid probability distribution: {0}")]
    DistributionInvalid(String),
    #[error("unusable backend response: {0}")]
    InvalidResponse(String),
    #[error("empty label space")]
    EmptyLabelSpace,
}

/// Generation and transport settings for one model role.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendProfile {
    pub endpoint_url: String,
    pub model_name: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub timeout_ms: u64,
    pub max_retries: u32,
    /// Name of the environment variable holding the bearer token, if any.
    pub auth_token_env_var: Option<String>,
    /// Upper bound on concurrent in-flight requests through one client.
    pub max_in_flight: usize,
}

impl Default for BackendProfile {
    fn default() -> Self {
        BackendProfile {
            endpoint_url: "http://127.0.0.1:8000".into(),
            model_name: "default".into(),
            temperature: 0.3,
            max_tokens: 4096,
            timeout_ms: 60_000,
            max_retries: 3,
            auth_token_env_var: None,
            max_in_flight: 4,
        }
    }
}

impl BackendProfile {
    pub fn validate(&self) -> Result<(), String> {
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(format!("temperature must be >= 0, got {}", self.temperature));
        }
        if self.max_tokens < 1 {
            return Err("max_tokens must be >= 1".into());
        }
        if self.timeout_ms < 1 {
            return Err("timeout_ms must be >= 1".into());
        }
        if self.max_in_flight < 1 {
            return Err("max_in_flight must be >= 1".into());
        }
        Ok(())
    }
}

/// Test-corpus metadata carried next to an image as `<image>.meta.json`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ImageMeta {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub planted_label: Option<Label>,
    pub findings_terms: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gold_label: Option<Label>,
}

impl ImageMeta {
    /// Path of the sidecar for `image`.
    pub fn sidecar_path(image: &Path) -> std::path::PathBuf {
        let mut name = image.as_os_str().to_owned();
        name.push(".meta.json");
        name.into()
    }

    /// Reads the sidecar next to `image`, `Ok(None)` when there is none.
    pub fn load_for(image: &Path) -> std::io::Result<Option<ImageMeta>> {
        let p = Self::sidecar_path(image);
        match std::fs::read(&p) {
            Ok(bytes) => serde_json::from_slice(&bytes)
                .map(Some)
                .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e),
        }
    }
}

/// An image as it enters the pipeline: opaque bytes plus optional metadata
/// and an optional precomputed embedding.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ImageInput {
    pub bytes: Vec<u8>,
    pub meta: Option<ImageMeta>,
    pub embedding: Option<Embedding>,
}

impl ImageInput {
    pub fn new(bytes: impl Into<Vec<u8>>) -> Self {
        ImageInput {
            bytes: bytes.into(),
            ..Default::default()
        }
    }

    pub fn with_meta(mut self, meta: ImageMeta) -> Self {
        self.meta = Some(meta);
        self
    }

    /// Reads the image and its `.meta.json` sidecar if present.
    pub fn from_path(path: &Path) -> std::io::Result<Self> {
        Ok(ImageInput {
            bytes: std::fs::read(path)?,
            meta: ImageMeta::load_for(path)?,
            embedding: None,
        })
    }
}

/// Morphology prompt handed to the vision role.
pub const MORPHOLOGY_PROMPT: &str = "Describe only the objective morphology of the skin lesion in \
this image: primary and secondary lesion types, colour and pigmentation pattern, distribution, \
border and surface characteristics. Do not propose a diagnosis.";

pub trait VisionDescriber: Send + Sync {
    fn describe(&self, image: &ImageInput, prompt: &str) -> Result<String, BackendError>;
}

/// Returns a full probability distribution over `labels`.
pub trait Classifier: Send + Sync {
    fn classify(&self, image: &ImageInput, labels: &[Label])
        -> Result<Vec<(Label, f64)>, BackendError>;
}

/// Result of the five-stage review.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewOutcome {
    pub final_diagnosis: Label,
    pub validated_findings: String,
    pub stages: Vec<StageRecord>,
}

pub trait Reviewer: Send + Sync {
    fn review(
        &self,
        bundle: &EvidenceBundle,
        history: &[CaseHit],
        guidelines: &[GuidelineVersion],
    ) -> Result<ReviewOutcome, BackendError>;
}

/// Guideline synthesis. `previous` is the current guideline text when
/// evolving, `None` for the initial synthesis.
pub trait Summarizer: Send + Sync {
    fn summarize(&self, previous: Option<&str>, findings: &[String])
        -> Result<String, BackendError>;
}

pub trait TextEmbedder: Send + Sync {
    fn dim(&self) -> usize;
    fn embed_text(&self, text: &str) -> Result<Embedding, BackendError>;
}

const DISTRIBUTION_TOLERANCE: f64 = 1e-9;

/// Validates a classifier distribution against the label space.
pub fn check_distribution(dist: &[(Label, f64)], labels: &[Label]) -> Result<(), BackendError> {
    let mut seen = std::collections::BTreeSet::new();
    for (l, p) in dist {
        if !labels.contains(l) {
            return Err(BackendError::DistributionInvalid(format!(
                "label {l} outside the label space"
            )));
        }
        if !seen.insert(l) {
            return Err(BackendError::DistributionInvalid(format!("duplicate label {l}")));
        }
        if !p.is_finite() || *p < 0.0 || *p > 1.0 {
            return Err(BackendError::DistributionInvalid(format!(
                "probability {p} for {l} outside [0, 1]"
            )));
        }
    }
    let sum: f64 = dist.iter().map(|(_, p)| p).sum();
    if (sum - 1.0).abs() > DISTRIBUTION_TOLERANCE {
        return Err(BackendError::DistributionInvalid(format!(
            "probabilities sum to {sum}"
        )));
    }
    Ok(())
}

/// Top `min(5, |labels|)` candidates of the classifier's distribution.
pub fn classify_top5(
    classifier: &dyn Classifier,
    image: &ImageInput,
    label_space: &[Label],
) -> Result<Vec<CandidateDiagnosis>, BackendError> {
    if label_space.is_empty() {
        return Err(BackendError::EmptyLabelSpace);
    }
    let dist = classifier.classify(image, label_space)?;
    check_distribution(&dist, label_space)?;
    let mut cands: Vec<CandidateDiagnosis> = dist
        .into_iter()
        .map(|(label, confidence)| CandidateDiagnosis { label, confidence })
        .collect();
    // Labels the backend omitted carry zero mass but are still rankable.
    for l in label_space {
        if !cands.iter().any(|c| &c.label == l) {
            cands.push(CandidateDiagnosis {
                label: l.clone(),
                confidence: 0.0,
            });
        }
    }
    sort_candidates(&mut cands);
    cands.truncate(TOP_CANDIDATES.min(label_space.len()));
    Ok(cands)
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Fixed(Vec<(Label, f64)>);
    impl Classifier for Fixed {
        fn classify(&self, _: &ImageInput, _: &[Label]) -> Result<Vec<(Label, f64)>, BackendError> {
            Ok(self.0.clone())
        }
    }

    fn labels(n: usize) -> Vec<Label> {
        (0..n).map(|i| Label::new(format!("d{i}"))).collect()
    }

    #[test]
    fn small_label_space_is_clamped() {
        let ls = labels(3);
        let c = Fixed(vec![(ls[0].clone(), 0.2), (ls[1].clone(), 0.5), (ls[2].clone(), 0.3)]);
        let top = classify_top5(&c, &ImageInput::new(vec![]), &ls).unwrap();
        let got: Vec<_> = top.iter().map(|c| c.label.as_str()).collect();
        assert_eq!(got, vec!["d1", "d2", "d0"]);
    }

    #[test]
    fn uniform_over_seven_is_lexicographic() {
        let ls = labels(7);
        let c = Fixed(ls.iter().rev().map(|l| (l.clone(), 1.0 / 7.0)).collect());
        let top = classify_top5(&c, &ImageInput::new(vec![]), &ls).unwrap();
        assert_eq!(top.len(), 5);
        let got: Vec<_> = top.iter().map(|c| c.label.as_str()).collect();
        assert_eq!(got, vec!["d0", "d1", "d2", "d3", "d4"]);
        assert!(top.iter().all(|c| c.confidence == 1.0 / 7.0));
    }

    #[test]
    fn short_mass_rejected() {
        let ls = labels(2);
        let c = Fixed(vec![(ls[0].clone(), 0.5), (ls[1].clone(), 0.3)]);
        assert!(matches!(
            classify_top5(&c, &ImageInput::new(vec![]), &ls),
            Err(BackendError::DistributionInvalid(_))
        ));
    }

    #[test]
    fn foreign_label_rejected() {
        let ls = labels(2);
        let c = Fixed(vec![(ls[0].clone(), 0.5), ("other".into(), 0.5)]);
        assert!(matches!(
            classify_top5(&c, &ImageInput::new(vec![]), &ls),
            Err(BackendError::DistributionInvalid(_))
        ));
    }

    #[test]
    fn empty_label_space() {
        let c = Fixed(vec![]);
        assert_eq!(
            classify_top5(&c, &ImageInput::new(vec![]), &[]),
            Err(BackendError::EmptyLabelSpace)
        );
    }

    #[test]
    fn profile_defaults_match_generation_settings() {
        let p = BackendProfile::default();
        assert_eq!(p.temperature, 0.3);
        assert_eq!(p.max_tokens, 4096);
        assert!(p.validate().is_ok());
        let bad = BackendProfile {
            temperature: -0.1,
            ..p
        };
        assert!(bad.validate().is_err());
    }
}
