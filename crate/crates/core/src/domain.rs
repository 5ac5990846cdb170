//! Shared domain types: labels, embeddings, memory triplets, guideline
//! versions, candidate lists, evidence bundles and diagnostic reports.
//!
//! Everything here is an immutable value once constructed. Validation is
//! expressed as pure predicates so that stores and services can check
//! invariants without touching external state.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DomainError {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("embedding is empty")]
    EmptyEmbedding,
    #[error("embedding contains a non-finite value")]
    NonFiniteEmbedding,
    #[error("embedding is the zero vector")]
    ZeroVector,
    #[error("key findings are empty")]
    EmptyFindings,
    #[error("diagnosis label is empty")]
    EmptyDiagnosis,
    #[error("case id is empty")]
    EmptyId,
}

/// Disease-category label. Case-sensitive, stored in Unicode NFC.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(from = "String", into = "String")]
pub struct Label(String);

impl Label {
    pub fn new(raw: impl AsRef<str>) -> Self {
        Label(raw.as_ref().nfc().collect())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn is_empty(&self) -> bool {
        self.0.trim().is_empty()
    }
}

impl From<String> for Label {
    fn from(s: String) -> Self {
        Label::new(s)
    }
}

impl From<&str> for Label {
    fn from(s: &str) -> Self {
        Label::new(s)
    }
}

impl From<Label> for String {
    fn from(l: Label) -> Self {
        l.0
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Unique identifier of a stored case.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CaseId(pub String);

impl CaseId {
    pub fn new(id: impl Into<String>) -> Self {
        CaseId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for CaseId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for CaseId {
    fn from(s: &str) -> Self {
        CaseId(s.to_string())
    }
}

/// A feature vector. Always non-empty and finite; zero vectors are
/// representable but rejected wherever cosine similarity is needed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Embedding(Vec<f64>);

impl Embedding {
    pub fn new(values: Vec<f64>) -> Result<Self, DomainError> {
        if values.is_empty() {
            return Err(DomainError::EmptyEmbedding);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(DomainError::NonFiniteEmbedding);
        }
        Ok(Embedding(values))
    }

    /// Builds an embedding without the finiteness check. Used only where the
    /// caller needs to hand a deliberately invalid value to a validator.
    #[doc(hidden)]
    pub fn new_unchecked(values: Vec<f64>) -> Self {
        Embedding(values)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|v| *v == 0.0)
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Checks the finiteness, non-zero and dimension invariants together.
    pub fn check_query(&self, expected_dim: usize) -> Result<(), DomainError> {
        if self.dim() != expected_dim {
            return Err(DomainError::DimensionMismatch {
                expected: expected_dim,
                actual: self.dim(),
            });
        }
        if !self.is_finite() {
            return Err(DomainError::NonFiniteEmbedding);
        }
        if self.is_zero() {
            return Err(DomainError::ZeroVector);
        }
        Ok(())
    }
}

impl TryFrom<Vec<f64>> for Embedding {
    type Error = DomainError;
    fn try_from(v: Vec<f64>) -> Result<Self, Self::Error> {
        Embedding::new(v)
    }
}

impl From<Embedding> for Vec<f64> {
    fn from(e: Embedding) -> Self {
        e.0
    }
}

/// One confirmed case: the ⟨embedding, key findings, diagnosis⟩ triplet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryEntry {
    pub id: CaseId,
    pub embedding: Embedding,
    pub key_findings: String,
    pub diagnosis: Label,
    /// Store-assigned insertion sequence number.
    #[serde(default)]
    pub created_at: u64,
}

impl MemoryEntry {
    pub fn new(
        id: impl Into<String>,
        embedding: Embedding,
        key_findings: impl Into<String>,
        diagnosis: impl Into<Label>,
    ) -> Self {
        MemoryEntry {
            id: CaseId(id.into()),
            embedding,
            key_findings: key_findings.into(),
            diagnosis: diagnosis.into(),
            created_at: 0,
        }
    }
}

/// Checks every [`MemoryEntry`] invariant that does not need store state.
pub fn validate_entry(entry: &MemoryEntry, expected_dim: usize) -> Result<(), DomainError> {
    if entry.id.0.trim().is_empty() {
        return Err(DomainError::EmptyId);
    }
    if entry.embedding.dim() != expected_dim {
        return Err(DomainError::DimensionMismatch {
            expected: expected_dim,
            actual: entry.embedding.dim(),
        });
    }
    if !entry.embedding.is_finite() {
        return Err(DomainError::NonFiniteEmbedding);
    }
    if entry.embedding.is_zero() {
        return Err(DomainError::ZeroVector);
    }
    if entry.key_findings.trim().is_empty() {
        return Err(DomainError::EmptyFindings);
    }
    if entry.diagnosis.is_empty() {
        return Err(DomainError::EmptyDiagnosis);
    }
    Ok(())
}

/// The closed label space of a store.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LabelRegistry(BTreeSet<Label>);

impl LabelRegistry {
    pub fn new<I, L>(labels: I) -> Self
    where
        I: IntoIterator<Item = L>,
        L: Into<Label>,
    {
        LabelRegistry(labels.into_iter().map(Into::into).collect())
    }

    pub fn contains(&self, label: &Label) -> bool {
        self.0.contains(label)
    }

    pub fn insert(&mut self, label: Label) -> bool {
        self.0.insert(label)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Label> {
        self.0.iter()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// One iteration of a category's diagnostic guideline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuidelineVersion {
    pub category: Label,
    pub version: u32,
    pub text: String,
    pub source_case_ids: Vec<CaseId>,
    pub refinement_delta: f64,
    pub created_at: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateDiagnosis {
    pub label: Label,
    pub confidence: f64,
}

/// Candidate ordering: confidence descending, then label ascending.
pub fn candidate_order(a: &CandidateDiagnosis, b: &CandidateDiagnosis) -> Ordering {
    b.confidence
        .total_cmp(&a.confidence)
        .then_with(|| a.label.cmp(&b.label))
}

pub fn sort_candidates(cands: &mut [CandidateDiagnosis]) {
    cands.sort_by(candidate_order);
}

/// Maximum candidate list length.
pub const TOP_CANDIDATES: usize = 5;

/// A retrieved knowledge-base chunk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeSnippet {
    pub chunk_id: String,
    pub source_doc: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

/// A textbook prior for one candidate, or an explicit absence marker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PriorSlot {
    Found(KnowledgeSnippet),
    Absent,
}

impl PriorSlot {
    pub fn text(&self) -> Option<&str> {
        match self {
            PriorSlot::Found(s) => Some(&s.text),
            PriorSlot::Absent => None,
        }
    }
}

/// Review input: visual findings, candidate set and per-candidate priors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceBundle {
    pub visual_findings: String,
    pub candidates: Vec<CandidateDiagnosis>,
    pub textbook_priors: BTreeMap<Label, PriorSlot>,
}

/// The five review stages, in protocol order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum StageName {
    #[serde(rename = "Visual Feature Validation")]
    VisualFeatureValidation,
    #[serde(rename = "Canonical Guidelines Cross-Check")]
    CanonicalGuidelinesCrossCheck,
    #[serde(rename = "Empirical Evidence Alignment")]
    EmpiricalEvidenceAlignment,
    #[serde(rename = "Conflict Resolution & Systematic Synthesis")]
    ConflictResolution,
    #[serde(rename = "Final Diagnostic Determination")]
    FinalDetermination,
}

impl StageName {
    pub const ALL: [StageName; 5] = [
        StageName::VisualFeatureValidation,
        StageName::CanonicalGuidelinesCrossCheck,
        StageName::EmpiricalEvidenceAlignment,
        StageName::ConflictResolution,
        StageName::FinalDetermination,
    ];

    pub fn index(self) -> u8 {
        match self {
            StageName::VisualFeatureValidation => 1,
            StageName::CanonicalGuidelinesCrossCheck => 2,
            StageName::EmpiricalEvidenceAlignment => 3,
            StageName::ConflictResolution => 4,
            StageName::FinalDetermination => 5,
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            StageName::VisualFeatureValidation => "Visual Feature Validation",
            StageName::CanonicalGuidelinesCrossCheck => "Canonical Guidelines Cross-Check",
            StageName::EmpiricalEvidenceAlignment => "Empirical Evidence Alignment",
            StageName::ConflictResolution => "Conflict Resolution & Systematic Synthesis",
            StageName::FinalDetermination => "Final Diagnostic Determination",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage_index: u8,
    pub stage_name: StageName,
    pub inputs_digest: String,
    pub decision: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_candidate_scores: Option<BTreeMap<Label, f64>>,
}

impl StageRecord {
    pub fn is_consistent(&self) -> bool {
        self.stage_name.index() == self.stage_index
    }
}

/// True when `records` holds exactly the five stages in protocol order.
pub fn stage_trace_complete(records: &[StageRecord]) -> bool {
    records.len() == 5
        && records
            .iter()
            .zip(StageName::ALL)
            .all(|(r, s)| r.stage_name == s && r.is_consistent())
}

/// One historical case as cited in a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievedCase {
    pub case_id: CaseId,
    pub score: f64,
    pub diagnosis: Label,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuidelineRef {
    pub category: Label,
    pub version: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticReport {
    pub final_diagnosis: Label,
    pub raw_findings: String,
    pub validated_findings: String,
    pub candidates: Vec<CandidateDiagnosis>,
    pub retrieved_cases: Vec<RetrievedCase>,
    pub guidelines_used: Vec<GuidelineRef>,
    pub stage_trace: Vec<StageRecord>,
}

impl DiagnosticReport {
    /// Checks the report-level invariants.
    pub fn is_well_formed(&self) -> bool {
        self.candidates.iter().any(|c| c.label == self.final_diagnosis)
            && stage_trace_complete(&self.stage_trace)
            && self
                .retrieved_cases
                .windows(2)
                .all(|w| w[0].score >= w[1].score)
    }
}
