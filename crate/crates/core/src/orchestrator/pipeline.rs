use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adapters::{
    classify_top5, BackendError, Classifier, ImageInput, Reviewer, Summarizer, VisionDescriber,
    MORPHOLOGY_PROMPT,
};
use crate::domain::{
    CandidateDiagnosis, CaseId, DiagnosticReport, Embedding, EvidenceBundle, GuidelineRef,
    GuidelineVersion, Label, MemoryEntry, PriorSlot, RetrievedCase, StageRecord,
};
use crate::index::{CaseHit, FeatureExtractor};
use crate::knowledge::{KbError, KnowledgeBase};
use crate::memory::{AddOutcome, MemoryError, MemoryGraph, MemoryStore};
use crate::text::short_hex;

pub const REPORT_SCHEMA: &str = "evoderm.report/v1";

#[derive(Debug, Error)]
pub enum StepError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error(transparent)]
    Knowledge(#[from] KbError),
    #[error(transparent)]
    Evidence(#[from] EvidenceError),
    #[error("embedding dimension {actual} does not match memory dimension {expected}")]
    Dimension { expected: usize, actual: usize },
    #[error("reviewer chose {0}, which is not a candidate")]
    NotACandidate(Label),
}

/// A pipeline failure tagged with the step that raised it.
#[derive(Debug, Error)]
#[error("step {step} failed: {source}")]
pub struct PipelineError {
    pub step: String,
    #[source]
    pub source: StepError,
}

impl PipelineError {
    pub fn is_backend(&self) -> bool {
        matches!(
            self.source,
            StepError::Backend(_)
                | StepError::Memory(MemoryError::Backend(_))
                | StepError::Knowledge(KbError::Backend(_))
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvidenceError {
    #[error("textbook priors do not match candidates (missing {missing:?}, unexpected {unexpected:?})")]
    PriorKeyMismatch {
        missing: Vec<Label>,
        unexpected: Vec<Label>,
    },
}

/// Assembles the review input, requiring exactly one prior per candidate.
pub fn build_evidence(
    p_vis: &str,
    d_pre: &[CandidateDiagnosis],
    priors: BTreeMap<Label, PriorSlot>,
) -> Result<EvidenceBundle, EvidenceError> {
    let want: BTreeSet<&Label> = d_pre.iter().map(|c| &c.label).collect();
    let have: BTreeSet<&Label> = priors.keys().collect();
    if want != have {
        return Err(EvidenceError::PriorKeyMismatch {
            missing: want.difference(&have).map(|l| (*l).clone()).collect(),
            unexpected: have.difference(&want).map(|l| (*l).clone()).collect(),
        });
    }
    Ok(EvidenceBundle {
        visual_findings: p_vis.to_string(),
        candidates: d_pre.to_vec(),
        textbook_priors: priors,
    })
}

/// Every model role the pipeline calls.
#[derive(Clone)]
pub struct Ports {
    pub extractor: Arc<dyn FeatureExtractor>,
    pub describer: Arc<dyn VisionDescriber>,
    pub classifier: Arc<dyn Classifier>,
    pub reviewer: Arc<dyn Reviewer>,
    pub summarizer: Arc<dyn Summarizer>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub label_space: Vec<Label>,
    /// Historical cases retrieved per query.
    pub history_k: usize,
    /// Textbook chunks retrieved per candidate; only the best one is used.
    pub prior_k: usize,
    /// Disables guideline lookup and case retrieval (ablation).
    pub use_memory: bool,
    /// Records wall-clock step durations. Off by default because timings
    /// make otherwise identical traces differ.
    pub record_timings: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            label_space: Vec::new(),
            history_k: 5,
            prior_k: 1,
            use_memory: true,
            record_timings: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub step_name: String,
    pub inputs_digest: String,
    pub outputs_digest: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration_us: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PipelineTrace {
    pub steps: Vec<TraceStep>,
    pub stage_records: Vec<StageRecord>,
}

/// Step names in execution order; `retrieve_prior` repeats per candidate.
pub const STEP_ORDER: [&str; 9] = [
    "embed",
    "describe",
    "pre_diag",
    "retrieve_prior",
    "guideline_union",
    "memory_query",
    "evidence_build",
    "review",
    "report",
];

impl PipelineTrace {
    /// One step per executed line, in order, with one prior retrieval per
    /// candidate, and five stage records.
    pub fn is_complete(&self, n_candidates: usize) -> bool {
        let mut expected: Vec<String> = STEP_ORDER[..3].iter().map(|s| s.to_string()).collect();
        expected.extend((0..n_candidates).map(|_| STEP_ORDER[3].to_string()));
        expected.extend(STEP_ORDER[4..].iter().map(|s| s.to_string()));
        let names: Vec<String> = self
            .steps
            .iter()
            .map(|s| s.step_name.split(':').next().unwrap_or_default().to_string())
            .collect();
        names == expected && crate::domain::stage_trace_complete(&self.stage_records)
    }
}

/// Output of one diagnosis run.
#[derive(Debug, Clone, PartialEq)]
pub struct Diagnosis {
    pub report: DiagnosticReport,
    pub trace: PipelineTrace,
    pub embedding: Embedding,
}

fn digest<T: Serialize + ?Sized>(v: &T) -> String {
    short_hex(serde_json::to_string(v).expect("serializable").as_bytes())
}

struct Tracer {
    steps: Vec<TraceStep>,
    timings: bool,
}

impl Tracer {
    fn run<T: Serialize, I: Serialize + ?Sized>(
        &mut self,
        name: impl Into<String>,
        inputs: &I,
        f: impl FnOnce() -> Result<T, StepError>,
    ) -> Result<T, PipelineError> {
        let name = name.into();
        let start = Instant::now();
        let out = f().map_err(|source| PipelineError {
            step: name.clone(),
            source,
        })?;
        self.steps.push(TraceStep {
            step_name: name,
            inputs_digest: digest(inputs),
            outputs_digest: digest(&out),
            duration_us: self.timings.then(|| start.elapsed().as_micros() as u64),
        });
        Ok(out)
    }
}

/// Runs the full inference pipeline for one image.
///
/// Missing guidelines, an empty knowledge base or an empty memory are not
/// errors: the affected evidence slots carry explicit absence markers.
pub fn diagnose(
    image: &ImageInput,
    ports: &Ports,
    memory: &MemoryGraph,
    kb: &KnowledgeBase,
    config: &PipelineConfig,
) -> Result<Diagnosis, PipelineError> {
    let mut t = Tracer {
        steps: Vec::new(),
        timings: config.record_timings,
    };
    let image_digest = short_hex(&image.bytes);

    let z = t.run("embed", &image_digest, || {
        let z = match &image.embedding {
            Some(e) => e.clone(),
            None => ports.extractor.extract(&image.bytes),
        };
        if z.dim() != memory.config().dim {
            return Err(StepError::Dimension {
                expected: memory.config().dim,
                actual: z.dim(),
            });
        }
        Ok(z)
    })?;

    let p_vis = t.run("describe", &image_digest, || {
        Ok(ports.describer.describe(image, MORPHOLOGY_PROMPT)?)
    })?;

    let d_pre = t.run("pre_diag", &config.label_space, || {
        Ok(classify_top5(ports.classifier.as_ref(), image, &config.label_space)?)
    })?;

    let mut priors = BTreeMap::new();
    for c in &d_pre {
        let slot = t.run(format!("retrieve_prior:{}", c.label), &c.label, || {
            let hits = kb.retrieve_prior(c.label.as_str(), config.prior_k.max(1))?;
            Ok(hits.into_iter().next().map_or(PriorSlot::Absent, PriorSlot::Found))
        })?;
        priors.insert(c.label.clone(), slot);
    }

    let g_evo: Vec<GuidelineVersion> = t.run("guideline_union", &d_pre, || {
        if !config.use_memory {
            return Ok(Vec::new());
        }
        Ok(d_pre
            .iter()
            .filter_map(|c| memory.latest_guideline(&c.label).cloned())
            .collect())
    })?;

    let k_hist: Vec<CaseHit> = t.run("memory_query", &z, || {
        if !config.use_memory {
            return Ok(Vec::new());
        }
        Ok(memory.query_similar(&z, config.history_k.max(1))?)
    })?;

    let bundle = t.run("evidence_build", &(&p_vis, &d_pre), || {
        Ok(build_evidence(&p_vis, &d_pre, priors)?)
    })?;

    let outcome = t.run("review", &(&bundle, &k_hist, &g_evo), || {
        let o = ports.reviewer.review(&bundle, &k_hist, &g_evo)?;
        if !d_pre.iter().any(|c| c.label == o.final_diagnosis) {
            return Err(StepError::NotACandidate(o.final_diagnosis));
        }
        Ok(o)
    })?;

    let report = t.run("report", &outcome.final_diagnosis, || {
        Ok(DiagnosticReport {
            final_diagnosis: outcome.final_diagnosis.clone(),
            raw_findings: p_vis.clone(),
            validated_findings: outcome.validated_findings.clone(),
            candidates: d_pre.clone(),
            retrieved_cases: k_hist
                .iter()
                .map(|h| RetrievedCase {
                    case_id: h.case_id.clone(),
                    score: h.score,
                    diagnosis: h.diagnosis.clone(),
                })
                .collect(),
            guidelines_used: g_evo
                .iter()
                .map(|g| GuidelineRef {
                    category: g.category.clone(),
                    version: g.version,
                })
                .collect(),
            stage_trace: outcome.stages.clone(),
        })
    })?;

    Ok(Diagnosis {
        trace: PipelineTrace {
            steps: t.steps,
            stage_records: outcome.stages,
        },
        report,
        embedding: z,
    })
}

/// The versioned JSON report document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDocument {
    pub schema: String,
    #[serde(flatten)]
    pub report: DiagnosticReport,
    pub pipeline_trace: Vec<TraceStep>,
}

impl ReportDocument {
    pub fn new(d: &Diagnosis) -> Self {
        ReportDocument {
            schema: REPORT_SCHEMA.to_string(),
            report: d.report.clone(),
            pipeline_trace: d.trace.steps.clone(),
        }
    }

    /// Pretty-printed JSON with a trailing newline.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("serializable");
        s.push('\n');
        s
    }
}

/// Case id used when a diagnosed image is written back to memory.
pub fn case_id_for(image: &ImageInput) -> CaseId {
    CaseId(format!("case-{}", short_hex(&image.bytes)))
}

/// Stores a diagnosed image as a confirmed case under its final diagnosis.
pub fn confirm_case(
    store: &MemoryStore,
    id: CaseId,
    diagnosis: &Diagnosis,
    summarizer: &dyn Summarizer,
) -> Result<AddOutcome, MemoryError> {
    let findings = if diagnosis.report.validated_findings.trim().is_empty() {
        diagnosis.report.raw_findings.clone()
    } else {
        diagnosis.report.validated_findings.clone()
    };
    let entry = MemoryEntry {
        id,
        embedding: diagnosis.embedding.clone(),
        key_findings: findings,
        diagnosis: diagnosis.report.final_diagnosis.clone(),
        created_at: 0,
    };
    store.add_case(entry, summarizer)
}
