//! The diagnosis pipeline: embed, describe, pre-diagnose, gather textbook
//! priors, evolved guidelines and similar cases, then review.

mod pipeline;
pub mod review;

pub use pipeline::{
    build_evidence, case_id_for, confirm_case, diagnose, Diagnosis, EvidenceError, PipelineConfig,
    PipelineError, PipelineTrace, Ports, ReportDocument, StepError, TraceStep, REPORT_SCHEMA,
    STEP_ORDER,
};
pub use review::{guideline_match, history_vote, mock_review, MockReviewer, ReviewWeights};
