//! Deterministic realization of the five-stage review protocol.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::adapters::{BackendError, ReviewOutcome, Reviewer};
use crate::domain::{EvidenceBundle, GuidelineVersion, Label, StageName, StageRecord};
use crate::index::CaseHit;
use crate::text::{join_terms, short_hex, terms};

/// Weights of the Stage-5 synthesis score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReviewWeights {
    pub w_conf: f64,
    pub w_guideline: f64,
    pub w_history: f64,
}

impl Default for ReviewWeights {
    fn default() -> Self {
        ReviewWeights {
            w_conf: 0.5,
            w_guideline: 0.3,
            w_history: 0.2,
        }
    }
}

impl ReviewWeights {
    pub fn new(w_conf: f64, w_guideline: f64, w_history: f64) -> Result<Self, String> {
        let w = ReviewWeights {
            w_conf,
            w_guideline,
            w_history,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<(), String> {
        let ws = [self.w_conf, self.w_guideline, self.w_history];
        if ws.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(format!("review weights must be finite and >= 0: {ws:?}"));
        }
        let sum: f64 = ws.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(format!("review weights must sum to 1, got {sum}"));
        }
        Ok(())
    }
}

/// Index of the first maximum, so ties resolve to candidate order.
fn first_argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in xs.iter().enumerate() {
        if *x > xs[best] {
            best = i;
        }
    }
    best
}

/// Guideline-plus-prior term overlap per candidate, in `[0, 1]`.
pub fn guideline_match(
    findings: &BTreeSet<String>,
    guideline: Option<&str>,
    prior: Option<&str>,
) -> f64 {
    let mut reference = guideline.map(terms).unwrap_or_default();
    reference.extend(prior.map(terms).unwrap_or_default());
    if reference.is_empty() {
        return 0.0;
    }
    findings.intersection(&reference).count() as f64 / reference.len() as f64
}

/// Similarity-weighted share of history voting for `label`. Negative
/// similarities carry no weight.
pub fn history_vote(history: &[CaseHit], label: &Label) -> f64 {
    let total: f64 = history.iter().map(|h| h.score.max(0.0)).sum();
    if total <= 0.0 {
        return 0.0;
    }
    history
        .iter()
        .filter(|h| &h.diagnosis == label)
        .map(|h| h.score.max(0.0))
        .sum::<f64>()
        / total
}

fn scores_map(labels: &[Label], xs: &[f64]) -> BTreeMap<Label, f64> {
    labels.iter().cloned().zip(xs.iter().copied()).collect()
}

/// Runs the five stages over the evidence and returns the final choice
/// together with one record per stage.
pub fn mock_review(
    bundle: &EvidenceBundle,
    history: &[CaseHit],
    guidelines: &[GuidelineVersion],
    weights: &ReviewWeights,
) -> ReviewOutcome {
    let labels: Vec<Label> = bundle.candidates.iter().map(|c| c.label.clone()).collect();
    assert!(!labels.is_empty(), "review needs at least one candidate");

    // Stage 1
    let findings = terms(&bundle.visual_findings);
    let validated = join_terms(&findings);
    let s1 = StageRecord {
        stage_index: 1,
        stage_name: StageName::VisualFeatureValidation,
        inputs_digest: short_hex(bundle.visual_findings.as_bytes()),
        decision: if findings.is_empty() {
            "empty findings flagged; no morphological descriptors to validate".into()
        } else {
            format!("{} morphological terms validated", findings.len())
        },
        per_candidate_scores: None,
    };

    // Stage 2
    let latest: BTreeMap<&Label, &GuidelineVersion> =
        guidelines.iter().fold(BTreeMap::new(), |mut m, g| {
            let slot = m.entry(&g.category).or_insert(g);
            if g.version > slot.version {
                *slot = g;
            }
            m
        });
    let g_match: Vec<f64> = labels
        .iter()
        .map(|l| {
            guideline_match(
                &findings,
                latest.get(l).map(|g| g.text.as_str()),
                bundle.textbook_priors.get(l).and_then(|p| p.text()),
            )
        })
        .collect();
    let s2_digest = short_hex(
        serde_json::to_string(&(&bundle.textbook_priors, &latest))
            .expect("serializable")
            .as_bytes(),
    );
    let s2 = StageRecord {
        stage_index: 2,
        stage_name: StageName::CanonicalGuidelinesCrossCheck,
        inputs_digest: s2_digest,
        decision: format!(
            "{} of {} candidates have guideline or textbook support",
            g_match.iter().filter(|m| **m > 0.0).count(),
            labels.len()
        ),
        per_candidate_scores: Some(scores_map(&labels, &g_match)),
    };

    // Stage 3
    let votes: Vec<f64> = labels.iter().map(|l| history_vote(history, l)).collect();
    let s3 = StageRecord {
        stage_index: 3,
        stage_name: StageName::EmpiricalEvidenceAlignment,
        inputs_digest: short_hex(serde_json::to_string(history).expect("serializable").as_bytes()),
        decision: if history.is_empty() {
            "no historical precedents available".into()
        } else {
            format!("{} historical cases aligned", history.len())
        },
        per_candidate_scores: Some(scores_map(&labels, &votes)),
    };

    // Stage 4
    let conf: Vec<f64> = bundle.candidates.iter().map(|c| c.confidence).collect();
    let stat_best = first_argmax(&conf);
    let guide_best = first_argmax(&g_match);
    let conflict = stat_best != guide_best && g_match[guide_best] > 0.0;
    let s4 = StageRecord {
        stage_index: 4,
        stage_name: StageName::ConflictResolution,
        inputs_digest: short_hex(format!("{conf:?}|{g_match:?}").as_bytes()),
        decision: if conflict {
            format!(
                "conflict: classifier favours {} but standards favour {}; guideline priority active",
                labels[stat_best], labels[guide_best]
            )
        } else {
            "no conflict between statistical prediction and standards".into()
        },
        per_candidate_scores: None,
    };

    // Stage 5
    let scores: Vec<f64> = (0..labels.len())
        .map(|i| {
            weights.w_conf * conf[i] + weights.w_guideline * g_match[i] + weights.w_history * votes[i]
        })
        .collect();
    let chosen = if conflict { guide_best } else { first_argmax(&scores) };
    let s5 = StageRecord {
        stage_index: 5,
        stage_name: StageName::FinalDetermination,
        inputs_digest: short_hex(format!("{scores:?}|{conflict}").as_bytes()),
        decision: if conflict {
            format!("{} selected by guideline priority", labels[chosen])
        } else {
            format!("{} selected by synthesis score", labels[chosen])
        },
        per_candidate_scores: Some(scores_map(&labels, &scores)),
    };

    ReviewOutcome {
        final_diagnosis: labels[chosen].clone(),
        validated_findings: validated,
        stages: vec![s1, s2, s3, s4, s5],
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct MockReviewer {
    pub weights: ReviewWeights,
}

impl Reviewer for MockReviewer {
    fn review(
        &self,
        bundle: &EvidenceBundle,
        history: &[CaseHit],
        guidelines: &[GuidelineVersion],
    ) -> Result<ReviewOutcome, BackendError> {
        Ok(mock_review(bundle, history, guidelines, &self.weights))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{stage_trace_complete, CandidateDiagnosis, CaseId, KnowledgeSnippet, PriorSlot};

    fn bundle(findings: &str, conf: &[(&str, f64)]) -> EvidenceBundle {
        EvidenceBundle {
            visual_findings: findings.into(),
            candidates: conf
                .iter()
                .map(|(l, p)| CandidateDiagnosis {
                    label: Label::new(*l),
                    confidence: *p,
                })
                .collect(),
            textbook_priors: conf.iter().map(|(l, _)| (Label::new(*l), PriorSlot::Absent)).collect(),
        }
    }

    fn guideline(cat: &str, text: &str) -> GuidelineVersion {
        GuidelineVersion {
            category: cat.into(),
            version: 0,
            text: text.into(),
            source_case_ids: vec![CaseId::from("x")],
            refinement_delta: 1.0,
            created_at: 0,
        }
    }

    const FIVE: [(&str, f64); 5] = [("a", 0.4), ("b", 0.3), ("c", 0.15), ("d", 0.1), ("e", 0.05)];

    #[test]
    fn no_evidence_reduces_to_classifier() {
        let out = mock_review(&bundle("red plaque", &FIVE), &[], &[], &ReviewWeights::default());
        assert_eq!(out.final_diagnosis.as_str(), "a");
        assert!(stage_trace_complete(&out.stages));
        assert!(out.stages[3].decision.starts_with("no conflict"));
    }

    #[test]
    fn guideline_priority_overrides_statistics() {
        let out = mock_review(
            &bundle("silvery scale", &FIVE),
            &[],
            &[guideline("b", "silvery scale")],
            &ReviewWeights::default(),
        );
        let g = out.stages[1].per_candidate_scores.as_ref().unwrap();
        assert_eq!(g[&Label::new("b")], 1.0);
        assert_eq!(g[&Label::new("a")], 0.0);
        assert!(out.stages[3].decision.starts_with("conflict"));
        assert_eq!(out.final_diagnosis.as_str(), "b");
    }

    #[test]
    fn empty_findings_flagged() {
        let out = mock_review(&bundle("", &FIVE), &[], &[], &ReviewWeights::default());
        assert!(out.stages[0].decision.contains("empty findings"));
        assert_eq!(out.validated_findings, "");
    }

    #[test]
    fn textbook_prior_counts_toward_match() {
        let mut b = bundle("umbilicated papule", &FIVE);
        b.textbook_priors.insert(
            "c".into(),
            PriorSlot::Found(KnowledgeSnippet {
                chunk_id: "h#0".into(),
                source_doc: "h".into(),
                text: "Umbilicated papules".into(),
                score: Some(1.0),
            }),
        );
        let out = mock_review(&b, &[], &[], &ReviewWeights::default());
        let g = out.stages[1].per_candidate_scores.as_ref().unwrap();
        assert_eq!(g[&Label::new("c")], 0.5);
        assert_eq!(out.final_diagnosis.as_str(), "c");
    }

    #[test]
    fn history_vote_is_similarity_weighted() {
        let hit = |d: &str, s: f64| CaseHit {
            case_id: CaseId::from(d),
            score: s,
            diagnosis: d.into(),
            key_findings: String::new(),
        };
        let h = [hit("a", 0.6), hit("b", 0.2), hit("a", 0.2), hit("c", -0.5)];
        assert!((history_vote(&h, &"a".into()) - 0.8).abs() < 1e-12);
        assert!((history_vote(&h, &"b".into()) - 0.2).abs() < 1e-12);
        assert_eq!(history_vote(&h, &"c".into()), 0.0);
        assert_eq!(history_vote(&[], &"a".into()), 0.0);
    }

    #[test]
    fn weights_validation() {
        assert!(ReviewWeights::new(0.5, 0.3, 0.2).is_ok());
        assert!(ReviewWeights::new(0.5, 0.5, 0.2).is_err());
        assert!(ReviewWeights::new(1.2, -0.2, 0.0).is_err());
    }
}
