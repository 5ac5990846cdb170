use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::adapters::Summarizer;
use crate::domain::{
    validate_entry, CaseId, Embedding, GuidelineVersion, Label, LabelRegistry, MemoryEntry,
};
use crate::index::{top_k, CaseHit, IndexedCase};
use crate::memory::MemoryError;
use crate::text::terms;

/// Evolution trigger and retrieval settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvolutionConfig {
    pub n_thresh: u32,
    pub top_k: usize,
    pub dim: usize,
    /// Accept diagnoses that are not yet in the label registry.
    pub allow_new_labels: bool,
}

impl Default for EvolutionConfig {
    fn default() -> Self {
        EvolutionConfig {
            n_thresh: 10,
            top_k: 5,
            dim: 64,
            allow_new_labels: false,
        }
    }
}

impl EvolutionConfig {
    pub fn validate(&self) -> Result<(), MemoryError> {
        if self.n_thresh < 1 {
            return Err(MemoryError::InvalidConfig("n_thresh must be >= 1".into()));
        }
        if self.top_k < 1 {
            return Err(MemoryError::InvalidConfig("top_k must be >= 1".into()));
        }
        if self.dim < 1 {
            return Err(MemoryError::InvalidConfig("dim must be >= 1".into()));
        }
        Ok(())
    }
}

/// Per-category linkage: member cases, cases pending since the last
/// evolution, and the append-only guideline history.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CategoryState {
    pub case_ids: Vec<CaseId>,
    pub pending: Vec<CaseId>,
    pub versions: Vec<GuidelineVersion>,
}

impl CategoryState {
    pub fn pending_count(&self) -> u32 {
        self.pending.len() as u32
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AddOutcome {
    pub case_id: CaseId,
    pub evolved: Option<GuidelineVersion>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimelineRow {
    pub version: u32,
    pub refinement_delta: f64,
    pub created_at: u64,
    pub source_count: usize,
}

/// Fraction of `next`'s terms that are absent from `prev`.
fn novelty(prev: Option<&str>, next: &str) -> f64 {
    let next_terms = terms(next);
    let prev_terms = prev.map(terms).unwrap_or_default();
    let novel = next_terms.difference(&prev_terms).count();
    novel as f64 / next_terms.len().max(1) as f64
}

/// `|terms(next) \ terms(prev)| / max(1, |terms(next)|)` for consecutive versions.
pub fn refinement_delta(prev: &GuidelineVersion, next: &GuidelineVersion) -> Result<f64, MemoryError> {
    if prev.category != next.category || prev.version + 1 != next.version {
        return Err(MemoryError::VersionMismatch {
            prev: prev.version,
            next: next.version,
        });
    }
    Ok(novelty(Some(&prev.text), &next.text))
}

/// In-memory case repository with category links and guideline histories.
#[derive(Debug, Clone)]
pub struct MemoryGraph {
    config: EvolutionConfig,
    labels: LabelRegistry,
    cases: Vec<Arc<IndexedCase>>,
    by_id: HashMap<CaseId, usize>,
    categories: BTreeMap<Label, CategoryState>,
    next_seq: u64,
}

impl MemoryGraph {
    pub fn new(config: EvolutionConfig, labels: LabelRegistry) -> Result<Self, MemoryError> {
        config.validate()?;
        Ok(MemoryGraph {
            config,
            labels,
            cases: Vec::new(),
            by_id: HashMap::new(),
            categories: BTreeMap::new(),
            next_seq: 0,
        })
    }

    pub(crate) fn from_parts(
        config: EvolutionConfig,
        labels: LabelRegistry,
        cases: Vec<MemoryEntry>,
        categories: BTreeMap<Label, CategoryState>,
        next_seq: u64,
    ) -> Result<Self, MemoryError> {
        let mut g = MemoryGraph::new(config, labels)?;
        for e in cases {
            if g.by_id.contains_key(&e.id) {
                return Err(MemoryError::DuplicateId(e.id));
            }
            g.by_id.insert(e.id.clone(), g.cases.len());
            g.cases.push(Arc::new(IndexedCase::new(e)));
        }
        for (cat, st) in &categories {
            if let Some(missing) = st
                .case_ids
                .iter()
                .chain(&st.pending)
                .chain(st.versions.iter().flat_map(|v| &v.source_case_ids))
                .find(|id| !g.by_id.contains_key(*id))
            {
                return Err(MemoryError::DanglingCase {
                    category: cat.clone(),
                    case_id: missing.clone(),
                });
            }
            if st.versions.iter().enumerate().any(|(i, v)| v.version as usize != i) {
                return Err(MemoryError::InvalidConfig(format!(
                    "guideline versions of {cat} are not gap-free"
                )));
            }
        }
        g.categories = categories;
        g.next_seq = next_seq;
        Ok(g)
    }

    pub fn config(&self) -> &EvolutionConfig {
        &self.config
    }

    pub fn labels(&self) -> &LabelRegistry {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.cases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cases.is_empty()
    }

    pub fn next_seq(&self) -> u64 {
        self.next_seq
    }

    pub fn cases(&self) -> impl Iterator<Item = &MemoryEntry> {
        self.cases.iter().map(|c| &c.entry)
    }

    pub fn case(&self, id: &CaseId) -> Option<&MemoryEntry> {
        self.by_id.get(id).map(|&i| &self.cases[i].entry)
    }

    pub fn categories(&self) -> &BTreeMap<Label, CategoryState> {
        &self.categories
    }

    pub fn category(&self, label: &Label) -> Option<&CategoryState> {
        self.categories.get(label)
    }

    /// ΔN for `category`; zero for unknown categories.
    pub fn pending(&self, category: &Label) -> u32 {
        self.categories.get(category).map_or(0, CategoryState::pending_count)
    }

    pub fn versions(&self, category: &Label) -> &[GuidelineVersion] {
        self.categories
            .get(category)
            .map_or(&[][..], |c| c.versions.as_slice())
    }

    pub fn latest_guideline(&self, category: &Label) -> Option<&GuidelineVersion> {
        self.versions(category).last()
    }

    fn take_seq(&mut self) -> u64 {
        let s = self.next_seq;
        self.next_seq += 1;
        s
    }

    fn admit(&mut self, entry: &MemoryEntry) -> Result<(), MemoryError> {
        validate_entry(entry, self.config.dim)?;
        if self.by_id.contains_key(&entry.id) {
            return Err(MemoryError::DuplicateId(entry.id.clone()));
        }
        if !self.labels.contains(&entry.diagnosis) && !self.config.allow_new_labels {
            return Err(MemoryError::UnknownLabel(entry.diagnosis.clone()));
        }
        Ok(())
    }

    fn link(&mut self, entry: MemoryEntry) {
        self.labels.insert(entry.diagnosis.clone());
        let cat = self.categories.entry(entry.diagnosis.clone()).or_default();
        cat.case_ids.push(entry.id.clone());
        cat.pending.push(entry.id.clone());
        self.by_id.insert(entry.id.clone(), self.cases.len());
        self.cases.push(Arc::new(IndexedCase::new(entry)));
    }

    fn findings(&self, ids: &[CaseId]) -> Vec<String> {
        ids.iter()
            .map(|id| self.case(id).expect("linked case exists").key_findings.clone())
            .collect()
    }

    /// Builds the next version for `category` without committing it.
    fn draft_evolution(
        &self,
        category: &Label,
        summarizer: &dyn Summarizer,
    ) -> Result<GuidelineVersion, MemoryError> {
        let st = self
            .categories
            .get(category)
            .ok_or_else(|| MemoryError::EmptyCategory(category.clone()))?;
        let (previous, sources) = match st.versions.last() {
            Some(v) => (Some(v.text.as_str()), st.pending.clone()),
            None => (None, st.case_ids.clone()),
        };
        if sources.is_empty() {
            return Err(MemoryError::EmptyCategory(category.clone()));
        }
        let text = summarizer.summarize(previous, &self.findings(&sources))?;
        Ok(GuidelineVersion {
            category: category.clone(),
            version: st.versions.len() as u32,
            refinement_delta: novelty(previous, &text),
            text,
            source_case_ids: sources,
            created_at: self.next_seq,
        })
    }

    fn commit_version(&mut self, v: GuidelineVersion) {
        self.next_seq = self.next_seq.max(v.created_at + 1);
        let st = self.categories.entry(v.category.clone()).or_default();
        st.pending.clear();
        st.versions.push(v);
    }

    /// Inserts a confirmed case and, when the category's pending count
    /// reaches the threshold, evolves its guideline in the same step.
    /// On any error the graph is unchanged.
    pub fn add_case(
        &mut self,
        mut entry: MemoryEntry,
        summarizer: &dyn Summarizer,
    ) -> Result<AddOutcome, MemoryError> {
        self.admit(&entry)?;
        let will_evolve = self.pending(&entry.diagnosis) + 1 >= self.config.n_thresh;
        let saved_seq = self.next_seq;
        entry.created_at = self.take_seq();
        let id = entry.id.clone();
        let category = entry.diagnosis.clone();
        let had_label = self.labels.contains(&category);
        self.link(entry);
        if !will_evolve {
            return Ok(AddOutcome {
                case_id: id,
                evolved: None,
            });
        }
        match self.draft_evolution(&category, summarizer) {
            Ok(v) => {
                self.commit_version(v.clone());
                Ok(AddOutcome {
                    case_id: id,
                    evolved: Some(v),
                })
            }
            Err(e) => {
                self.unlink_last(&category, had_label);
                self.next_seq = saved_seq;
                Err(e)
            }
        }
    }

    fn unlink_last(&mut self, category: &Label, had_label: bool) {
        let c = self.cases.pop().expect("just linked");
        self.by_id.remove(&c.entry.id);
        let empty = {
            let st = self.categories.get_mut(category).expect("just linked");
            st.case_ids.pop();
            st.pending.pop();
            st.case_ids.is_empty() && st.versions.is_empty()
        };
        if empty {
            self.categories.remove(category);
        }
        if !had_label {
            self.labels = LabelRegistry::new(self.labels.iter().filter(|l| *l != category).cloned());
        }
    }

    /// Log-replay insert: keeps the recorded sequence number and never evolves.
    pub(crate) fn insert_replayed(&mut self, entry: MemoryEntry) -> Result<(), MemoryError> {
        self.admit(&entry)?;
        self.next_seq = self.next_seq.max(entry.created_at + 1);
        self.link(entry);
        Ok(())
    }

    /// Log-replay of a guideline version.
    pub(crate) fn apply_replayed(&mut self, v: GuidelineVersion) -> Result<(), MemoryError> {
        let have = self.versions(&v.category).len() as u32;
        if v.version != have {
            return Err(MemoryError::VersionMismatch {
                prev: have,
                next: v.version,
            });
        }
        if let Some(id) = v.source_case_ids.iter().find(|id| !self.by_id.contains_key(*id)) {
            return Err(MemoryError::DanglingCase {
                category: v.category.clone(),
                case_id: id.clone(),
            });
        }
        self.commit_version(v);
        Ok(())
    }

    /// Top-`k` most similar stored cases across all categories.
    pub fn query_similar(&self, query: &Embedding, k: usize) -> Result<Vec<CaseHit>, MemoryError> {
        if query.dim() != self.config.dim {
            return Err(MemoryError::Domain(crate::domain::DomainError::DimensionMismatch {
                expected: self.config.dim,
                actual: query.dim(),
            }));
        }
        Ok(top_k(query, k, &self.cases)?)
    }

    /// Version 0 from every finding of the category.
    pub fn synthesize_initial(
        &mut self,
        category: &Label,
        summarizer: &dyn Summarizer,
    ) -> Result<GuidelineVersion, MemoryError> {
        let st = self
            .categories
            .get(category)
            .filter(|s| !s.case_ids.is_empty())
            .ok_or_else(|| MemoryError::EmptyCategory(category.clone()))?;
        if !st.versions.is_empty() {
            return Err(MemoryError::AlreadyInitialized(category.clone()));
        }
        let v = self.draft_evolution(category, summarizer)?;
        self.commit_version(v.clone());
        Ok(v)
    }

    /// Evolves `category` when ΔN ≥ N_thresh; otherwise a no-op.
    pub fn maybe_evolve(
        &mut self,
        category: &Label,
        summarizer: &dyn Summarizer,
    ) -> Result<Option<GuidelineVersion>, MemoryError> {
        if self.pending(category) < self.config.n_thresh {
            return Ok(None);
        }
        let v = self.draft_evolution(category, summarizer)?;
        self.commit_version(v.clone());
        Ok(Some(v))
    }

    /// All versions of `category`, oldest first.
    pub fn guideline_timeline(&self, category: &Label) -> Vec<TimelineRow> {
        self.versions(category)
            .iter()
            .map(|v| TimelineRow {
                version: v.version,
                refinement_delta: v.refinement_delta,
                created_at: v.created_at,
                source_count: v.source_case_ids.len(),
            })
            .collect()
    }

    pub(crate) fn raw_parts(
        &self,
    ) -> (
        &EvolutionConfig,
        &LabelRegistry,
        Vec<&MemoryEntry>,
        &BTreeMap<Label, CategoryState>,
    ) {
        (
            &self.config,
            &self.labels,
            self.cases().collect(),
            &self.categories,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adapters::mock::MockSummarizer;
    use crate::adapters::BackendError;
    use crate::index::mock_extract;

    fn graph(n: u32) -> MemoryGraph {
        MemoryGraph::new(
            EvolutionConfig {
                n_thresh: n,
                dim: 8,
                allow_new_labels: true,
                ..Default::default()
            },
            LabelRegistry::default(),
        )
        .unwrap()
    }

    fn entry(i: usize, label: &str, findings: &str) -> MemoryEntry {
        MemoryEntry::new(
            format!("c{i}"),
            mock_extract(format!("img{i}").as_bytes(), 8, 0),
            findings,
            label,
        )
    }

    #[test]
    fn below_threshold_only_counts() {
        let mut g = graph(5);
        for i in 0..3 {
            g.add_case(entry(i, "A", "x"), &MockSummarizer).unwrap();
        }
        let out = g.add_case(entry(3, "A", "x"), &MockSummarizer).unwrap();
        assert!(out.evolved.is_none());
        assert_eq!(g.pending(&"A".into()), 4);
    }

    #[test]
    fn threshold_boundary_evolves_and_resets() {
        let mut g = graph(5);
        for i in 0..4 {
            g.add_case(entry(i, "A", "x"), &MockSummarizer).unwrap();
        }
        let out = g.add_case(entry(4, "A", "y"), &MockSummarizer).unwrap();
        let v = out.evolved.unwrap();
        assert_eq!(v.version, 0);
        assert_eq!(v.text, "x; y");
        assert_eq!(g.pending(&"A".into()), 0);
    }

    #[test]
    fn duplicate_id_leaves_store_unchanged() {
        let mut g = graph(5);
        g.add_case(entry(0, "A", "x"), &MockSummarizer).unwrap();
        let before = (g.len(), g.pending(&"A".into()), g.next_seq());
        assert!(matches!(
            g.add_case(entry(0, "B", "x"), &MockSummarizer),
            Err(MemoryError::DuplicateId(_))
        ));
        assert_eq!(before, (g.len(), g.pending(&"A".into()), g.next_seq()));
        assert!(g.category(&"B".into()).is_none());
    }

    #[test]
    fn unknown_label_rejected_when_registry_closed() {
        let mut g = MemoryGraph::new(
            EvolutionConfig {
                dim: 8,
                ..Default::default()
            },
            LabelRegistry::new(["A"]),
        )
        .unwrap();
        assert!(g.add_case(entry(0, "A", "x"), &MockSummarizer).is_ok());
        assert!(matches!(
            g.add_case(entry(1, "B", "x"), &MockSummarizer),
            Err(MemoryError::UnknownLabel(_))
        ));
    }

    #[test]
    fn dimension_mismatch() {
        let mut g = graph(5);
        let mut e = entry(0, "A", "x");
        e.embedding = mock_extract(b"z", 4, 0);
        assert!(matches!(
            g.add_case(e, &MockSummarizer),
            Err(MemoryError::Domain(crate::domain::DomainError::DimensionMismatch { .. }))
        ));
    }

    #[test]
    fn initial_synthesis_contracts() {
        let mut g = graph(10);
        assert!(matches!(
            g.synthesize_initial(&"A".into(), &MockSummarizer),
            Err(MemoryError::EmptyCategory(_))
        ));
        g.add_case(entry(0, "A", "red scaly"), &MockSummarizer).unwrap();
        g.add_case(entry(1, "A", "Scaly plaque"), &MockSummarizer).unwrap();
        g.add_case(entry(2, "A", "plaque, red"), &MockSummarizer).unwrap();
        let v0 = g.synthesize_initial(&"A".into(), &MockSummarizer).unwrap();
        assert_eq!(v0.text, "plaque; red; scaly");
        assert_eq!(v0.source_case_ids.len(), 3);
        assert_eq!(g.pending(&"A".into()), 0);
        assert!(matches!(
            g.synthesize_initial(&"A".into(), &MockSummarizer),
            Err(MemoryError::AlreadyInitialized(_))
        ));
    }

    #[test]
    fn maybe_evolve_below_threshold_is_noop() {
        let mut g = graph(5);
        g.add_case(entry(0, "A", "x"), &MockSummarizer).unwrap();
        g.add_case(entry(1, "A", "x"), &MockSummarizer).unwrap();
        assert_eq!(g.maybe_evolve(&"A".into(), &MockSummarizer).unwrap(), None);
        assert_eq!(g.maybe_evolve(&"nobody".into(), &MockSummarizer).unwrap(), None);
    }

    #[test]
    fn delta_examples() {
        let v = |n: u32, t: &str| GuidelineVersion {
            category: "A".into(),
            version: n,
            text: t.into(),
            source_case_ids: vec![CaseId::from("c")],
            refinement_delta: 0.0,
            created_at: 0,
        };
        assert_eq!(refinement_delta(&v(0, "a b"), &v(1, "a b")).unwrap(), 0.0);
        assert_eq!(refinement_delta(&v(0, "a; b"), &v(1, "a; b; c; d")).unwrap(), 0.5);
        assert_eq!(refinement_delta(&v(0, "a"), &v(1, "b")).unwrap(), 1.0);
        assert!(matches!(
            refinement_delta(&v(0, "a"), &v(2, "b")),
            Err(MemoryError::VersionMismatch { .. })
        ));
    }

    struct Failing;
    impl Summarizer for Failing {
        fn summarize(&self, _: Option<&str>, _: &[String]) -> Result<String, BackendError> {
            Err(BackendError::InvalidResponse("down".into()))
        }
    }

    #[test]
    fn failed_evolution_rolls_back_the_insert() {
        let mut g = graph(2);
        g.add_case(entry(0, "A", "x"), &MockSummarizer).unwrap();
        assert!(matches!(
            g.add_case(entry(1, "A", "y"), &Failing),
            Err(MemoryError::Backend(_))
        ));
        assert_eq!(g.len(), 1);
        assert_eq!(g.pending(&"A".into()), 1);
        assert!(g.case(&"c1".into()).is_none());
    }

    #[test]
    fn timeline_for_unknown_category_is_empty() {
        assert!(graph(3).guideline_timeline(&"Z".into()).is_empty());
    }
}
