use evoderm::adapters::mock::MockSummarizer;
use evoderm::domain::{Embedding, Label, LabelRegistry, MemoryEntry};
use evoderm::eval::{
    accuracy, balanced_accuracy, confusion_matrix, kappa, macro_f1, mcc, split, train_count,
    weighted_f1, ConfusionMatrix, LabeledPrediction, Manifest, ManifestRecord,
};
use evoderm::index::{cosine, top_k, IndexedCase};
use evoderm::knowledge::{chunk_document, ChunkPolicy};
use evoderm::memory::{EvolutionConfig, MemoryGraph};
use proptest::prelude::*;

fn labels(k: usize) -> Vec<Label> {
    (0..k).map(|i| Label::new(format!("L{i}"))).collect()
}

fn pairs_strategy() -> impl Strategy<Value = (usize, Vec<(usize, usize)>)> {
    (2usize..6).prop_flat_map(|k| (Just(k), prop::collection::vec((0..k, 0..k), 1..120)))
}

fn preds(k: usize, pairs: &[(usize, usize)]) -> Vec<LabeledPrediction> {
    let l = labels(k);
    pairs
        .iter()
        .enumerate()
        .map(|(i, (g, p))| LabeledPrediction::new(format!("s{i}"), l[*g].clone(), l[*p].clone()))
        .collect()
}

fn vector(dim: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0f64..10.0, dim)
}

proptest! {
    #[test]
    fn metrics_ignore_prediction_order((k, pairs) in pairs_strategy(), seed in any::<u64>()) {
        let l = labels(k);
        let a = confusion_matrix(&preds(k, &pairs), &l).unwrap();
        let mut shuffled = pairs.clone();
        let n = shuffled.len();
        for i in 0..n {
            let j = (seed.wrapping_mul(i as u64 + 1).rotate_left(17) % n as u64) as usize;
            shuffled.swap(i, j);
        }
        let b = confusion_matrix(&preds(k, &shuffled), &l).unwrap();
        prop_assert_eq!(a.counts(), b.counts());
        prop_assert_eq!(mcc(&a).unwrap(), mcc(&b).unwrap());
        prop_assert_eq!(macro_f1(&a).unwrap(), macro_f1(&b).unwrap());
    }

    #[test]
    fn metric_ranges((k, pairs) in pairs_strategy()) {
        let m = confusion_matrix(&preds(k, &pairs), &labels(k)).unwrap();
        prop_assert_eq!(m.total(), pairs.len() as u64);
        for v in [accuracy(&m).unwrap(), macro_f1(&m).unwrap(), weighted_f1(&m).unwrap(), balanced_accuracy(&m).unwrap()] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        let r = mcc(&m).unwrap();
        prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&r));
        prop_assert!(kappa(&m).unwrap() <= 1.0 + 1e-12);
    }

    #[test]
    fn perfect_scores_iff_diagonal((k, pairs) in pairs_strategy()) {
        let m = confusion_matrix(&preds(k, &pairs), &labels(k)).unwrap();
        prop_assert_eq!(accuracy(&m).unwrap() == 1.0, m.is_diagonal());
        let row_classes = m.row_sums().iter().filter(|&&r| r > 0).count();
        if row_classes > 1 {
            prop_assert_eq!((kappa(&m).unwrap() - 1.0).abs() < 1e-12, m.is_diagonal());
        }
    }

    #[test]
    fn binary_mcc_matches_closed_form(tp in 0u64..50, fn_ in 0u64..50, fp in 0u64..50, tn in 0u64..50) {
        prop_assume!(tp + fn_ + fp + tn > 0);
        let m = ConfusionMatrix::from_counts(labels(2), vec![vec![tp, fn_], vec![fp, tn]]).unwrap();
        let (a, b, c, d) = (tp as f64, fn_ as f64, fp as f64, tn as f64);
        let den = ((a + c) * (a + b) * (d + c) * (d + b)).sqrt();
        let want = if den == 0.0 { 0.0 } else { (a * d - c * b) / den };
        prop_assert!((mcc(&m).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn cosine_is_bounded_and_symmetric(a in vector(8), b in vector(8)) {
        let (ea, eb) = (Embedding::new(a).unwrap(), Embedding::new(b).unwrap());
        prop_assume!(!ea.is_zero() && !eb.is_zero());
        let ab = cosine(&ea, &eb).unwrap();
        prop_assert!((-1.0..=1.0).contains(&ab));
        prop_assert_eq!(ab, cosine(&eb, &ea).unwrap());
        prop_assert!((cosine(&ea, &ea).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn top_k_is_sorted_and_bounded(vs in prop::collection::vec(vector(4), 1..40), q in vector(4), k in 1usize..50) {
        let q = Embedding::new(q).unwrap();
        prop_assume!(!q.is_zero());
        let cases: Vec<IndexedCase> = vs
            .into_iter()
            .enumerate()
            .map(|(i, v)| IndexedCase::new(MemoryEntry::new(format!("c{i}"), Embedding::new(v).unwrap(), "f", "A")))
            .collect();
        let hits = top_k(&q, k, &cases).unwrap();
        prop_assert_eq!(hits.len(), k.min(cases.len()));
        for w in hits.windows(2) {
            prop_assert!(w[0].score >= w[1].score);
        }
    }

    #[test]
    fn split_partitions(sizes in prop::collection::vec(1usize..30, 1..5), ratio in 0.05f64..0.95, seed in any::<u64>(), stratified in any::<bool>()) {
        let mut recs = Vec::new();
        for (c, n) in sizes.iter().enumerate() {
            for i in 0..*n {
                recs.push(ManifestRecord::new(format!("{c}-{i}"), "x", format!("class{c}")));
            }
        }
        let m = Manifest::new(recs);
        let (train, test) = split(&m, ratio, seed, stratified).unwrap();
        prop_assert_eq!(train.len() + test.len(), m.len());
        let ids: std::collections::BTreeSet<_> = train.records.iter().chain(&test.records).map(|r| r.sample_id.clone()).collect();
        prop_assert_eq!(ids.len(), m.len());
        if stratified {
            let want: usize = sizes.iter().map(|n| train_count(*n, ratio)).sum();
            prop_assert_eq!(train.len(), want);
        } else {
            prop_assert_eq!(train.len(), train_count(m.len(), ratio));
        }
        prop_assert_eq!(split(&m, ratio, seed, stratified).unwrap(), (train, test));
    }

    #[test]
    fn chunks_respect_size(paras in prop::collection::vec("[a-z ]{1,300}", 1..8), max in 20usize..400, overlap in 0usize..100, prefer in any::<bool>()) {
        let doc = paras.join("\n\n");
        let policy = ChunkPolicy { max_chars: max, overlap_chars: overlap, prefer_paragraphs: prefer };
        let chunks = chunk_document(&doc, &policy);
        for c in &chunks {
            prop_assert!(c.chars().count() <= max);
            prop_assert!(!c.trim().is_empty());
        }
        if !doc.trim().is_empty() {
            prop_assert!(!chunks.is_empty());
        }
    }

    #[test]
    fn memory_counts_follow_threshold(n in 1u32..6, cats in prop::collection::vec(0usize..3, 0..40)) {
        let names = labels(3);
        let mut g = MemoryGraph::new(
            EvolutionConfig { n_thresh: n, dim: 2, ..Default::default() },
            LabelRegistry::new(names.clone()),
        ).unwrap();
        for (i, c) in cats.iter().enumerate() {
            let e = MemoryEntry::new(format!("c{i}"), Embedding::new(vec![1.0, i as f64]).unwrap(), format!("t{} t{}", i % 4, i % 7), names[*c].clone());
            g.add_case(e, &MockSummarizer).unwrap();
        }
        for (c, name) in names.iter().enumerate() {
            let count = cats.iter().filter(|&&x| x == c).count() as u32;
            prop_assert_eq!(g.versions(name).len() as u32, count / n);
            prop_assert_eq!(g.pending(name), count % n);
            for (v, row) in g.guideline_timeline(name).iter().enumerate() {
                prop_assert_eq!(row.version, v as u32);
                prop_assert!((0.0..=1.0).contains(&row.refinement_delta));
            }
        }
    }
}
