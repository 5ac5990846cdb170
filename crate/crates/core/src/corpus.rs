//! The planted corpus: a small synthetic dataset whose sidecar metadata
//! fixes what the mock backends will say about each image.
//!
//! Every test image carries its gold label and a set of findings terms that
//! belong to its class alone. The mock classifier is pushed toward the
//! `planted_label`, which is deliberately wrong on 20 of the 60 images. Memory
//! cases repeat the class terms, so once a guideline exists it identifies
//! the gold class and the review overrides the classifier.
//!
//! Layout under the corpus root:
//!
//! ```text
//! manifest.csv          sample_id,image_path,label   (60 test images)
//! memory_cases.csv      case_id,image_path,key_findings,diagnosis
//! test/<id>.pgm         image + <id>.pgm.meta.json
//! memory/<id>.pgm
//! handbook/*.md         textbook notes without any planted term
//! ```

use std::io;
use std::path::{Path, PathBuf};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::adapters::{ImageInput, ImageMeta};
use crate::app::{AppConfig, AppError, Runtime};
use crate::domain::LabelRegistry;
use crate::knowledge::KnowledgeBase;
use crate::memory::MemoryGraph;
use crate::domain::{CaseId, Label, MemoryEntry};
use crate::eval::{Manifest, ManifestRecord};
use crate::index::FeatureExtractor;

pub const CLASSES: [&str; 3] = ["Eczema", "Psoriasis", "Tinea Corporis"];
pub const TEST_PER_CLASS: usize = 20;
pub const MEMORY_PER_CLASS: usize = 10;
const IMAGE_SIDE: usize = 16;
const CORPUS_SEED: u64 = 2024;

/// Findings vocabulary unique to each class.
pub fn class_terms(class: &str) -> &'static [&'static str] {
    match class {
        "Eczema" => &["lichenified", "excoriated", "ill-defined", "weeping", "patch"],
        "Psoriasis" => &["silvery", "scale", "well-demarcated", "erythematous", "plaque"],
        "Tinea Corporis" => &["annular", "raised", "border", "central", "clearing"],
        _ => &[],
    }
}

/// Textbook notes. They describe each disease without using any planted
/// findings term, so the handbook alone never singles out a class.
pub const HANDBOOK: [(&str, &str); 3] = [
    (
        "eczema.md",
        "# Eczema\n\nAtopic dermatitis is a chronic relapsing inflammatory condition that often \
         begins in infancy and is associated with asthma and hay fever.\n\nFlexural sites such as \
         the antecubital and popliteal fossae are typical in older children. Itch drives a \
         scratch cycle; emollients and topical corticosteroids remain first-line care.\n",
    ),
    (
        "psoriasis.md",
        "# Psoriasis\n\nPsoriasis is an immune-mediated disorder with a strong genetic component \
         and links to arthritis and metabolic disease.\n\nExtensor surfaces, scalp and nails are \
         commonly involved; nail pitting and the Koebner phenomenon support the diagnosis. \
         Topical vitamin D analogues, phototherapy and biologics are used by severity.\n",
    ),
    (
        "tinea.md",
        "# Tinea Corporis\n\nTinea corporis is a superficial dermatophyte infection of glabrous \
         skin, spread by contact with people, animals or fomites.\n\nPotassium hydroxide \
         microscopy of skin scrapings shows hyphae. Topical azoles or terbinafine usually \
         suffice; extensive disease may need oral therapy.\n",
    ),
];

/// One test image with its designed outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantedSample {
    pub sample_id: String,
    /// Path relative to the corpus root.
    pub image_path: String,
    pub gold: Label,
    pub planted: Label,
}

impl PlantedSample {
    pub fn classifier_is_wrong(&self) -> bool {
        self.gold != self.planted
    }
}

fn pgm(seed_parts: &[u8]) -> Vec<u8> {
    let mut seed = [0u8; 32];
    for (i, b) in seed_parts.iter().enumerate() {
        seed[i % 32] ^= b.wrapping_add(i as u8);
    }
    let mut rng = ChaCha20Rng::from_seed(seed);
    rng.set_stream(CORPUS_SEED);
    let mut pixels = vec![0u8; IMAGE_SIDE * IMAGE_SIDE];
    rng.fill_bytes(&mut pixels);
    let mut out = format!("P5\n{IMAGE_SIDE} {IMAGE_SIDE}\n255\n").into_bytes();
    out.extend(pixels);
    out
}

fn slug(class: &str) -> String {
    class.to_lowercase().replace(' ', "-")
}

/// The 60 test samples in manifest order. Every third sample gets the next
/// class as its planted label.
pub fn test_samples() -> Vec<PlantedSample> {
    let mut out = Vec::new();
    for (c, class) in CLASSES.iter().enumerate() {
        for i in 0..TEST_PER_CLASS {
            let id = format!("{}-{i:02}", slug(class));
            let wrong = (c * TEST_PER_CLASS + i).is_multiple_of(3);
            let planted = if wrong { CLASSES[(c + 1) % CLASSES.len()] } else { class };
            out.push(PlantedSample {
                image_path: format!("test/{id}.pgm"),
                sample_id: id,
                gold: Label::new(class),
                planted: Label::new(planted),
            });
        }
    }
    out
}

/// `(case_id, image_path, key_findings, diagnosis)` rows of the memory set.
pub fn memory_rows() -> Vec<(String, String, String, Label)> {
    let mut out = Vec::new();
    for class in CLASSES {
        for i in 0..MEMORY_PER_CLASS {
            let id = format!("mem-{}-{i:02}", slug(class));
            out.push((
                id.clone(),
                format!("memory/{id}.pgm"),
                class_terms(class).join(", "),
                Label::new(class),
            ));
        }
    }
    out
}

fn meta_for(s: &PlantedSample) -> ImageMeta {
    ImageMeta {
        planted_label: Some(s.planted.clone()),
        findings_terms: class_terms(s.gold.as_str()).iter().map(|t| t.to_string()).collect(),
        gold_label: Some(s.gold.clone()),
    }
}

/// Writes the full corpus under `root`.
pub fn generate(root: &Path) -> io::Result<()> {
    std::fs::create_dir_all(root.join("test"))?;
    std::fs::create_dir_all(root.join("memory"))?;
    std::fs::create_dir_all(root.join("handbook"))?;
    let mut manifest = Manifest::default();
    for s in test_samples() {
        let img = root.join(&s.image_path);
        std::fs::write(&img, pgm(s.sample_id.as_bytes()))?;
        let mut meta = serde_json::to_string_pretty(&meta_for(&s)).expect("serializable");
        meta.push('\n');
        std::fs::write(ImageMeta::sidecar_path(&img), meta)?;
        manifest
            .records
            .push(ManifestRecord::new(&s.sample_id, &s.image_path, s.gold.clone()));
    }
    manifest
        .save(&root.join("manifest.csv"))
        .map_err(|e| io::Error::other(e.to_string()))?;

    let mut w = csv::Writer::from_path(root.join("memory_cases.csv"))?;
    w.write_record(["case_id", "image_path", "key_findings", "diagnosis"])?;
    for (id, path, findings, dx) in memory_rows() {
        std::fs::write(root.join(&path), pgm(id.as_bytes()))?;
        w.write_record([id.as_str(), path.as_str(), findings.as_str(), dx.as_str()])?;
    }
    w.flush()?;

    for (name, text) in HANDBOOK {
        std::fs::write(root.join("handbook").join(name), text)?;
    }
    Ok(())
}

/// The copy shipped with the crate sources.
pub fn bundled_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data").join("planted")
}

/// Read access to a generated corpus.
#[derive(Debug, Clone)]
pub struct PlantedCorpus {
    pub root: PathBuf,
}

impl PlantedCorpus {
    pub fn open(root: impl Into<PathBuf>) -> Self {
        PlantedCorpus { root: root.into() }
    }

    pub fn bundled() -> Self {
        Self::open(bundled_root())
    }

    pub fn labels(&self) -> Vec<Label> {
        CLASSES.iter().map(Label::new).collect()
    }

    pub fn samples(&self) -> Vec<PlantedSample> {
        test_samples()
    }

    pub fn image_path(&self, s: &PlantedSample) -> PathBuf {
        self.root.join(&s.image_path)
    }

    pub fn load_image(&self, s: &PlantedSample) -> io::Result<ImageInput> {
        ImageInput::from_path(&self.image_path(s))
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.root.join("manifest.csv")
    }

    pub fn memory_manifest_path(&self) -> PathBuf {
        self.root.join("memory_cases.csv")
    }

    pub fn handbook_dir(&self) -> PathBuf {
        self.root.join("handbook")
    }

    /// Mock-backend configuration over the corpus label space.
    pub fn config(&self) -> AppConfig {
        AppConfig {
            labels: self.labels(),
            ..AppConfig::default()
        }
    }

    /// An in-memory runtime for `config` with the handbook ingested and,
    /// when `with_memory_cases` is set, every memory case inserted (which
    /// evolves one guideline per class at the default threshold).
    pub fn runtime(&self, config: AppConfig, with_memory_cases: bool) -> Result<Runtime, AppError> {
        let (_, embedder) = crate::app::build_ports(&config)?;
        let mut kb = KnowledgeBase::new(embedder);
        kb.ingest_dir(&self.handbook_dir(), &config.chunking)?;
        let graph = MemoryGraph::new(config.evolution.clone(), LabelRegistry::new(config.labels.clone()))?;
        let rt = Runtime::in_memory(config, graph, kb)?;
        if with_memory_cases {
            let entries = self.memory_entries(rt.ports.extractor.as_ref())?;
            rt.store.add_cases(entries, rt.ports.summarizer.as_ref())?;
        }
        Ok(rt)
    }

    /// Memory cases embedded with `extractor`, in insertion order.
    pub fn memory_entries(&self, extractor: &dyn FeatureExtractor) -> io::Result<Vec<MemoryEntry>> {
        memory_rows()
            .into_iter()
            .map(|(id, path, findings, dx)| {
                let bytes = std::fs::read(self.root.join(path))?;
                Ok(MemoryEntry {
                    id: CaseId(id),
                    embedding: extractor.extract(&bytes),
                    key_findings: findings,
                    diagnosis: dx,
                    created_at: 0,
                })
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::terms;

    #[test]
    fn designed_shape() {
        let s = test_samples();
        assert_eq!(s.len(), 60);
        assert_eq!(s.iter().filter(|x| x.classifier_is_wrong()).count(), 20);
    }

    #[test]
    fn class_terms_are_disjoint_and_absent_from_handbook() {
        let mut seen = std::collections::BTreeSet::new();
        for c in CLASSES {
            for t in class_terms(c) {
                assert!(seen.insert(*t));
            }
        }
        for (_, text) in HANDBOOK {
            let words = terms(text);
            for t in &seen {
                assert!(!words.contains(*t), "{t}");
            }
            assert!(!words.contains("observed") && !words.contains("findings"));
        }
    }
}
