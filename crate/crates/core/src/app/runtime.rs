use std::path::Path;
use std::sync::Arc;

use crate::adapters::http::{
    HttpBackend, HttpClassifier, HttpDescriber, HttpReviewer, HttpSummarizer, HttpTextEmbedder,
};
use crate::adapters::mock::{MockClassifier, MockDescriber, MockSummarizer, MockTextEmbedder};
use crate::adapters::{
    BackendError, Classifier, ImageInput, Reviewer, Summarizer, TextEmbedder, VisionDescriber,
};
use crate::app::config::{AppConfig, BackendMode, ConfigError, Role};
use crate::app::AppError;
use crate::domain::{Label, LabelRegistry};
use crate::index::MockExtractor;
use crate::knowledge::KnowledgeBase;
use crate::memory::{AddOutcome, MemoryGraph, MemoryStore};
use crate::orchestrator::{
    case_id_for, confirm_case, diagnose, Diagnosis, MockReviewer, PipelineConfig, Ports,
};

/// Everything a command or request handler needs: ports, stores and the
/// pipeline configuration, all built once from an [`AppConfig`].
pub struct Runtime {
    pub config: AppConfig,
    pub ports: Ports,
    pub text_embedder: Arc<dyn TextEmbedder>,
    pub store: MemoryStore,
    pub kb: KnowledgeBase,
    pub pipeline: PipelineConfig,
}

impl std::fmt::Debug for Runtime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Runtime")
            .field("store", &self.store)
            .field("kb", &self.kb)
            .finish()
    }
}

fn http(config: &AppConfig, role: Role) -> Result<Option<Arc<HttpBackend>>, AppError> {
    let b = config.backend(role);
    match b.mode {
        BackendMode::Mock => Ok(None),
        BackendMode::Http => {
            let backend = HttpBackend::new(b.profile, config.mock_seed)
                .map_err(|e| AppError::Config(ConfigError::Invalid(format!("{role:?}: {e}"))))?;
            Ok(Some(Arc::new(backend)))
        }
    }
}

/// Builds the model ports and the text embedder for `config`.
pub fn build_ports(config: &AppConfig) -> Result<(Ports, Arc<dyn TextEmbedder>), AppError> {
    let seed = config.mock_seed;
    let dim = config.evolution.dim;
    let describer: Arc<dyn VisionDescriber> = match http(config, Role::Vision)? {
        Some(b) => Arc::new(HttpDescriber(b)),
        None => Arc::new(MockDescriber),
    };
    let classifier: Arc<dyn Classifier> = match http(config, Role::Classifier)? {
        Some(b) => Arc::new(HttpClassifier(b)),
        None => Arc::new(MockClassifier::new(seed)),
    };
    let reviewer: Arc<dyn Reviewer> = match http(config, Role::Reviewer)? {
        Some(b) => Arc::new(HttpReviewer(b)),
        None => Arc::new(MockReviewer {
            weights: config.review,
        }),
    };
    let summarizer: Arc<dyn Summarizer> = match http(config, Role::Summarizer)? {
        Some(b) => Arc::new(HttpSummarizer(b)),
        None => Arc::new(MockSummarizer),
    };
    let text_embedder: Arc<dyn TextEmbedder> = match http(config, Role::TextEmbedder)? {
        Some(backend) => Arc::new(HttpTextEmbedder { backend, dim }),
        None => Arc::new(MockTextEmbedder { dim, seed }),
    };
    let ports = Ports {
        extractor: Arc::new(MockExtractor { dim, seed }),
        describer,
        classifier,
        reviewer,
        summarizer,
    };
    Ok((ports, text_embedder))
}

impl Runtime {
    /// Opens (or creates) the memory store and knowledge base named by
    /// `config`. A missing knowledge base file yields an empty one.
    pub fn open(config: AppConfig) -> Result<Self, AppError> {
        let (ports, text_embedder) = build_ports(&config)?;
        let init_cfg = config.evolution.clone();
        let labels = config.labels.clone();
        let store = MemoryStore::open(&config.paths.memory_dir, || {
            MemoryGraph::new(init_cfg, LabelRegistry::new(labels))
        })?;
        let kb = load_kb(&config.paths.kb_path, text_embedder.clone())?;
        Self::assemble(config, ports, text_embedder, store, kb)
    }

    /// A runtime over in-memory stores, for tests and examples.
    pub fn in_memory(config: AppConfig, graph: MemoryGraph, kb: KnowledgeBase) -> Result<Self, AppError> {
        let (ports, text_embedder) = build_ports(&config)?;
        Self::assemble(config, ports, text_embedder, MemoryStore::in_memory(graph), kb)
    }

    fn assemble(
        config: AppConfig,
        ports: Ports,
        text_embedder: Arc<dyn TextEmbedder>,
        store: MemoryStore,
        kb: KnowledgeBase,
    ) -> Result<Self, AppError> {
        let graph = store.snapshot();
        if graph.config().dim != config.evolution.dim {
            return Err(AppError::Config(ConfigError::Invalid(format!(
                "memory store has dimension {} but config says {}",
                graph.config().dim,
                config.evolution.dim
            ))));
        }
        let label_space: Vec<Label> = if config.labels.is_empty() {
            graph.labels().iter().cloned().collect()
        } else {
            config.labels.clone()
        };
        let pipeline = PipelineConfig {
            label_space,
            history_k: config.pipeline.history_k,
            prior_k: config.pipeline.prior_k,
            use_memory: config.pipeline.use_memory,
            record_timings: false,
        };
        Ok(Runtime {
            config,
            ports,
            text_embedder,
            store,
            kb,
            pipeline,
        })
    }

    pub fn diagnose(&self, image: &ImageInput) -> Result<Diagnosis, AppError> {
        if self.pipeline.label_space.is_empty() {
            return Err(AppError::Config(ConfigError::Invalid(
                "label space is empty; set `labels` in the config".into(),
            )));
        }
        Ok(diagnose(
            image,
            &self.ports,
            &self.store.snapshot(),
            &self.kb,
            &self.pipeline,
        )?)
    }

    /// Writes a diagnosed image back as a confirmed case.
    pub fn confirm(&self, image: &ImageInput, d: &Diagnosis) -> Result<AddOutcome, AppError> {
        Ok(confirm_case(
            &self.store,
            case_id_for(image),
            d,
            self.ports.summarizer.as_ref(),
        )?)
    }
}

pub fn load_kb(path: &Path, embedder: Arc<dyn TextEmbedder>) -> Result<KnowledgeBase, AppError> {
    if path.is_file() {
        Ok(KnowledgeBase::load(path, embedder)?)
    } else {
        Ok(KnowledgeBase::new(embedder))
    }
}

impl From<BackendError> for AppError {
    fn from(e: BackendError) -> Self {
        AppError::Backend(e.to_string())
    }
}
