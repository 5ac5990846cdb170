use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::adapters::BackendProfile;
use crate::domain::Label;
use crate::knowledge::ChunkPolicy;
use crate::memory::EvolutionConfig;
use crate::orchestrator::ReviewWeights;

pub const ENV_PREFIX: &str = "EVODERM_";

/// Commented example configuration, also used by `evoderm config-example`.
pub const EXAMPLE_CONFIG: &str = r#"# evoderm configuration
#
# Any key can be overridden from the environment with EVODERM_ followed by
# the upper-cased key path, sections joined by a double underscore:
#   EVODERM_MOCK_SEED=11
#   EVODERM_EVOLUTION__N_THRESH=3
#   EVODERM_BACKENDS__REVIEWER__MODE=http

# Closed label space of the deployment.
labels = ["Eczema", "Psoriasis", "Tinea Corporis"]

# Seed for every mock port.
mock_seed = 7

[paths]
memory_dir = "evoderm-data/memory"
kb_path = "evoderm-data/kb.snapshot"

[evolution]
n_thresh = 10
top_k = 5
dim = 64
allow_new_labels = false

[review]
w_conf = 0.5
w_guideline = 0.3
w_history = 0.2

[pipeline]
history_k = 5
prior_k = 1
use_memory = true

[chunking]
max_chars = 800
overlap_chars = 80
prefer_paragraphs = true

[service]
bind = "127.0.0.1:8080"

# One section per model role: vision, classifier, reviewer, summarizer,
# text_embedder. mode is "mock" or "http".
[backends.reviewer]
mode = "mock"
endpoint_url = "http://127.0.0.1:8000"
model_name = "reviewer"
temperature = 0.3
max_tokens = 4096
timeout_ms = 60000
max_retries = 3
# auth_token_env_var = "REVIEWER_API_KEY"
"#;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendMode {
    #[default]
    Mock,
    Http,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Vision,
    Classifier,
    Reviewer,
    Summarizer,
    TextEmbedder,
}

impl Role {
    pub const ALL: [Role; 5] = [
        Role::Vision,
        Role::Classifier,
        Role::Reviewer,
        Role::Summarizer,
        Role::TextEmbedder,
    ];
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RoleBackend {
    pub mode: BackendMode,
    #[serde(flatten)]
    pub profile: BackendProfile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    pub memory_dir: PathBuf,
    pub kb_path: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            memory_dir: "evoderm-data/memory".into(),
            kb_path: "evoderm-data/kb.snapshot".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineSection {
    pub history_k: usize,
    pub prior_k: usize,
    pub use_memory: bool,
}

impl Default for PipelineSection {
    fn default() -> Self {
        PipelineSection {
            history_k: 5,
            prior_k: 1,
            use_memory: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceSection {
    pub bind: String,
}

impl Default for ServiceSection {
    fn default() -> Self {
        ServiceSection {
            bind: "127.0.0.1:8080".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub labels: Vec<Label>,
    pub mock_seed: u64,
    pub paths: Paths,
    pub evolution: EvolutionConfig,
    pub review: ReviewWeights,
    pub pipeline: PipelineSection,
    pub chunking: ChunkPolicy,
    pub service: ServiceSection,
    pub backends: BTreeMap<Role, RoleBackend>,
}

impl Default for AppConfig {
    fn default() -> Self {
        AppConfig {
            labels: Vec::new(),
            mock_seed: 7,
            paths: Paths::default(),
            evolution: EvolutionConfig::default(),
            review: ReviewWeights::default(),
            pipeline: PipelineSection::default(),
            chunking: ChunkPolicy::default(),
            service: ServiceSection::default(),
            backends: BTreeMap::new(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

impl AppConfig {
    pub fn backend(&self, role: Role) -> RoleBackend {
        self.backends.get(&role).cloned().unwrap_or_default()
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        Self::from_toml_with_env(text, std::iter::empty::<(String, String)>())
    }

    /// Parses `text`, applies `EVODERM_*` overrides from `env`, then validates.
    pub fn from_toml_with_env<I, K, V>(text: &str, env: I) -> Result<Self, ConfigError>
    where
        I: IntoIterator<Item = (K, V)>,
        K: AsRef<str>,
        V: AsRef<str>,
    {
        let mut doc: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        let mut overrides: Vec<(String, String)> = env
            .into_iter()
            .filter_map(|(k, v)| {
                k.as_ref()
                    .strip_prefix(ENV_PREFIX)
                    .map(|rest| (rest.to_ascii_lowercase(), v.as_ref().to_owned()))
            })
            .collect();
        overrides.sort();
        for (key, value) in overrides {
            set_path(&mut doc, &key, &value)?;
        }
        let cfg: AppConfig = toml::Value::Table(doc)
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads `path` (or defaults when `None`) with process environment overrides.
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|source| ConfigError::Read {
                path: p.to_path_buf(),
                source,
            })?,
            None => String::new(),
        };
        Self::from_toml_with_env(&text, std::env::vars())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.evolution
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.review.validate().map_err(ConfigError::Invalid)?;
        for (role, b) in &self.backends {
            b.profile
                .validate()
                .map_err(|e| ConfigError::Invalid(format!("{role:?}: {e}")))?;
        }
        if self.pipeline.history_k == 0 || self.pipeline.prior_k == 0 {
            return Err(ConfigError::Invalid("history_k and prior_k must be >= 1".into()));
        }
        if self.chunking.max_chars == 0 || self.chunking.overlap_chars >= self.chunking.max_chars {
            return Err(ConfigError::Invalid(
                "chunking requires 0 <= overlap_chars < max_chars".into(),
            ));
        }
        let mut seen = std::collections::BTreeSet::new();
        if let Some(dup) = self.labels.iter().find(|l| !seen.insert(*l)) {
            return Err(ConfigError::Invalid(format!("duplicate label {dup}")));
        }
        Ok(())
    }
}

/// Sets `a__b__c` inside `doc`, parsing `value` as a TOML value when it
/// parses and falling back to a plain string.
fn set_path(doc: &mut toml::Table, key: &str, value: &str) -> Result<(), ConfigError> {
    let parts: Vec<&str> = key.split("__").collect();
    let (last, parents) = parts.split_last().expect("split yields one part");
    let mut table = doc;
    for p in parents {
        let entry = table
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| ConfigError::Invalid(format!("{ENV_PREFIX}{}: {p} is not a section", key.to_uppercase())))?;
    }
    let parsed = format!("v = {value}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(value.to_owned()));
    table.insert(last.to_string(), parsed);
    Ok(())
}
