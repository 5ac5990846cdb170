//! Configuration, the `evoderm` command line and the HTTP service.

pub mod cli;
pub mod config;
mod runtime;
pub mod service;

use thiserror::Error;

use crate::eval::EvalError;
use crate::knowledge::KbError;
use crate::memory::MemoryError;
use crate::orchestrator::PipelineError;

pub use config::{AppConfig, BackendMode, ConfigError, Role, RoleBackend};
pub use runtime::{build_ports, load_kb, Runtime};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_BACKEND: i32 = 3;
pub const EXIT_IO: i32 = 4;

#[derive(Debug, Error)]
pub enum AppError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Usage(String),
    #[error("backend: {0}")]
    Backend(String),
    #[error("cannot bind {0}")]
    Bind(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("memory: {0}")]
    Memory(#[from] MemoryError),
    #[error("knowledge base: {0}")]
    Kb(#[from] KbError),
    #[error("eval: {0}")]
    Eval(#[from] EvalError),
    #[error("pipeline: {0}")]
    Pipeline(#[from] PipelineError),
}

impl AppError {
    /// Process exit code: 2 configuration or input format, 3 backend,
    /// 4 I/O, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Config(_) | AppError::Usage(_) => EXIT_CONFIG,
            AppError::Backend(_) | AppError::Bind(_) => EXIT_BACKEND,
            AppError::Io(_) => EXIT_IO,
            AppError::Memory(e) => match e {
                MemoryError::Backend(_) => EXIT_BACKEND,
                MemoryError::Io(_)
                | MemoryError::CorruptSnapshot(_)
                | MemoryError::CorruptLog { .. }
                | MemoryError::SchemaVersionUnsupported(_) => EXIT_IO,
                MemoryError::InvalidConfig(_) => EXIT_CONFIG,
                _ => EXIT_FAILURE,
            },
            AppError::Kb(e) => match e {
                KbError::Backend(_) => EXIT_BACKEND,
                KbError::Io(_) | KbError::Snapshot(_) => EXIT_IO,
                KbError::DimensionMismatch { .. } => EXIT_CONFIG,
                _ => EXIT_FAILURE,
            },
            AppError::Eval(EvalError::Io(_)) => EXIT_IO,
            AppError::Eval(_) => EXIT_CONFIG,
            AppError::Pipeline(e) if e.is_backend() => EXIT_BACKEND,
            AppError::Pipeline(_) => EXIT_FAILURE,
        }
    }
}
