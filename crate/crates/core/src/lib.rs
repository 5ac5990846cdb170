//! Memory-augmented, multi-stage diagnostic reasoning over skin images.
//!
//! The crate is organised as a set of layers:
//!
//! - [`domain`]: labels, embeddings, memory entries, guideline versions and
//!   report types shared by everything else.
//! - [`index`]: exact cosine top-K search and feature extraction.
//! - [`memory`]: the evolving case memory with versioned guidelines and
//!   snapshot plus log persistence.
//! - [`knowledge`]: a chunked handbook store for textbook priors.
//! - [`adapters`]: model ports with deterministic mocks and an
//!   OpenAI-compatible HTTP backend.
//! - [`orchestrator`]: the diagnosis pipeline and five-stage review.
//! - [`eval`]: metrics, bootstrap intervals, t-tests, manifests and splits.
//! - [`app`]: configuration, the command line and the HTTP service.
//! - [`corpus`]: the synthetic planted corpus used by examples and tests.
//! - [`stub`]: a local OpenAI-compatible stub server.

pub mod adapters;
pub mod app;
pub mod corpus;
pub mod domain;
pub mod eval;
pub mod index;
pub mod knowledge;
pub mod memory;
pub mod orchestrator;
pub mod snapshot;
pub mod stub;
pub mod text;
