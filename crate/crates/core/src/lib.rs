//! Core of a self-hosted ambient scribe: sessions and their recordings,
//! transcription and note generation through pluggable backends, durable
//! storage with a hash-chained audit log, and usage metrics.

pub mod asr;
pub mod audio;
pub mod domain;
pub mod health;
pub mod llm;
pub mod metrics;
pub mod pipeline;
pub mod retry;
pub mod store;
pub mod template;

pub use pipeline::{NoteRequest, Orchestrator, OrchestratorConfig, ScribeError};
pub use store::Store;
