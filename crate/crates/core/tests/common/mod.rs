#![allow(dead_code)]

use std::sync::Arc;

use scribe_core::asr::{AsrBackendDescriptor, AsrGateway, VocabularyLexicon};
use scribe_core::domain::{Role, Timestamp, UserId, UserProfile};
use scribe_core::llm::{LlmBackendDescriptor, LlmGateway};
use scribe_core::retry::RetryPolicy;
use scribe_core::{Orchestrator, OrchestratorConfig, Store};

pub const ENCOUNTER: &str = "Patient reports chest pain since this morning radiating to the left arm.\n\
Denies shortness of breath. History of hypertension.\n\
Plan troponin and ECG, reassess in two hours.";

pub fn fast_retry() -> RetryPolicy {
    RetryPolicy { max_retries: 2, base_delay_s: 0.0, factor: 2.0 }
}

pub struct Harness {
    pub dir: tempfile::TempDir,
    pub orch: Arc<Orchestrator>,
    pub clinician: UserId,
}

pub fn orchestrator_at(path: &std::path::Path, lexicon: VocabularyLexicon, default_asr: &str) -> Arc<Orchestrator> {
    let store = Arc::new(Store::open(path).unwrap());
    let mut asr = AsrBackendDescriptor::mock("mock-asr");
    asr.fallback_text = Some(ENCOUNTER.into());
    let silent = AsrBackendDescriptor::mock("mute-asr");
    let asr = AsrGateway::new(vec![asr, silent], fast_retry()).unwrap();
    let llm = LlmGateway::new(vec![LlmBackendDescriptor::mock("mock-llm")], fast_retry()).unwrap();
    let mut config = OrchestratorConfig::new(default_asr, "mock-llm");
    config.lexicon = lexicon;
    Arc::new(Orchestrator::new(store, Arc::new(asr), Arc::new(llm), config).unwrap())
}

pub fn harness() -> Harness {
    harness_with(VocabularyLexicon::default())
}

pub fn harness_with(lexicon: VocabularyLexicon) -> Harness {
    harness_using(lexicon, "mock-asr")
}

/// `mute-asr` rejects every recording.
pub fn harness_using(lexicon: VocabularyLexicon, default_asr: &str) -> Harness {
    let dir = tempfile::tempdir().unwrap();
    let orch = orchestrator_at(dir.path(), lexicon, default_asr);
    let clinician = add_user(&orch, "dr-lee", Role::Clinician);
    Harness { dir, orch, clinician }
}

pub fn add_user(orch: &Orchestrator, id: &str, role: Role) -> UserId {
    orch.ensure_user(UserProfile {
        id: UserId::from(id),
        display_name: id.into(),
        role,
        created_at: Timestamp::now(),
    })
    .unwrap()
    .id
}
