use serde::{Deserialize, Serialize};

use crate::domain::{Entity, EntityKind, InvariantViolation, JobId, Timestamp};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobKind {
    Transcription,
    Generation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobState {
    Queued,
    Running,
    Done,
    Failed,
}

impl JobState {
    pub fn is_finished(self) -> bool {
        matches!(self, Self::Done | Self::Failed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Job {
    pub id: JobId,
    pub kind: JobKind,
    /// Recording id for transcription, note id for generation.
    pub subject_id: String,
    pub backend_id: String,
    /// Who asked for the work; worker-side audit events carry this actor.
    pub actor_id: String,
    pub attempt: u32,
    pub max_attempts: u32,
    pub state: JobState,
    pub enqueued_at: Timestamp,
    pub finished_at: Option<Timestamp>,
    pub error: Option<String>,
    /// Free-text encounter context for generation jobs.
    pub context: Option<String>,
}

impl Job {
    pub fn new(
        kind: JobKind,
        subject_id: impl Into<String>,
        backend_id: impl Into<String>,
        actor_id: impl Into<String>,
        max_attempts: u32,
    ) -> Self {
        Self {
            id: JobId::generate(),
            kind,
            subject_id: subject_id.into(),
            backend_id: backend_id.into(),
            actor_id: actor_id.into(),
            attempt: 1,
            max_attempts,
            state: JobState::Queued,
            enqueued_at: Timestamp::now(),
            finished_at: None,
            error: None,
            context: None,
        }
    }
}

impl Entity for Job {
    const KIND: EntityKind = EntityKind::Job;
    type Id = JobId;

    fn id(&self) -> &JobId {
        &self.id
    }

    fn validate(&self) -> Result<(), InvariantViolation> {
        if self.attempt == 0 || self.attempt > self.max_attempts {
            return Err(InvariantViolation::new(format!(
                "job attempt {} outside 1..={}",
                self.attempt, self.max_attempts
            )));
        }
        if self.state.is_finished() != self.finished_at.is_some() {
            return Err(InvariantViolation::new("finished_at must be set exactly when the job finished"));
        }
        Ok(())
    }
}
