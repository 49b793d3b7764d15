mod common;

use std::collections::HashSet;
use std::sync::Arc;

use common::{add_user, harness, harness_using, harness_with, orchestrator_at, Harness};
use rand::{Rng, SeedableRng};
use scribe_core::asr::VocabularyLexicon;
use scribe_core::audio::silent_wav;
use scribe_core::domain::{
    EntityKind, IllegalTransition, Note, NoteSection, NoteStatus, Recording, RecordingStatus,
    Role, Session, SessionStatus, Transcript,
};
use scribe_core::pipeline::{actions, JobState};
use scribe_core::store::ChainStatus;
use scribe_core::template::{builtin_by_name, TemplateSection, FULL_VISIT, NARRATIVE};
use scribe_core::{NoteRequest, ScribeError};

fn full_visit() -> NoteRequest {
    NoteRequest::new(builtin_by_name(FULL_VISIT).unwrap().id)
}

async fn transcribed_session(h: &Harness, seed: i16) -> (Session, Recording, Transcript) {
    let session = h.orch.create_session(&h.clinician, None).unwrap();
    let (recording, job) = h
        .orch
        .attach_recording(h.clinician.as_str(), &session.id, &silent_wav(3.0, 8000, seed), Some("audio/wav"))
        .unwrap();
    let transcript = h.orch.run_transcription(&job.id).await.unwrap();
    let recording = h.orch.store().load(&recording.id).unwrap();
    (session, recording, transcript)
}

async fn draft(h: &Harness) -> Note {
    let (session, _, _) = transcribed_session(h, 1).await;
    h.orch.generate_note(h.clinician.as_str(), &session.id, &full_visit()).await.unwrap()
}

#[tokio::test]
async fn happy_path_produces_a_full_visit_draft() {
    let h = harness();
    let (session, recording, transcript) = transcribed_session(&h, 1).await;
    assert_eq!(recording.status, RecordingStatus::Transcribed);
    assert_eq!(recording.transcript_id.as_ref(), Some(&transcript.id));
    assert_eq!(transcript.segments.len(), 3);
    assert!(transcript.segments.last().unwrap().end_s <= recording.duration_s + 0.5);
    assert_eq!(
        h.orch.session_detail(&session.id).unwrap().status,
        SessionStatus::Transcribed
    );

    let note = h.orch.generate_note(h.clinician.as_str(), &session.id, &full_visit()).await.unwrap();
    assert_eq!(note.status, NoteStatus::Draft);
    let titles: Vec<_> = note.sections.iter().map(|s| s.title.clone()).collect();
    assert_eq!(titles, builtin_by_name(FULL_VISIT).unwrap().section_titles());
    assert!(note.sections.iter().all(|s| s.body.starts_with("Patient reports chest pain")));
    assert!(note.token_usage.total() > 0);

    let detail = h.orch.session_detail(&session.id).unwrap();
    assert_eq!(detail.status, SessionStatus::NoteReady);
    assert!((detail.audio_seconds - 3.0).abs() < 1e-9);
    assert_eq!(h.orch.store().verify_audit_chain().unwrap(), ChainStatus::Ok);
}

#[tokio::test]
async fn generation_writes_exactly_one_note_event() {
    let h = harness();
    let note = draft(&h).await;
    let events: Vec<_> = h
        .orch
        .store()
        .audit()
        .events()
        .unwrap()
        .into_iter()
        .filter(|e| e.entity_kind == "note" && e.entity_id == note.id.as_str())
        .collect();
    assert_eq!(events.len(), 1);
    assert_eq!(events[0].action, actions::NOTE_GENERATED);
    assert_eq!(events[0].payload["content_digest"], note.content_digest());
}

#[tokio::test]
async fn repeated_runs_are_byte_identical() {
    let mut outputs = HashSet::new();
    for _ in 0..5 {
        let h = harness();
        let note = draft(&h).await;
        outputs.insert(serde_json::to_vec(&note.sections).unwrap());
    }
    assert_eq!(outputs.len(), 1);
}

#[tokio::test]
async fn lexicon_corrections_reach_the_note() {
    let lexicon = VocabularyLexicon::from_pairs([("troponin", "Troponin-I"), ("ecg", "ECG")]).unwrap();
    let h = harness_with(lexicon);
    let (_, _, transcript) = transcribed_session(&h, 1).await;
    assert!(transcript.full_text.contains("Plan Troponin-I and ECG"));
}

#[test]
fn thousand_sessions_get_distinct_ids() {
    let h = harness();
    let ids: HashSet<_> = (0..1000)
        .map(|_| h.orch.create_session(&h.clinician, None).unwrap().id)
        .collect();
    assert_eq!(ids.len(), 1000);
}

#[test]
fn identical_uploads_share_one_blob() {
    let h = harness();
    let s = h.orch.create_session(&h.clinician, None).unwrap();
    let audio = silent_wav(2.0, 16_000, 4);
    let (a, _) = h.orch.attach_recording("dr-lee", &s.id, &audio, None).unwrap();
    let (b, _) = h.orch.attach_recording("dr-lee", &s.id, &audio, None).unwrap();
    assert_ne!(a.id, b.id);
    assert_eq!(a.blob_ref, b.blob_ref);
    assert_eq!(h.orch.store().blob_count().unwrap(), 1);
    assert_eq!(h.orch.store().load::<Session>(&s.id).unwrap().recording_ids, vec![a.id, b.id]);
}

#[test]
fn upload_errors() {
    let h = harness();
    let s = h.orch.create_session(&h.clinician, None).unwrap();
    assert!(matches!(h.orch.attach_recording("dr-lee", &s.id, &[], None), Err(ScribeError::EmptyAudio)));
    assert!(matches!(
        h.orch.attach_recording("dr-lee", &s.id, b"ID3\x04fake mp3", None),
        Err(ScribeError::UnsupportedMedia(_))
    ));
    assert!(matches!(
        h.orch.attach_recording("dr-lee", &s.id, &silent_wav(1.0, 8000, 0), Some("audio/mpeg")),
        Err(ScribeError::UnsupportedMedia(_))
    ));
    assert!(matches!(
        h.orch.attach_recording("dr-lee", &s.id, &silent_wav(0.0, 8000, 0), None),
        Err(ScribeError::EmptyAudio)
    ));
    assert!(matches!(
        h.orch.attach_recording("dr-lee", &"missing".into(), &silent_wav(1.0, 8000, 0), None),
        Err(ScribeError::NotFound { .. })
    ));
    h.orch.archive_session("dr-lee", &s.id).unwrap();
    assert!(matches!(
        h.orch.attach_recording("dr-lee", &s.id, &silent_wav(1.0, 8000, 0), None),
        Err(ScribeError::SessionArchived(_))
    ));
    assert_eq!(h.orch.store().blob_count().unwrap(), 0);
}

#[test]
fn unknown_owner_is_rejected() {
    let h = harness();
    assert!(matches!(h.orch.create_session(&"ghost".into(), None), Err(ScribeError::UnknownUser(_))));
    assert!(matches!(
        h.orch.create_session(&h.clinician, Some("nowhere".into())),
        Err(ScribeError::UnknownFacility(_))
    ));
}

#[tokio::test]
async fn concurrent_transcriptions_in_one_session() {
    let h = harness();
    let s = h.orch.create_session(&h.clinician, None).unwrap();
    let uploads: Vec<_> = (0..10)
        .map(|i| {
            let orch = Arc::clone(&h.orch);
            let sid = s.id.clone();
            std::thread::spawn(move || orch.attach_recording("dr-lee", &sid, &silent_wav(1.0, 8000, i), None).unwrap())
        })
        .collect::<Vec<_>>()
        .into_iter()
        .map(|t| t.join().unwrap())
        .collect();
    let runs = uploads.iter().map(|(_, job)| {
        let orch = Arc::clone(&h.orch);
        let id = job.id.clone();
        tokio::spawn(async move { orch.run_transcription(&id).await })
    });
    for r in futures_join(runs.collect()).await {
        r.unwrap();
    }
    let session: Session = h.orch.store().load(&s.id).unwrap();
    assert_eq!(session.recording_ids.len(), 10);
    for rid in &session.recording_ids {
        let r: Recording = h.orch.store().load(rid).unwrap();
        assert_eq!(r.status, RecordingStatus::Transcribed);
        h.orch.store().load::<Transcript>(r.transcript_id.as_ref().unwrap()).unwrap();
    }
    assert_eq!(h.orch.store().list::<Transcript>().unwrap().len(), 10);
}

async fn futures_join<T>(handles: Vec<tokio::task::JoinHandle<T>>) -> Vec<T> {
    let mut out = Vec::with_capacity(handles.len());
    for h in handles {
        out.push(h.await.unwrap());
    }
    out
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn worker_pool_drains_two_hundred_jobs() {
    let h = harness();
    let pool = h.orch.start();
    assert_eq!(pool.len(), 8);
    let s = h.orch.create_session(&h.clinician, None).unwrap();
    let jobs: Vec<_> = (0..200)
        .map(|i| h.orch.attach_recording("dr-lee", &s.id, &silent_wav(0.5, 8000, i), None).unwrap().1)
        .collect();
    for job in &jobs {
        let done = tokio::time::timeout(std::time::Duration::from_secs(60), h.orch.wait_for_job(&job.id))
            .await
            .expect("job finished in time")
            .unwrap();
        assert_eq!(done.state, JobState::Done);
        assert_eq!(done.attempt, 1);
    }
    pool.shutdown().await;
    assert_eq!(h.orch.store().list::<Transcript>().unwrap().len(), 200);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn submitted_notes_are_generated_by_workers() {
    let h = harness();
    let (session, _, _) = transcribed_session(&h, 2).await;
    let pool = h.orch.start();
    let (pending, job) = h.orch.submit_note("dr-lee", &session.id, &full_visit()).unwrap();
    assert_eq!(pending.status, NoteStatus::Generating);
    assert_eq!(h.orch.session_detail(&session.id).unwrap().status, SessionStatus::Transcribed);
    h.orch.wait_for_job(&job.id).await.unwrap();
    pool.shutdown().await;
    let note: Note = h.orch.store().load(&pending.id).unwrap();
    assert_eq!(note.status, NoteStatus::Draft);
}

#[tokio::test]
async fn rejected_audio_fails_the_recording_and_job() {
    let h = harness_using(VocabularyLexicon::default(), "mute-asr");
    let s = h.orch.create_session(&h.clinician, None).unwrap();
    let (r, job) = h.orch.attach_recording("dr-lee", &s.id, &silent_wav(1.0, 8000, 0), None).unwrap();
    let err = h.orch.run_transcription(&job.id).await.unwrap_err();
    assert!(matches!(err, ScribeError::Asr(_)), "{err}");
    let r: Recording = h.orch.store().load(&r.id).unwrap();
    assert_eq!(r.status, RecordingStatus::Failed);
    let job = h.orch.store().load::<scribe_core::pipeline::Job>(&job.id).unwrap();
    assert_eq!(job.state, JobState::Failed);
    assert_eq!(job.attempt, 1);
    assert_eq!(h.orch.session_detail(&s.id).unwrap().status, SessionStatus::Error);
    // a job runs once
    assert!(h.orch.run_transcription(&job.id).await.is_err());
}

#[tokio::test]
async fn note_requests_need_transcripts_from_the_session() {
    let h = harness();
    let s = h.orch.create_session(&h.clinician, None).unwrap();
    h.orch.attach_recording("dr-lee", &s.id, &silent_wav(1.0, 8000, 0), None).unwrap();
    let err = h.orch.generate_note("dr-lee", &s.id, &full_visit()).await.unwrap_err();
    assert!(matches!(err, ScribeError::TranscriptNotReady(_)));

    let (other, _, foreign) = transcribed_session(&h, 3).await;
    let mut req = full_visit();
    req.transcript_ids = vec![foreign.id.clone()];
    let err = h.orch.generate_note("dr-lee", &s.id, &req).await.unwrap_err();
    assert!(matches!(err, ScribeError::TranscriptNotReady(_)));

    let err = h
        .orch
        .generate_note("dr-lee", &other.id, &NoteRequest::new("not-a-template".into()))
        .await
        .unwrap_err();
    assert!(matches!(err, ScribeError::NotFound { .. }));
    assert!(h.orch.store().load::<Session>(&s.id).unwrap().note_ids.is_empty());
}

#[tokio::test]
async fn regeneration_adds_a_second_note() {
    let h = harness();
    let (session, _, _) = transcribed_session(&h, 1).await;
    let first = h.orch.generate_note("dr-lee", &session.id, &full_visit()).await.unwrap();
    let narrative = NoteRequest::new(builtin_by_name(NARRATIVE).unwrap().id);
    let second = h.orch.generate_note("dr-lee", &session.id, &narrative).await.unwrap();
    assert_ne!(first.id, second.id);
    assert_eq!(h.orch.store().load::<Session>(&session.id).unwrap().note_ids, vec![first.id, second.id]);
}

#[tokio::test]
async fn custom_templates_drive_generation() {
    let h = harness();
    let t = h
        .orch
        .create_template(
            &h.clinician,
            "Sprain clinic",
            "",
            vec![TemplateSection::new("Mechanism", "How it happened."), TemplateSection::new("Plan", "")],
        )
        .unwrap();
    let (session, _, _) = transcribed_session(&h, 1).await;
    let note = h.orch.generate_note("dr-lee", &session.id, &NoteRequest::new(t.id.clone())).await.unwrap();
    assert_eq!(note.sections.iter().map(|s| s.title.as_str()).collect::<Vec<_>>(), ["Mechanism", "Plan"]);

    let bad = h.orch.create_template(&h.clinician, "", "", vec![]).unwrap_err();
    assert!(matches!(bad, ScribeError::TemplateInvalid(v) if v.len() >= 2));

    let other = add_user(&h.orch, "dr-ng", Role::Clinician);
    let admin = add_user(&h.orch, "admin", Role::Admin);
    let visible = |u| {
        let profile = h.orch.store().load(&u).unwrap();
        h.orch.list_templates(&profile).unwrap().into_iter().any(|x| x.id == t.id)
    };
    assert!(visible(h.clinician.clone()));
    assert!(!visible(other));
    assert!(visible(admin));
}

fn bodies(note: &Note, text: &str) -> Vec<NoteSection> {
    note.sections.iter().map(|s| NoteSection::new(s.title.clone(), text)).collect()
}

#[tokio::test]
async fn edits_then_finalize_then_immutable() {
    let h = harness();
    let note = draft(&h).await;
    let edited = h.orch.edit_note("dr-lee", &note.id, bodies(&note, "first"), None).unwrap();
    assert_eq!(edited.status, NoteStatus::Edited);
    assert!(edited.edited_at.is_some());
    let again = h
        .orch
        .edit_note("dr-lee", &note.id, bodies(&note, "second"), Some(&edited.content_digest()))
        .unwrap();
    assert_eq!(again.status, NoteStatus::Edited);

    let stale = h.orch.edit_note("dr-lee", &note.id, bodies(&note, "third"), Some(&edited.content_digest()));
    assert!(matches!(stale, Err(ScribeError::VersionConflict)));

    let mut wrong = bodies(&note, "x");
    wrong.swap(0, 1);
    assert!(matches!(h.orch.edit_note("dr-lee", &note.id, wrong, None), Err(ScribeError::SectionMismatch(_))));
    let mut short = bodies(&note, "x");
    short.pop();
    assert!(matches!(h.orch.edit_note("dr-lee", &note.id, short, None), Err(ScribeError::SectionMismatch(_))));

    let finalized = h.orch.finalize_note("dr-lee", &note.id).unwrap();
    assert_eq!(finalized.status, NoteStatus::Finalized);
    assert_eq!(finalized.sections, again.sections);
    assert!(matches!(
        h.orch.edit_note("dr-lee", &note.id, bodies(&note, "late"), None),
        Err(ScribeError::IllegalTransition(IllegalTransition { entity: EntityKind::Note, .. }))
    ));
    assert!(matches!(h.orch.finalize_note("dr-lee", &note.id), Err(ScribeError::IllegalTransition(_))));

    // replaying note events gives the status sequence
    let statuses: Vec<String> = h
        .orch
        .store()
        .audit()
        .events()
        .unwrap()
        .into_iter()
        .filter(|e| e.entity_kind == "note" && e.entity_id == note.id.as_str())
        .map(|e| e.payload["status"].as_str().unwrap().to_owned())
        .collect();
    assert_eq!(statuses, ["draft", "edited", "edited", "finalized"]);
    assert_eq!(h.orch.store().verify_audit_chain().unwrap(), ChainStatus::Ok);
}

#[tokio::test]
async fn finalized_notes_survive_random_operation_sequences() {
    let h = harness();
    let template = draft(&h).await;
    let mut rng = rand::rngs::StdRng::seed_from_u64(0x5eed);
    for round in 0..1000 {
        // fresh draft per sequence, stored directly to keep the run short
        let mut note = template.clone();
        note.id = scribe_core::domain::NoteId::generate();
        h.orch.store().save(&note).unwrap();
        let mut frozen: Option<Note> = None;
        for _ in 0..rng.gen_range(1..8) {
            let op = rng.gen_range(0..4);
            let result = match op {
                0 | 1 => h.orch.edit_note("dr-lee", &note.id, bodies(&note, &format!("r{round}-{}", rng.gen::<u32>())), None),
                2 => h.orch.finalize_note("dr-lee", &note.id),
                _ => {
                    let mut s = bodies(&note, "bad");
                    s.reverse();
                    h.orch.edit_note("dr-lee", &note.id, s, None)
                }
            };
            if let Some(f) = &frozen {
                assert!(matches!(result, Err(ScribeError::IllegalTransition(_))), "op {op} on finalized note");
                assert_eq!(&h.orch.store().load::<Note>(&note.id).unwrap(), f);
            } else if let Ok(n) = &result {
                if n.status == NoteStatus::Finalized {
                    frozen = Some(n.clone());
                }
            }
        }
    }
    assert_eq!(h.orch.store().verify_audit_chain().unwrap(), ChainStatus::Ok);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn recovery_requeues_interrupted_jobs() {
    let dir = tempfile::tempdir().unwrap();
    let (queued, running) = {
        let orch = orchestrator_at(dir.path(), VocabularyLexicon::default(), "mock-asr");
        let user = add_user(&orch, "dr-lee", Role::Clinician);
        let s = orch.create_session(&user, None).unwrap();
        let (_, queued) = orch.attach_recording("dr-lee", &s.id, &silent_wav(1.0, 8000, 1), None).unwrap();
        let (r, running) = orch.attach_recording("dr-lee", &s.id, &silent_wav(1.0, 8000, 2), None).unwrap();
        // as if the process died mid-transcription
        let store = orch.store();
        store
            .update::<scribe_core::pipeline::Job, _, ScribeError>(&running.id, |j| {
                j.state = JobState::Running;
                Ok(())
            })
            .unwrap();
        store
            .update::<Recording, _, ScribeError>(&r.id, |r| {
                r.status = RecordingStatus::Transcribing;
                Ok(())
            })
            .unwrap();
        (queued, running)
    };
    let orch = orchestrator_at(dir.path(), VocabularyLexicon::default(), "mock-asr");
    assert_eq!(orch.recover().unwrap(), 2);
    let pool = orch.start();
    for id in [&queued.id, &running.id] {
        assert_eq!(orch.wait_for_job(id).await.unwrap().state, JobState::Done);
    }
    pool.shutdown().await;
    assert_eq!(orch.recover().unwrap(), 0);
    assert_eq!(orch.store().verify_audit_chain().unwrap(), ChainStatus::Ok);
}

#[test]
fn archiving_is_idempotent_and_audited_once() {
    let h = harness();
    let s = h.orch.create_session(&h.clinician, None).unwrap();
    assert!(h.orch.archive_session("dr-lee", &s.id).unwrap().archived);
    assert!(h.orch.archive_session("dr-lee", &s.id).unwrap().archived);
    let archived = h
        .orch
        .store()
        .audit()
        .events()
        .unwrap()
        .into_iter()
        .filter(|e| e.action == actions::SESSION_ARCHIVED)
        .count();
    assert_eq!(archived, 1);
}
