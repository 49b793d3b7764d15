use std::sync::OnceLock;

use super::{NoteTemplate, TemplateKind, TemplateSection};
use crate::domain::{TemplateId, Timestamp};
use crate::store::digest;

pub const FULL_VISIT: &str = "Full Visit";
pub const NARRATIVE: &str = "Narrative";
pub const HANDOVER: &str = "Handover";

// 2024-11-01T00:00:00Z
const BUILTIN_CREATED_AT_MS: i64 = 1_730_419_200_000;

const PREAMBLE: &str = "You are a clinical documentation assistant working with an emergency \
physician. Draft a note from the encounter transcript for the physician to review. Use only \
information stated in the transcript or the supplied context; do not invent findings, doses \
or results. Where the transcript has nothing relevant for a section, write \"Not discussed.\" \
Use concise clinical language and standard abbreviations.";

/// Stable id: the first 128 bits of SHA-256 over a fixed slug.
fn builtin_id(slug: &str) -> TemplateId {
    let d = digest(format!("builtin-template:{slug}").as_bytes());
    TemplateId::from(hex::encode(&d[..16]))
}

fn build(slug: &str, name: &str, sections: &[(&str, &str)]) -> NoteTemplate {
    NoteTemplate {
        id: builtin_id(slug),
        name: name.to_owned(),
        kind: TemplateKind::Builtin,
        owner_id: None,
        sections: sections.iter().map(|(t, i)| TemplateSection::new(*t, *i)).collect(),
        preamble: PREAMBLE.to_owned(),
        created_at: Timestamp::from_millis(BUILTIN_CREATED_AT_MS),
    }
}

/// The shipped templates. Their section lists are illustrative starting
/// points; institutions are expected to add their own.
pub fn builtin_templates() -> Vec<NoteTemplate> {
    static BUILTINS: OnceLock<Vec<NoteTemplate>> = OnceLock::new();
    BUILTINS
        .get_or_init(|| {
            vec![
                build(
                    "full-visit",
                    FULL_VISIT,
                    &[
                        ("Chief Complaint", "The main reason for the visit in one line."),
                        (
                            "History of Present Illness",
                            "Onset, course, character and associated symptoms of the presenting problem.",
                        ),
                        (
                            "Past Medical History",
                            "Relevant conditions, surgeries, medications and allergies mentioned.",
                        ),
                        ("Physical Exam", "Vital signs and examination findings that were stated aloud."),
                        ("Investigations", "Bloodwork, imaging and other tests ordered or resulted."),
                        ("Assessment and Plan", "Working diagnosis, differential, treatment and follow-up."),
                        ("Disposition", "Discharge, admission or transfer and instructions given."),
                    ],
                ),
                build(
                    "narrative",
                    NARRATIVE,
                    &[
                        ("Encounter Summary", "Two or three sentences on who the patient is and why they came in."),
                        (
                            "Clinical Narrative",
                            "A chronological prose account of history, findings and treatment during the visit.",
                        ),
                        ("Impression and Plan", "The clinical impression and the agreed next steps."),
                    ],
                ),
                build(
                    "handover",
                    HANDOVER,
                    &[
                        ("Situation", "Current status and the reason the patient is in the department."),
                        ("Background", "Pertinent history and what has happened so far."),
                        ("Assessment", "The handing-over physician's clinical assessment and concerns."),
                        ("Recommendations", "What the receiving physician should do or watch for."),
                        ("Outstanding Tasks", "Pending results, consults and reassessments with timing."),
                    ],
                ),
            ]
        })
        .clone()
}

pub fn builtin_template(id: &TemplateId) -> Option<NoteTemplate> {
    builtin_templates().into_iter().find(|t| &t.id == id)
}

pub fn builtin_by_name(name: &str) -> Option<NoteTemplate> {
    builtin_templates().into_iter().find(|t| t.name == name)
}

pub fn is_builtin_id(id: &TemplateId) -> bool {
    builtin_templates().iter().any(|t| &t.id == id)
}
