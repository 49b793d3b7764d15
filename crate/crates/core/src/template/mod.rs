//! Note templates: schema, the three builtins, validation, prompt rendering
//! and parsing of model output back into sections.

mod builtin;
mod prompt;

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::domain::{Entity, EntityKind, InvariantViolation, TemplateId, Timestamp, UserId};

pub use builtin::{builtin_by_name, builtin_template, builtin_templates, is_builtin_id, FULL_VISIT, HANDOVER, NARRATIVE};
pub use prompt::{parse_sections, render_prompt, render_sections, OUTPUT_CONTRACT};

pub const MAX_NAME_CHARS: usize = 120;
pub const MAX_SECTIONS: usize = 40;
pub const MAX_INSTRUCTION_CHARS: usize = 4000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateKind {
    Builtin,
    Custom,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemplateSection {
    pub title: String,
    pub instruction_text: String,
}

impl TemplateSection {
    pub fn new(title: impl Into<String>, instruction_text: impl Into<String>) -> Self {
        Self { title: title.into(), instruction_text: instruction_text.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoteTemplate {
    pub id: TemplateId,
    pub name: String,
    pub kind: TemplateKind,
    pub owner_id: Option<UserId>,
    pub sections: Vec<TemplateSection>,
    pub preamble: String,
    pub created_at: Timestamp,
}

impl NoteTemplate {
    pub fn custom(
        owner: UserId,
        name: impl Into<String>,
        preamble: impl Into<String>,
        sections: Vec<TemplateSection>,
    ) -> Self {
        Self {
            id: TemplateId::generate(),
            name: name.into(),
            kind: TemplateKind::Custom,
            owner_id: Some(owner),
            sections,
            preamble: preamble.into(),
            created_at: Timestamp::now(),
        }
    }

    pub fn section_titles(&self) -> Vec<String> {
        self.sections.iter().map(|s| s.title.clone()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationCode {
    EmptyName,
    NameTooLong,
    EmptySections,
    TooManySections,
    EmptySectionTitle,
    InvalidSectionTitle,
    DuplicateSectionTitle,
    InstructionTooLong,
    PreambleTooLong,
    CustomWithoutOwner,
    BuiltinWithOwner,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub code: ViolationCode,
    pub field: String,
    pub message: String,
}

impl Violation {
    fn new(code: ViolationCode, field: impl Into<String>, message: impl Into<String>) -> Self {
        Self { code, field: field.into(), message: message.into() }
    }
}

/// Every rule the candidate breaks; empty means valid.
///
/// Titles become line-anchored `## <title>` markers, so they must be a single
/// trimmed line and unique ignoring case.
pub fn validate_template(candidate: &NoteTemplate) -> Vec<Violation> {
    use ViolationCode as C;
    let mut out = Vec::new();
    if candidate.name.trim().is_empty() {
        out.push(Violation::new(C::EmptyName, "name", "name must not be empty"));
    }
    if candidate.name.chars().count() > MAX_NAME_CHARS {
        out.push(Violation::new(
            C::NameTooLong,
            "name",
            format!("name exceeds {MAX_NAME_CHARS} characters"),
        ));
    }
    if candidate.sections.is_empty() {
        out.push(Violation::new(C::EmptySections, "sections", "at least one section is required"));
    }
    if candidate.sections.len() > MAX_SECTIONS {
        out.push(Violation::new(
            C::TooManySections,
            "sections",
            format!("at most {MAX_SECTIONS} sections are allowed"),
        ));
    }
    let mut seen = HashSet::new();
    for (i, section) in candidate.sections.iter().enumerate() {
        let field = format!("sections[{i}].title");
        let title = section.title.as_str();
        if title.trim().is_empty() {
            out.push(Violation::new(C::EmptySectionTitle, &field, "section title must not be empty"));
        } else if title != title.trim() || title.contains(['\n', '\r']) {
            out.push(Violation::new(
                C::InvalidSectionTitle,
                &field,
                "section title must be a single line without surrounding whitespace",
            ));
        }
        if !title.trim().is_empty() && !seen.insert(title.trim().to_lowercase()) {
            out.push(Violation::new(
                C::DuplicateSectionTitle,
                &field,
                format!("section title `{title}` is used more than once"),
            ));
        }
        if section.instruction_text.chars().count() > MAX_INSTRUCTION_CHARS {
            out.push(Violation::new(
                C::InstructionTooLong,
                format!("sections[{i}].instruction_text"),
                format!("instruction exceeds {MAX_INSTRUCTION_CHARS} characters"),
            ));
        }
    }
    if candidate.preamble.chars().count() > MAX_INSTRUCTION_CHARS {
        out.push(Violation::new(
            C::PreambleTooLong,
            "preamble",
            format!("preamble exceeds {MAX_INSTRUCTION_CHARS} characters"),
        ));
    }
    match (candidate.kind, &candidate.owner_id) {
        (TemplateKind::Custom, None) => out.push(Violation::new(
            C::CustomWithoutOwner,
            "owner_id",
            "custom templates must have an owner",
        )),
        (TemplateKind::Builtin, Some(_)) => out.push(Violation::new(
            C::BuiltinWithOwner,
            "owner_id",
            "builtin templates are not owned by a user",
        )),
        _ => {}
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TemplateError {
    #[error("every transcript is empty")]
    EmptyTranscript,
    #[error("model output does not follow the section contract: {0}")]
    MalformedOutput(String),
}

impl Entity for NoteTemplate {
    const KIND: EntityKind = EntityKind::Template;
    type Id = TemplateId;

    fn id(&self) -> &TemplateId {
        &self.id
    }

    fn validate(&self) -> Result<(), InvariantViolation> {
        match validate_template(self).first() {
            None => Ok(()),
            Some(v) => Err(InvariantViolation::new(format!("{}: {}", v.field, v.message))),
        }
    }
}
