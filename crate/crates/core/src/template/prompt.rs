use super::{NoteTemplate, TemplateError};
use crate::domain::{NoteSection, Transcript};
use crate::llm::PromptBundle;

/// Output format the model is told to follow; [`parse_sections`] is its
/// inverse.
pub const OUTPUT_CONTRACT: &str = "Output format: write every section as a line of the form \
`## <title>` followed by the section body on the next lines. Use each section title exactly \
as given, once, in the given order, and do not add any other `## ` headings or text before \
the first section.";

const SECTION_INTRO: &str =
    "Draft the note with the following sections, in this order. Each heading is followed by what belongs in it.";
const TRANSCRIPT_INTRO: &str = "Encounter transcripts, in recording order:";
const CONTEXT_INTRO: &str = "Additional context from the clinician:";

pub fn render_prompt(
    template: &NoteTemplate,
    transcripts: &[Transcript],
    encounter_context: Option<&str>,
) -> Result<PromptBundle, TemplateError> {
    if transcripts.iter().all(|t| t.full_text.trim().is_empty()) {
        return Err(TemplateError::EmptyTranscript);
    }

    let system_text = if template.preamble.trim().is_empty() {
        OUTPUT_CONTRACT.to_owned()
    } else {
        format!("{}\n\n{}", template.preamble.trim_end(), OUTPUT_CONTRACT)
    };

    let mut user = String::new();
    user.push_str(SECTION_INTRO);
    user.push_str("\n\n");
    for section in &template.sections {
        user.push_str("## ");
        user.push_str(&section.title);
        user.push('\n');
        if !section.instruction_text.is_empty() {
            user.push_str(&section.instruction_text);
            user.push('\n');
        }
        user.push('\n');
    }
    user.push_str(TRANSCRIPT_INTRO);
    user.push_str("\n\n");
    for (i, t) in transcripts.iter().enumerate() {
        user.push_str(&format!("<transcript index=\"{}\">\n", i + 1));
        user.push_str(&t.full_text);
        user.push_str("\n</transcript>\n\n");
    }
    if let Some(ctx) = encounter_context.filter(|c| !c.trim().is_empty()) {
        user.push_str(CONTEXT_INTRO);
        user.push('\n');
        user.push_str(ctx);
        user.push('\n');
    }

    Ok(PromptBundle {
        system_text,
        user_text: user,
        template_id: template.id.clone(),
        transcript_ids: transcripts.iter().map(|t| t.id.clone()).collect(),
        section_titles: template.section_titles(),
    })
}

fn marker_title(line: &str) -> Option<&str> {
    line.trim().strip_prefix("## ").map(str::trim)
}

/// Splits model output on `## <title>` lines.
///
/// Only lines naming one of `titles` count as markers; other `## ` lines are
/// body text. Text before the first marker is dropped.
pub fn parse_sections(raw_text: &str, titles: &[String]) -> Result<Vec<NoteSection>, TemplateError> {
    let mut sections: Vec<NoteSection> = Vec::with_capacity(titles.len());
    let mut body = String::new();
    for line in raw_text.lines() {
        let marker = marker_title(line).and_then(|t| titles.iter().position(|x| x == t));
        match marker {
            Some(pos) if pos == sections.len() => {
                if let Some(last) = sections.last_mut() {
                    last.body = body.trim().to_owned();
                }
                body.clear();
                sections.push(NoteSection::new(titles[pos].clone(), String::new()));
            }
            Some(pos) => {
                return Err(TemplateError::MalformedOutput(if pos < sections.len() {
                    format!("section `{}` appears more than once", titles[pos])
                } else {
                    format!(
                        "section `{}` appears before `{}`",
                        titles[pos],
                        titles[sections.len()]
                    )
                }));
            }
            None => {
                if !sections.is_empty() {
                    body.push_str(line);
                    body.push('\n');
                }
            }
        }
    }
    if let Some(last) = sections.last_mut() {
        last.body = body.trim().to_owned();
    }
    if sections.len() < titles.len() {
        let missing: Vec<&str> = titles[sections.len()..].iter().map(String::as_str).collect();
        return Err(TemplateError::MalformedOutput(format!(
            "missing section(s): {}",
            missing.join(", ")
        )));
    }
    Ok(sections)
}

/// Inverse of [`parse_sections`] for trimmed bodies.
pub fn render_sections(sections: &[NoteSection]) -> String {
    let mut out = String::new();
    for (i, s) in sections.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        out.push_str("## ");
        out.push_str(&s.title);
        out.push('\n');
        if !s.body.is_empty() {
            out.push_str(&s.body);
            out.push('\n');
        }
    }
    out
}
