//! Post-recognition terminology correction.
//!
//! Matching is whole-token and case-insensitive. A token is a maximal run
//! of alphanumeric characters; a surface form may span several tokens and
//! the separators between them must match exactly (ignoring case). At each
//! token start the longest matching surface form wins.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::domain::{Segment, Transcript};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LexiconEntry {
    pub surface_form: String,
    pub canonical_form: String,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LexiconError {
    #[error("lexicon entry {0} has an empty surface form")]
    EmptySurface(usize),
    #[error("surface form `{0}` must start and end with a letter or digit")]
    NotTokenAligned(String),
    #[error("surface form `{0}` appears more than once")]
    DuplicateSurface(String),
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct VocabularyLexicon {
    entries: Vec<LexiconEntry>,
    #[serde(skip)]
    by_length: Vec<(Vec<char>, String)>,
}

impl<'de> Deserialize<'de> for VocabularyLexicon {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            entries: Vec<LexiconEntry>,
        }
        let raw = Raw::deserialize(d)?;
        Self::new(raw.entries).map_err(serde::de::Error::custom)
    }
}

fn fold(c: char) -> impl Iterator<Item = char> {
    c.to_lowercase()
}

impl VocabularyLexicon {
    pub fn new(entries: Vec<LexiconEntry>) -> Result<Self, LexiconError> {
        let mut seen = HashSet::new();
        for (i, e) in entries.iter().enumerate() {
            if e.surface_form.trim().is_empty() {
                return Err(LexiconError::EmptySurface(i));
            }
            let aligned = |c: Option<char>| c.is_some_and(char::is_alphanumeric);
            if !aligned(e.surface_form.chars().next()) || !aligned(e.surface_form.chars().last()) {
                return Err(LexiconError::NotTokenAligned(e.surface_form.clone()));
            }
            if !seen.insert(e.surface_form.to_lowercase()) {
                return Err(LexiconError::DuplicateSurface(e.surface_form.clone()));
            }
        }
        let mut by_length: Vec<(Vec<char>, String)> = entries
            .iter()
            .map(|e| (e.surface_form.chars().collect(), e.canonical_form.clone()))
            .collect();
        by_length.sort_by_key(|e| std::cmp::Reverse(e.0.len()));
        Ok(Self { entries, by_length })
    }

    pub fn from_pairs<S: Into<String>>(pairs: impl IntoIterator<Item = (S, S)>) -> Result<Self, LexiconError> {
        Self::new(
            pairs
                .into_iter()
                .map(|(s, c)| LexiconEntry { surface_form: s.into(), canonical_form: c.into() })
                .collect(),
        )
    }

    pub fn entries(&self) -> &[LexiconEntry] {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Applies the substitutions to one piece of text.
    pub fn apply_text(&self, text: &str) -> String {
        if self.by_length.is_empty() {
            return text.to_owned();
        }
        let chars: Vec<char> = text.chars().collect();
        let mut out = String::with_capacity(text.len());
        let mut i = 0;
        while i < chars.len() {
            let at_token_start = chars[i].is_alphanumeric() && (i == 0 || !chars[i - 1].is_alphanumeric());
            if at_token_start {
                if let Some((len, canonical)) = self.match_at(&chars, i) {
                    out.push_str(canonical);
                    i += len;
                    continue;
                }
                while i < chars.len() && chars[i].is_alphanumeric() {
                    out.push(chars[i]);
                    i += 1;
                }
            } else {
                out.push(chars[i]);
                i += 1;
            }
        }
        out
    }

    fn match_at(&self, chars: &[char], start: usize) -> Option<(usize, &str)> {
        self.by_length.iter().find_map(|(surface, canonical)| {
            let end = start + surface.len();
            if end > chars.len() {
                return None;
            }
            if end < chars.len() && chars[end].is_alphanumeric() {
                return None;
            }
            let equal = chars[start..end]
                .iter()
                .zip(surface)
                .all(|(a, b)| fold(*a).eq(fold(*b)));
            equal.then_some((surface.len(), canonical.as_str()))
        })
    }
}

/// Rewrites every segment and recomputes `full_text`; nothing else changes.
pub fn apply_lexicon(transcript: &Transcript, lexicon: &VocabularyLexicon) -> Transcript {
    let segments: Vec<Segment> = transcript
        .segments
        .iter()
        .map(|s| Segment { text: lexicon.apply_text(&s.text), ..s.clone() })
        .collect();
    Transcript {
        full_text: Transcript::join_segments(&segments),
        segments,
        ..transcript.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn replaces_whole_tokens_case_insensitively() {
        let lex = VocabularyLexicon::from_pairs([("wabaska", "Wabasca")]).unwrap();
        assert_eq!(lex.apply_text("seen at wabaska clinic"), "seen at Wabasca clinic");
        assert_eq!(lex.apply_text("WABASKA."), "Wabasca.");
        assert_eq!(lex.apply_text("wabaskan"), "wabaskan");
        assert_eq!(lex.apply_text("xwabaska"), "xwabaska");
    }

    #[test]
    fn longest_surface_form_wins() {
        let lex = VocabularyLexicon::from_pairs([("fort mac", "Fort McMurray"), ("fort", "Ft.")]).unwrap();
        assert_eq!(lex.apply_text("flown from fort mac today"), "flown from Fort McMurray today");
        assert_eq!(lex.apply_text("the fort is near"), "the Ft. is near");
        assert_eq!(lex.apply_text("fort macleod"), "Ft. macleod");
    }

    #[test]
    fn validation() {
        assert_eq!(
            VocabularyLexicon::from_pairs([("", "x")]),
            Err(LexiconError::EmptySurface(0))
        );
        assert_eq!(
            VocabularyLexicon::from_pairs([("Siksika", "Siksika"), ("siksika", "Siksika")]),
            Err(LexiconError::DuplicateSurface("siksika".into()))
        );
        assert!(matches!(
            VocabularyLexicon::from_pairs([("Dr.", "Doctor")]),
            Err(LexiconError::NotTokenAligned(_))
        ));
    }

    #[test]
    fn empty_lexicon_is_identity() {
        let lex = VocabularyLexicon::default();
        assert_eq!(lex.apply_text("Anything at all!"), "Anything at all!");
    }

    #[test]
    fn deserialization_validates() {
        let ok: VocabularyLexicon =
            serde_json::from_str(r#"{"entries":[{"surface_form":"a","canonical_form":"b"}]}"#).unwrap();
        assert_eq!(ok.apply_text("a"), "b");
        assert!(serde_json::from_str::<VocabularyLexicon>(
            r#"{"entries":[{"surface_form":"a","canonical_form":"b"},{"surface_form":"A","canonical_form":"c"}]}"#
        )
        .is_err());
    }
}
