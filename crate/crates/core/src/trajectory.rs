//! Reasoning-trajectory data model and the line-oriented marker parser.
//!
//! A trajectory is plain text in which sections start with a marker at column 0:
//!
//! ```text
//! BACKGROUND: <context>
//! STEP 1: <reasoning step>
//! STEP 2: <reasoning step>
//! ANSWER: <final answer>
//! ```
//!
//! A section runs from its marker to the line before the next marker. Text
//! before the first marker belongs to no section.

use serde::{Deserialize, Serialize};

use crate::keystep::KeyStepSet;

pub const BACKGROUND_MARKER: &str = "BACKGROUND:";
pub const STEP_MARKER: &str = "STEP ";
pub const ANSWER_MARKER: &str = "ANSWER:";

/// Half-open byte range `[start, end)` into a trajectory's raw text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn slice<'a>(&self, text: &'a str) -> &'a str {
        &text[self.start..self.end]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SectionKind {
    Background,
    /// `STEP <n>:` with the number as written.
    Step(u64),
    Answer,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Section {
    pub kind: SectionKind,
    pub span: Span,
    /// Offset where the section body starts (just past the marker).
    pub body_start: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    #[serde(rename = "question_id")]
    pub id: String,
    pub prompt: String,
    pub gold_answer: String,
    pub key_steps: KeyStepSet,
}

/// Parsed structure of a trajectory.
///
/// `background_span` is the first background section and `answer_span` the
/// last answer section (a restated answer supersedes earlier ones).
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedTrajectory {
    pub sections: Vec<Section>,
    pub background_span: Option<Span>,
    pub step_spans: Vec<Span>,
    pub answer_span: Option<Span>,
    pub answer_text: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub question_id: String,
    pub raw_text: String,
    pub parsed: ParsedTrajectory,
    /// Sum of per-action log-probabilities under the generating policy.
    pub log_prob: f64,
    pub truncated: bool,
    /// Action indices chosen at each slot. Empty for trajectories that were
    /// not produced by a [`crate::PolicyParams`] (e.g. scored corpora).
    pub actions: Vec<usize>,
}

impl Trajectory {
    /// Wraps externally produced text; the result carries no action record.
    pub fn from_text(question_id: impl Into<String>, raw_text: impl Into<String>) -> Self {
        let raw_text = raw_text.into();
        let parsed = parse_trajectory(&raw_text);
        Self {
            question_id: question_id.into(),
            raw_text,
            parsed,
            log_prob: 0.0,
            truncated: false,
            actions: Vec::new(),
        }
    }
}

fn marker_kind(line: &str) -> Option<(SectionKind, usize)> {
    if line.starts_with(BACKGROUND_MARKER) {
        return Some((SectionKind::Background, BACKGROUND_MARKER.len()));
    }
    if line.starts_with(ANSWER_MARKER) {
        return Some((SectionKind::Answer, ANSWER_MARKER.len()));
    }
    let rest = line.strip_prefix(STEP_MARKER)?;
    let digits = rest.bytes().take_while(u8::is_ascii_digit).count();
    if digits == 0 || rest.as_bytes().get(digits) != Some(&b':') {
        return None;
    }
    // Saturate absurdly long step numbers rather than reject the marker.
    let n = rest[..digits].parse().unwrap_or(u64::MAX);
    Some((SectionKind::Step(n), STEP_MARKER.len() + digits + 1))
}

/// Parses marker sections out of `raw_text`. Total: malformed input yields a
/// partial or empty parse.
pub fn parse_trajectory(raw_text: &str) -> ParsedTrajectory {
    // (kind, line start, body start)
    let mut starts: Vec<(SectionKind, usize, usize)> = Vec::new();
    let mut offset = 0;
    for line in raw_text.split_inclusive('\n') {
        if let Some((kind, marker_len)) = marker_kind(line) {
            starts.push((kind, offset, offset + marker_len));
        }
        offset += line.len();
    }

    let mut sections = Vec::with_capacity(starts.len());
    for (i, &(kind, start, body_start)) in starts.iter().enumerate() {
        let limit = starts.get(i + 1).map_or(raw_text.len(), |next| next.1);
        let end = start + raw_text[start..limit].trim_end_matches(['\n', '\r']).len();
        sections.push(Section {
            kind,
            span: Span { start, end },
            body_start: body_start.min(end),
        });
    }

    let background_span = sections
        .iter()
        .find(|s| s.kind == SectionKind::Background)
        .map(|s| s.span);
    let step_spans = sections
        .iter()
        .filter(|s| matches!(s.kind, SectionKind::Step(_)))
        .map(|s| s.span)
        .collect();
    let answer = sections.iter().rev().find(|s| s.kind == SectionKind::Answer);
    let answer_span = answer.map(|s| s.span);
    let answer_text = answer.map(|s| raw_text[s.body_start..s.span.end].trim().to_string());

    ParsedTrajectory {
        sections,
        background_span,
        step_spans,
        answer_span,
        answer_text,
    }
}

/// The committed final answer, if any. Comparison against the gold answer
/// (and its normalization) is the reward module's job.
pub fn extract_answer(parsed: &ParsedTrajectory) -> Option<&str> {
    parsed.answer_text.as_deref()
}
