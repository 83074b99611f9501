//! Tag extraction from raw policy output.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("response contains neither a parsable <scroll> value nor an <answer>")]
pub struct MalformedResponse;

/// Which tags were well formed (opened, closed, non-empty).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagFlags {
    pub think: bool,
    pub note: bool,
    pub scroll: bool,
    pub answer: bool,
    /// The `<scroll>` content parsed as a signed integer.
    pub scroll_value: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedResponse {
    pub think: Option<String>,
    pub note: Option<String>,
    pub scroll: Option<i64>,
    pub answer: Option<String>,
    pub tag_flags: TagFlags,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Action {
    Scroll { note: String, value: i64 },
    Answer { text: String },
}

impl ParsedResponse {
    /// An answer wins over a scroll when both are present.
    pub fn action(&self) -> Result<Action, MalformedResponse> {
        if let Some(text) = &self.answer {
            return Ok(Action::Answer { text: text.clone() });
        }
        match self.scroll {
            Some(value) => Ok(Action::Scroll { note: self.note.clone().unwrap_or_default(), value }),
            None => Err(MalformedResponse),
        }
    }
}

/// Content of the first `<tag>…</tag>` pair; an opening tag without a later
/// closing tag counts as absent. Empty content also counts as absent.
fn first_tag<'a>(text: &'a str, tag: &str) -> Option<&'a str> {
    let open = format!("<{tag}>");
    let close = format!("</{tag}>");
    let start = text.find(&open)? + open.len();
    let end = text[start..].find(&close)? + start;
    let content = text[start..end].trim();
    (!content.is_empty()).then_some(content)
}

/// Signed integer in `+n`, `-n` or `n` form.
pub fn parse_scroll_value(s: &str) -> Option<i64> {
    let s = s.trim();
    let digits = s.strip_prefix(['+', '-']).unwrap_or(s);
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    let magnitude: i64 = digits.parse().ok()?;
    Some(if s.starts_with('-') { -magnitude } else { magnitude })
}

pub fn parse_response(text: &str) -> ParsedResponse {
    let think = first_tag(text, "think");
    let note = first_tag(text, "note");
    let scroll_raw = first_tag(text, "scroll");
    let answer = first_tag(text, "answer");
    let scroll = scroll_raw.and_then(parse_scroll_value);
    ParsedResponse {
        think: think.map(str::to_string),
        note: note.map(str::to_string),
        scroll,
        answer: answer.map(str::to_string),
        tag_flags: TagFlags {
            think: think.is_some(),
            note: note.is_some(),
            scroll: scroll_raw.is_some(),
            answer: answer.is_some(),
            scroll_value: scroll.is_some(),
        },
    }
}

/// Parse straight to an action.
pub fn parse_action(text: &str) -> Result<Action, MalformedResponse> {
    parse_response(text).action()
}

/// Render an action in the tag grammar; `parse_action` inverts it.
pub fn render_action(think: &str, action: &Action) -> String {
    match action {
        Action::Scroll { note, value } => {
            format!("<think>{think}</think><note>{note}</note><scroll>{value:+}</scroll>")
        }
        Action::Answer { text } => format!("<think>{think}</think><answer>{text}</answer>"),
    }
}
