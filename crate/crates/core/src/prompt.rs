//! Instruction templates with `{slot}` placeholders, and the parser that
//! turns free-form LLM output back into a tag list.

use std::collections::{BTreeSet, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{is_valid_name, Entity};

/// Slot that receives the candidate list in selective templates.
pub const CANDIDATES_SLOT: &str = "candidates";

/// Preamble stripping only looks this far into the output.
const PREAMBLE_WINDOW: usize = 80;

#[derive(Debug, thiserror::Error)]
pub enum PromptError {
    #[error("template error at char {pos}: {reason}")]
    Syntax { pos: usize, reason: String },
    #[error("selective template must contain {{candidates}} exactly once (found {0})")]
    CandidatesSlot(usize),
    #[error("selective tagging requires a non-empty candidate set")]
    EmptyCandidates,
    #[error("invalid parse rules: {0}")]
    Rules(String),
    #[error("reading template {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// How a list is joined when written into a prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DelimiterConvention {
    /// `a, b, c`
    #[default]
    Comma,
    /// `a、b、c`
    IdeographicEnum,
    /// `、` between two CJK neighbours, `, ` otherwise.
    Mixed,
}

pub(crate) fn is_cjk(c: char) -> bool {
    matches!(c as u32,
        0x3040..=0x30FF | 0x3400..=0x4DBF | 0x4E00..=0x9FFF | 0xAC00..=0xD7AF | 0xF900..=0xFAFF)
}

impl DelimiterConvention {
    pub fn join<S: AsRef<str>>(self, items: &[S]) -> String {
        let mut out = String::new();
        for (i, item) in items.iter().enumerate() {
            let item = item.as_ref();
            if i > 0 {
                let prev = items[i - 1].as_ref();
                out.push_str(self.separator(prev, item));
            }
            out.push_str(item);
        }
        out
    }

    fn separator(self, prev: &str, next: &str) -> &'static str {
        match self {
            DelimiterConvention::Comma => ", ",
            DelimiterConvention::IdeographicEnum => "、",
            DelimiterConvention::Mixed => {
                let cjk_pair = prev.chars().last().is_some_and(is_cjk)
                    && next.chars().next().is_some_and(is_cjk);
                if cjk_pair {
                    "、"
                } else {
                    ", "
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Segment {
    Literal(String),
    Slot(String),
}

/// A parsed instruction template.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    id: String,
    body: String,
    segments: Vec<Segment>,
    slots: BTreeSet<String>,
    pub delimiter: DelimiterConvention,
    pub language_hint: String,
}

impl PromptTemplate {
    /// Parses `body`. `{name}` is a slot; `{{` and `}}` are literal braces.
    pub fn parse(id: impl Into<String>, body: &str) -> Result<Self, PromptError> {
        let mut segments = Vec::new();
        let mut literal = String::new();
        let mut chars = body.char_indices().peekable();
        while let Some((pos, c)) = chars.next() {
            match c {
                '{' if chars.peek().map(|&(_, n)| n) == Some('{') => {
                    chars.next();
                    literal.push('{');
                }
                '}' if chars.peek().map(|&(_, n)| n) == Some('}') => {
                    chars.next();
                    literal.push('}');
                }
                '{' => {
                    let mut name = String::new();
                    let mut closed = false;
                    for (_, n) in chars.by_ref() {
                        if n == '}' {
                            closed = true;
                            break;
                        }
                        name.push(n);
                    }
                    if !closed {
                        return Err(PromptError::Syntax {
                            pos,
                            reason: "unterminated placeholder".into(),
                        });
                    }
                    if !is_valid_name(&name) {
                        return Err(PromptError::Syntax {
                            pos,
                            reason: format!("invalid slot name {name:?}"),
                        });
                    }
                    if !literal.is_empty() {
                        segments.push(Segment::Literal(std::mem::take(&mut literal)));
                    }
                    segments.push(Segment::Slot(name));
                }
                '}' => {
                    return Err(PromptError::Syntax {
                        pos,
                        reason: "unmatched '}' (use '}}' for a literal brace)".into(),
                    })
                }
                other => literal.push(other),
            }
        }
        if !literal.is_empty() {
            segments.push(Segment::Literal(literal));
        }
        let slots = segments
            .iter()
            .filter_map(|s| match s {
                Segment::Slot(name) => Some(name.clone()),
                Segment::Literal(_) => None,
            })
            .collect();
        Ok(PromptTemplate {
            id: id.into(),
            body: body.to_string(),
            segments,
            slots,
            delimiter: DelimiterConvention::default(),
            language_hint: String::new(),
        })
    }

    /// Loads a template file; the file name becomes the template id.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, PromptError> {
        let path = path.as_ref();
        let body = std::fs::read_to_string(path).map_err(|source| PromptError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let id = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        PromptTemplate::parse(id, &body)
    }

    pub fn with_delimiter(mut self, delimiter: DelimiterConvention) -> Self {
        self.delimiter = delimiter;
        self
    }

    pub fn with_language_hint(mut self, hint: impl Into<String>) -> Self {
        self.language_hint = hint.into();
        self
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn body(&self) -> &str {
        &self.body
    }

    pub fn slots(&self) -> &BTreeSet<String> {
        &self.slots
    }

    fn slot_count(&self, name: &str) -> usize {
        self.segments
            .iter()
            .filter(|s| matches!(s, Segment::Slot(n) if n == name))
            .count()
    }

    fn fill(&self, mut lookup: impl FnMut(&str) -> Option<String>) -> Prompt {
        let mut text = String::with_capacity(self.body.len());
        let mut missing = Vec::new();
        for segment in &self.segments {
            match segment {
                Segment::Literal(s) => text.push_str(s),
                Segment::Slot(name) => match lookup(name) {
                    Some(value) => text.push_str(&value),
                    None => {
                        if !missing.contains(name) {
                            missing.push(name.clone());
                        }
                    }
                },
            }
        }
        Prompt { text, missing }
    }
}

/// A rendered prompt. `missing` lists slots that had no matching clue and
/// were substituted with the empty string.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prompt {
    pub text: String,
    pub missing: Vec<String>,
}

/// Substitutes every slot with the entity's clue of the same name.
pub fn render(template: &PromptTemplate, entity: &Entity) -> Prompt {
    template.fill(|name| entity.clue(name).map(str::to_string))
}

/// A template with exactly one `{candidates}` slot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SelectiveTemplate(PromptTemplate);

impl SelectiveTemplate {
    pub fn new(template: PromptTemplate) -> Result<Self, PromptError> {
        match template.slot_count(CANDIDATES_SLOT) {
            1 => Ok(SelectiveTemplate(template)),
            n => Err(PromptError::CandidatesSlot(n)),
        }
    }

    pub fn template(&self) -> &PromptTemplate {
        &self.0
    }
}

/// Renders a selective prompt with `candidates` joined by the template's
/// delimiter convention.
pub fn render_selective<S: AsRef<str>>(
    template: &SelectiveTemplate,
    entity: &Entity,
    candidates: &[S],
) -> Result<Prompt, PromptError> {
    if candidates.is_empty() {
        return Err(PromptError::EmptyCandidates);
    }
    let joined = template.0.delimiter.join(candidates);
    Ok(template.0.fill(|name| {
        if name == CANDIDATES_SLOT {
            Some(joined.clone())
        } else {
            entity.clue(name).map(str::to_string)
        }
    }))
}

/// Rules for splitting and cleaning LLM output into tags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ParseRules {
    pub delimiters: Vec<String>,
    pub min_tag_chars: usize,
    pub max_tag_chars: usize,
    /// Stripped from both ends of each tag, in addition to whitespace.
    pub strip_chars: Vec<char>,
    pub lowercase_fold: bool,
}

impl Default for ParseRules {
    fn default() -> Self {
        ParseRules {
            delimiters: [",", "、", "，", "\n"].map(String::from).to_vec(),
            min_tag_chars: 2,
            max_tag_chars: 64,
            strip_chars: vec!['"', '\'', '“', '”', '‘', '’', '「', '」', '《', '》', '.', '。'],
            lowercase_fold: false,
        }
    }
}

impl ParseRules {
    pub fn validate(&self) -> Result<(), PromptError> {
        if self.delimiters.is_empty() || self.delimiters.iter().any(String::is_empty) {
            return Err(PromptError::Rules("delimiters must be non-empty strings".into()));
        }
        if self.min_tag_chars == 0 || self.min_tag_chars > self.max_tag_chars {
            return Err(PromptError::Rules(format!(
                "need 1 <= min_tag_chars ({}) <= max_tag_chars ({})",
                self.min_tag_chars, self.max_tag_chars
            )));
        }
        Ok(())
    }

    /// Strips the configured characters and whitespace from both ends.
    pub fn strip<'a>(&self, s: &'a str) -> &'a str {
        s.trim_matches(|c: char| c.is_whitespace() || self.strip_chars.contains(&c))
    }

    /// Normalizes a single tag the way [`parse_tag_list`] does, without
    /// splitting or length filtering.
    pub fn normalize(&self, s: &str) -> String {
        let stripped = self.strip(s);
        if self.lowercase_fold {
            stripped.to_lowercase()
        } else {
            stripped.to_string()
        }
    }
}

/// Tags parsed from one LLM response.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParsedTags {
    pub tags: Vec<String>,
    pub diagnostics: Vec<String>,
}

fn strip_preamble(raw: &str) -> &str {
    let mut cut = None;
    for (count, (pos, c)) in raw.char_indices().enumerate() {
        if count >= PREAMBLE_WINDOW {
            break;
        }
        if c == ':' || c == '：' {
            cut = Some(pos + c.len_utf8());
        }
    }
    match cut {
        Some(pos) => &raw[pos..],
        None => raw,
    }
}

fn split_any<'a>(text: &'a str, delimiters: &[&str]) -> Vec<&'a str> {
    let mut parts = Vec::new();
    let mut start = 0;
    let mut pos = 0;
    while pos < text.len() {
        let rest = &text[pos..];
        if let Some(d) = delimiters.iter().find(|d| rest.starts_with(**d)) {
            parts.push(&text[start..pos]);
            pos += d.len();
            start = pos;
        } else {
            pos += rest.chars().next().map_or(1, char::len_utf8);
        }
    }
    parts.push(&text[start..]);
    parts
}

/// Splits raw model output into a clean, de-duplicated tag list.
///
/// A chat-style preamble ending in a colon within the first 80 characters
/// is dropped; any colon after that point also separates tags. Never fails:
/// unusable output yields an empty list and a diagnostic.
pub fn parse_tag_list(raw: &str, rules: &ParseRules) -> ParsedTags {
    let body = strip_preamble(raw);
    let mut delimiters: Vec<&str> = rules.delimiters.iter().map(String::as_str).collect();
    delimiters.extend([":", "："]);

    let mut out = ParsedTags::default();
    let mut seen = HashSet::new();
    let (mut short, mut long) = (0usize, 0usize);
    for piece in split_any(body, &delimiters) {
        let tag = rules.normalize(piece);
        if tag.is_empty() {
            continue;
        }
        let len = tag.chars().count();
        if len < rules.min_tag_chars {
            short += 1;
            continue;
        }
        if len > rules.max_tag_chars {
            long += 1;
            continue;
        }
        if seen.insert(tag.clone()) {
            out.tags.push(tag);
        }
    }
    if short > 0 {
        out.diagnostics
            .push(format!("dropped {short} tag(s) shorter than {} chars", rules.min_tag_chars));
    }
    if long > 0 {
        out.diagnostics
            .push(format!("dropped {long} tag(s) longer than {} chars", rules.max_tag_chars));
    }
    if out.tags.is_empty() {
        out.diagnostics.push(if raw.trim().is_empty() {
            "empty model output".to_string()
        } else {
            "no tags could be parsed from model output".to_string()
        });
    }
    out
}
