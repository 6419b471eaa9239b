//! Corpus ingestion: line-delimited JSON records mapped onto entities whose
//! multimodal content is already available as named textual clues.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Default character budget applied before prompting.
pub const DEFAULT_CLUE_BUDGET: usize = 6000;

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("io error reading corpus: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: malformed record: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("line {line}: duplicate entity id {id:?}")]
    DuplicateId { line: usize, id: String },
    #[error("line {line}: missing id field {field:?}")]
    MissingId { line: usize, field: String },
    #[error("line {line}: entity {id:?} has no non-empty clue")]
    NoClues { line: usize, id: String },
    #[error("invalid clue name {0:?}: must match [a-z][a-z0-9_]*")]
    InvalidClueName(String),
    #[error("invalid schema: {0}")]
    InvalidSchema(String),
}

/// Returns true when `name` is a well-formed clue or slot identifier.
pub fn is_valid_name(name: &str) -> bool {
    let mut chars = name.chars();
    match chars.next() {
        Some(c) if c.is_ascii_lowercase() => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_')
}

/// Replaces control characters other than `\n` with a space and folds
/// `\r\n` to `\n`.
pub fn sanitize_value(raw: &str) -> String {
    let folded = raw.replace("\r\n", "\n");
    folded
        .chars()
        .map(|c| if c.is_control() && c != '\n' { ' ' } else { c })
        .collect()
}

/// One item, reduced to named textual clues.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entity {
    pub id: String,
    clues: IndexMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth_tags: Option<Vec<String>>,
}

impl Entity {
    /// Builds an entity from `(name, value)` pairs, in order. Values are
    /// sanitized; names are validated. A later pair with the same name
    /// overwrites the earlier value but keeps its position.
    pub fn new<I, K, V>(id: impl Into<String>, clues: I) -> Result<Self, CorpusError>
    where
        I: IntoIterator<Item = (K, V)>,
        K: AsRef<str>,
        V: AsRef<str>,
    {
        let mut entity = Entity {
            id: id.into(),
            clues: IndexMap::new(),
            ground_truth_tags: None,
        };
        for (name, value) in clues {
            entity.set_clue(name.as_ref(), value.as_ref())?;
        }
        Ok(entity)
    }

    pub fn set_clue(&mut self, name: &str, value: &str) -> Result<(), CorpusError> {
        if !is_valid_name(name) {
            return Err(CorpusError::InvalidClueName(name.to_string()));
        }
        self.clues.insert(name.to_string(), sanitize_value(value));
        Ok(())
    }

    pub fn with_ground_truth(mut self, tags: Vec<String>) -> Self {
        self.ground_truth_tags = Some(tags);
        self
    }

    pub fn clue(&self, name: &str) -> Option<&str> {
        self.clues.get(name).map(String::as_str)
    }

    /// Clues in declared order.
    pub fn clues(&self) -> impl Iterator<Item = (&str, &str)> {
        self.clues.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn clue_names(&self) -> impl Iterator<Item = &str> {
        self.clues.keys().map(String::as_str)
    }

    pub fn has_content(&self) -> bool {
        self.clues.values().any(|v| !v.trim().is_empty())
    }

    /// Total clue length in Unicode scalar values.
    pub fn clue_chars(&self) -> usize {
        self.clues.values().map(|v| v.chars().count()).sum()
    }
}

/// Maps source record fields onto clue names.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemaMap {
    /// `(clue name, source field)` pairs; clue order follows this list.
    fields: Vec<(String, String)>,
    pub id_field: String,
    pub hashtag_field: Option<String>,
}

impl SchemaMap {
    pub fn new<I, K, V>(id_field: impl Into<String>, fields: I) -> Result<Self, CorpusError>
    where
        I: IntoIterator<Item = (K, V)>,
        K: Into<String>,
        V: Into<String>,
    {
        let id_field = id_field.into();
        if id_field.is_empty() {
            return Err(CorpusError::InvalidSchema("id_field must be declared".into()));
        }
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for (clue, source) in fields {
            let clue = clue.into();
            if !is_valid_name(&clue) {
                return Err(CorpusError::InvalidClueName(clue));
            }
            if !seen.insert(clue.clone()) {
                return Err(CorpusError::InvalidSchema(format!(
                    "clue {clue:?} mapped more than once"
                )));
            }
            out.push((clue, source.into()));
        }
        if out.is_empty() {
            return Err(CorpusError::InvalidSchema("no clue fields mapped".into()));
        }
        Ok(SchemaMap {
            fields: out,
            id_field,
            hashtag_field: None,
        })
    }

    /// Parses `clue=source` specs as given on the command line.
    pub fn from_specs<S: AsRef<str>>(
        id_field: impl Into<String>,
        specs: &[S],
    ) -> Result<Self, CorpusError> {
        let mut pairs = Vec::with_capacity(specs.len());
        for spec in specs {
            let spec = spec.as_ref();
            let (clue, source) = spec.split_once('=').ok_or_else(|| {
                CorpusError::InvalidSchema(format!("expected clue=source, got {spec:?}"))
            })?;
            pairs.push((clue.trim().to_string(), source.trim().to_string()));
        }
        SchemaMap::new(id_field, pairs)
    }

    pub fn with_hashtag_field(mut self, field: impl Into<String>) -> Self {
        self.hashtag_field = Some(field.into());
        self
    }

    pub fn fields(&self) -> &[(String, String)] {
        &self.fields
    }

    pub fn clue_names(&self) -> impl Iterator<Item = &str> {
        self.fields.iter().map(|(c, _)| c.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParseMode {
    #[default]
    Strict,
    Lenient,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkippedLine {
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct LoadedCorpus {
    pub entities: Vec<Entity>,
    /// Lines dropped in lenient mode.
    pub skipped: Vec<SkippedLine>,
}

/// Splits a hashtag string into tags: the text after each `#` up to the
/// next one, trimmed, empties dropped.
pub fn split_hashtags(raw: &str) -> Vec<String> {
    raw.split('#')
        .skip(1)
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect()
}

fn scalar_text(value: &Value) -> Option<Result<String, String>> {
    match value {
        Value::Null => None,
        Value::String(s) => Some(Ok(s.clone())),
        Value::Number(n) => Some(Ok(n.to_string())),
        Value::Bool(b) => Some(Ok(b.to_string())),
        Value::Array(items) => {
            let mut parts = Vec::with_capacity(items.len());
            for item in items {
                match scalar_text(item) {
                    Some(Ok(s)) => parts.push(s),
                    None => {}
                    Some(Err(e)) => return Some(Err(e)),
                }
            }
            Some(Ok(parts.join(" ")))
        }
        Value::Object(_) => Some(Err("nested objects are not clue text".into())),
    }
}

fn entity_from_record(
    line: usize,
    record: &Value,
    schema: &SchemaMap,
) -> Result<Entity, CorpusError> {
    let obj = record.as_object().ok_or_else(|| CorpusError::Malformed {
        line,
        reason: "record is not a JSON object".into(),
    })?;
    let id = match obj.get(&schema.id_field).and_then(scalar_text) {
        Some(Ok(id)) if !id.trim().is_empty() => id,
        _ => {
            return Err(CorpusError::MissingId {
                line,
                field: schema.id_field.clone(),
            })
        }
    };
    let mut entity = Entity::new(id, std::iter::empty::<(&str, &str)>())?;
    for (clue, source) in &schema.fields {
        match obj.get(source).and_then(scalar_text) {
            Some(Ok(text)) => entity.set_clue(clue, &text)?,
            Some(Err(reason)) => {
                return Err(CorpusError::Malformed {
                    line,
                    reason: format!("field {source:?}: {reason}"),
                })
            }
            None => {}
        }
    }
    if let Some(field) = &schema.hashtag_field {
        if let Some(value) = obj.get(field) {
            let tags = match value {
                Value::Array(items) => items
                    .iter()
                    .filter_map(Value::as_str)
                    .map(|s| s.trim().trim_start_matches('#').trim().to_string())
                    .filter(|s| !s.is_empty())
                    .collect(),
                other => match scalar_text(other) {
                    Some(Ok(s)) => split_hashtags(&s),
                    _ => Vec::new(),
                },
            };
            entity.ground_truth_tags = Some(tags);
        }
    }
    if !entity.has_content() {
        return Err(CorpusError::NoClues {
            line,
            id: entity.id,
        });
    }
    Ok(entity)
}

/// Reads entities from a line-delimited JSON stream, one record per line.
/// Blank lines are ignored. Duplicate and missing ids always abort; other
/// record errors abort in strict mode and are skipped in lenient mode.
pub fn read_corpus<R: Read>(
    reader: R,
    schema: &SchemaMap,
    mode: ParseMode,
) -> Result<LoadedCorpus, CorpusError> {
    let mut out = LoadedCorpus::default();
    let mut ids = HashSet::new();
    for (idx, line) in BufReader::new(reader).lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed = serde_json::from_str::<Value>(&line)
            .map_err(|e| CorpusError::Malformed {
                line: line_no,
                reason: e.to_string(),
            })
            .and_then(|record| entity_from_record(line_no, &record, schema));
        let entity = match parsed {
            Ok(entity) => entity,
            Err(err @ CorpusError::MissingId { .. }) => return Err(err),
            Err(err) if mode == ParseMode::Lenient => {
                log::warn!("skipping corpus line: {err}");
                out.skipped.push(SkippedLine {
                    line: line_no,
                    reason: err.to_string(),
                });
                continue;
            }
            Err(err) => return Err(err),
        };
        if !ids.insert(entity.id.clone()) {
            return Err(CorpusError::DuplicateId {
                line: line_no,
                id: entity.id,
            });
        }
        out.entities.push(entity);
    }
    Ok(out)
}

pub fn load_corpus(
    path: impl AsRef<Path>,
    schema: &SchemaMap,
    mode: ParseMode,
) -> Result<LoadedCorpus, CorpusError> {
    read_corpus(File::open(path)?, schema, mode)
}

/// Result of [`truncate_clues`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Truncation {
    pub entity: Entity,
    /// Some clue text was cut.
    pub truncated: bool,
    /// The budget could not hold a single character; every clue is empty.
    pub exhausted: bool,
}

fn priority_rank(priority: &[String], name: &str) -> (usize, String) {
    match priority.iter().position(|p| p == name) {
        Some(pos) => (pos, String::new()),
        None => (priority.len(), name.to_string()),
    }
}

/// Fits clue text into `budget` characters. Fields are kept whole in
/// priority order (unlisted names last, alphabetically); the first field
/// that would overflow is cut at the tail and every later field emptied.
/// Clue order in the returned entity is unchanged.
pub fn truncate_clues(entity: &Entity, budget: usize, priority: &[String]) -> Truncation {
    let mut ranked: Vec<&str> = entity.clue_names().collect();
    ranked.sort_by_key(|name| priority_rank(priority, name));

    let mut out = entity.clone();
    let mut remaining = budget;
    let mut truncated = false;
    for name in ranked {
        let value = &entity.clues[name];
        let len = value.chars().count();
        if len <= remaining {
            remaining -= len;
            continue;
        }
        truncated = true;
        let kept: String = value.chars().take(remaining).collect();
        remaining = 0;
        out.clues.insert(name.to_string(), kept);
    }
    let exhausted = budget == 0 && entity.clue_chars() > 0;
    Truncation {
        entity: out,
        truncated,
        exhausted,
    }
}

/// Joins non-empty clues in `order` with newlines, rendering each through
/// `label_format`, which may reference `{name}` and `{value}`.
pub fn compose_clue_text(entity: &Entity, order: &[String], label_format: &str) -> String {
    order
        .iter()
        .filter_map(|name| {
            let value = entity.clue(name)?;
            if value.trim().is_empty() {
                return None;
            }
            Some(
                label_format
                    .replace("{name}", name)
                    .replace("{value}", value),
            )
        })
        .collect::<Vec<_>>()
        .join("\n")
}
