//! Zero-shot tagging of new entities against an existing tag system.
//!
//! * **Generative**: the LLM proposes free-form candidates, which are
//!   matched to system tags through the tag × candidate cosine matrix. Each
//!   candidate proposes at most one tag (its best match), accepted only at
//!   or above the threshold.
//! * **Selective**: the entity's composed clue text retrieves the top-k
//!   system tags; the LLM chooses among them in-prompt, and anything off
//!   the list is dropped.

use std::collections::{HashMap, HashSet};
use std::io::{BufRead, BufReader, Read, Write};

use serde::{Deserialize, Serialize};

use crate::builder::{TagSystem, DEFAULT_SIMILARITY_THRESHOLD};
use crate::corpus::{compose_clue_text, truncate_clues, Entity, DEFAULT_CLUE_BUDGET};
use crate::embed::{similarity_matrix, top_k, EmbedError, EmbeddingMatrix, Encoder};
use crate::exec;
use crate::llm::{CompletionRequest, LlmBackend, LlmError};
use crate::prompt::{
    parse_tag_list, render, render_selective, ParseRules, PromptError, PromptTemplate,
    SelectiveTemplate,
};

#[derive(Debug, thiserror::Error)]
pub enum TagError {
    #[error("tag system is empty")]
    EmptySystem,
    #[error("invalid tagger configuration: {0}")]
    Config(String),
    #[error("no {0} template configured")]
    MissingTemplate(TaggingMode),
    #[error("llm: {0}")]
    Llm(#[from] LlmError),
    #[error("encoder: {0}")]
    Embed(#[from] EmbedError),
    #[error("prompt: {0}")]
    Prompt(#[from] PromptError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaggingMode {
    Generative,
    Selective,
}

impl std::fmt::Display for TaggingMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TaggingMode::Generative => "generative",
            TaggingMode::Selective => "selective",
        })
    }
}

impl std::str::FromStr for TaggingMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "generative" => Ok(TaggingMode::Generative),
            "selective" => Ok(TaggingMode::Selective),
            other => Err(format!("unknown tagging mode {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignedTag {
    /// Canonical tag from the system.
    pub tag: String,
    /// Cosine for generative matches; 1.0 for selective picks.
    pub score: f64,
    /// 1-based position in the selective candidate list.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rank: Option<usize>,
    /// Surface form the LLM emitted, when it differs from `tag`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matched_candidate: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TaggerConfig {
    pub accept_threshold: f64,
    pub candidate_k: usize,
    pub candidate_floor: f64,
    pub max_tags_per_item: usize,
    /// Clue order for the selective query text; empty means declared order.
    pub clue_order: Vec<String>,
    /// Per-clue format for the selective query text.
    pub label_format: String,
    pub clue_budget: usize,
    pub clue_priority: Vec<String>,
    pub parse_rules: ParseRules,
}

impl Default for TaggerConfig {
    fn default() -> Self {
        TaggerConfig {
            accept_threshold: DEFAULT_SIMILARITY_THRESHOLD,
            candidate_k: 50,
            candidate_floor: 0.3,
            max_tags_per_item: 10,
            clue_order: Vec::new(),
            label_format: "{name}: {value}".into(),
            clue_budget: DEFAULT_CLUE_BUDGET,
            clue_priority: Vec::new(),
            parse_rules: ParseRules::default(),
        }
    }
}

impl TaggerConfig {
    pub fn validate(&self) -> Result<(), TagError> {
        let in_unit = |x: f64| x > 0.0 && x <= 1.0;
        if !in_unit(self.accept_threshold) || !in_unit(self.candidate_floor) {
            return Err(TagError::Config("thresholds must lie in (0, 1]".into()));
        }
        if self.candidate_k == 0 || self.max_tags_per_item == 0 {
            return Err(TagError::Config(
                "candidate_k and max_tags_per_item must be >= 1".into(),
            ));
        }
        self.parse_rules.validate()?;
        Ok(())
    }
}

/// Tags assigned to one entity plus what happened along the way.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TaggingResult {
    pub tags: Vec<AssignedTag>,
    pub diagnostics: Vec<String>,
    /// Selective mode: the retrieved candidate list, best first.
    pub candidates: Vec<String>,
}

/// Per-entity outcome of [`Tagger::tag_batch`].
#[derive(Debug)]
pub struct TagOutcome {
    pub id: String,
    pub mode: TaggingMode,
    pub result: Result<TaggingResult, TagError>,
}

/// Tags entities against a read-only tag system.
pub struct Tagger<'a, L: ?Sized, E: ?Sized> {
    system: &'a TagSystem,
    llm: &'a L,
    encoder: &'a E,
    config: TaggerConfig,
    tag_matrix: EmbeddingMatrix,
    surface: HashMap<String, String>,
    generative: Option<PromptTemplate>,
    selective: Option<SelectiveTemplate>,
}

impl<'a, L, E> Tagger<'a, L, E>
where
    L: LlmBackend + ?Sized,
    E: Encoder + ?Sized,
{
    pub fn new(
        system: &'a TagSystem,
        llm: &'a L,
        encoder: &'a E,
        config: TaggerConfig,
    ) -> Result<Self, TagError> {
        if system.is_empty() {
            return Err(TagError::EmptySystem);
        }
        config.validate()?;
        let tag_matrix = system.embedding_matrix(encoder)?;
        if tag_matrix.dim() != encoder.dim() {
            return Err(EmbedError::DimensionMismatch {
                expected: tag_matrix.dim(),
                found: encoder.dim(),
            }
            .into());
        }
        let surface = system
            .surface_index()
            .into_iter()
            .map(|(s, c)| (s.to_string(), c.to_string()))
            .collect();
        Ok(Tagger {
            system,
            llm,
            encoder,
            config,
            tag_matrix,
            surface,
            generative: None,
            selective: None,
        })
    }

    pub fn with_generative(mut self, template: PromptTemplate) -> Self {
        self.generative = Some(template);
        self
    }

    pub fn with_selective(mut self, template: SelectiveTemplate) -> Self {
        self.selective = Some(template);
        self
    }

    pub fn system(&self) -> &TagSystem {
        self.system
    }

    pub fn config(&self) -> &TaggerConfig {
        &self.config
    }

    fn budgeted(&self, entity: &Entity) -> Entity {
        truncate_clues(entity, self.config.clue_budget, &self.config.clue_priority).entity
    }

    fn complete(&self, prompt: String, entity: &Entity) -> Result<String, TagError> {
        let request = CompletionRequest::new(prompt).tagged(entity.id.clone());
        request.validate()?;
        Ok(self.llm.complete(&request)?.text)
    }

    /// Late matching: free-form candidates mapped onto system tags.
    pub fn tag_generative(&self, entity: &Entity) -> Result<TaggingResult, TagError> {
        let template = self
            .generative
            .as_ref()
            .ok_or(TagError::MissingTemplate(TaggingMode::Generative))?;
        let entity = self.budgeted(entity);
        let raw = self.complete(render(template, &entity).text, &entity)?;
        let parsed = parse_tag_list(&raw, &self.config.parse_rules);
        let mut result = TaggingResult {
            diagnostics: parsed.diagnostics,
            ..TaggingResult::default()
        };
        if parsed.tags.is_empty() {
            result.diagnostics.push("no candidates parsed".into());
            return Ok(result);
        }

        let cands = EmbeddingMatrix::encode(self.encoder, parsed.tags)?;
        let scores = similarity_matrix(&self.tag_matrix, &cands)?;
        let mut best: Vec<AssignedTag> = Vec::new();
        for j in 0..scores.cols() {
            let Some((i, score)) = scores.argmax_in_column(j) else {
                continue;
            };
            if score < self.config.accept_threshold {
                continue;
            }
            let tag = &self.tag_matrix.keys()[i];
            let candidate = &cands.keys()[j];
            match best.iter_mut().find(|a| &a.tag == tag) {
                Some(existing) if existing.score >= score => {}
                Some(existing) => {
                    existing.score = score;
                    existing.matched_candidate = (candidate != tag).then(|| candidate.clone());
                }
                None => best.push(AssignedTag {
                    tag: tag.clone(),
                    score,
                    rank: None,
                    matched_candidate: (candidate != tag).then(|| candidate.clone()),
                }),
            }
        }
        if best.is_empty() {
            result
                .diagnostics
                .push(format!("no candidate reached {}", self.config.accept_threshold));
        }
        best.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.tag.cmp(&b.tag)));
        best.truncate(self.config.max_tags_per_item);
        result.tags = best;
        Ok(result)
    }

    /// Retrieval step of selective tagging: the candidate list for an entity.
    pub fn selective_candidates(&self, entity: &Entity) -> Result<Vec<(String, f64)>, TagError> {
        let order: Vec<String> = if self.config.clue_order.is_empty() {
            entity.clue_names().map(str::to_string).collect()
        } else {
            self.config.clue_order.clone()
        };
        let text = compose_clue_text(entity, &order, &self.config.label_format);
        let query = self.encoder.encode(&text)?;
        Ok(top_k(
            &query,
            &self.tag_matrix,
            self.config.candidate_k,
            self.config.candidate_floor,
        )?)
    }

    /// Early matching: the LLM picks from retrieved candidates.
    pub fn tag_selective(&self, entity: &Entity) -> Result<TaggingResult, TagError> {
        let template = self
            .selective
            .as_ref()
            .ok_or(TagError::MissingTemplate(TaggingMode::Selective))?;
        let entity = self.budgeted(entity);
        let candidates: Vec<String> = self
            .selective_candidates(&entity)?
            .into_iter()
            .map(|(tag, _)| tag)
            .collect();
        let mut result = TaggingResult::default();
        if candidates.is_empty() {
            result.diagnostics.push(format!(
                "no system tag scored >= {} against the clue text",
                self.config.candidate_floor
            ));
            return Ok(result);
        }
        let prompt = render_selective(template, &entity, &candidates)?;
        let raw = self.complete(prompt.text, &entity)?;
        let parsed = parse_tag_list(&raw, &self.config.parse_rules);
        result.diagnostics = parsed.diagnostics;

        let rank_of: HashMap<&str, usize> = candidates
            .iter()
            .enumerate()
            .map(|(i, c)| (c.as_str(), i + 1))
            .collect();
        let mut taken = HashSet::new();
        for picked in parsed.tags {
            let canonical = if rank_of.contains_key(picked.as_str()) {
                Some(picked.clone())
            } else {
                self.surface
                    .get(&picked)
                    .filter(|c| rank_of.contains_key(c.as_str()))
                    .cloned()
            };
            let Some(tag) = canonical else {
                log::debug!("entity {}: dropping off-list tag {picked:?}", entity.id);
                result.diagnostics.push(format!("dropped off-list tag {picked:?}"));
                continue;
            };
            if !taken.insert(tag.clone()) {
                continue;
            }
            result.tags.push(AssignedTag {
                rank: Some(rank_of[tag.as_str()]),
                matched_candidate: (picked != tag).then_some(picked),
                tag,
                score: 1.0,
            });
        }
        result.tags.truncate(self.config.max_tags_per_item);
        result.candidates = candidates;
        Ok(result)
    }

    pub fn tag(&self, entity: &Entity, mode: TaggingMode) -> Result<TaggingResult, TagError> {
        match mode {
            TaggingMode::Generative => self.tag_generative(entity),
            TaggingMode::Selective => self.tag_selective(entity),
        }
    }

    /// Tags every entity on at most `parallelism` workers. Failures stay in
    /// their slot; output order matches input order.
    pub fn tag_batch(
        &self,
        entities: &[Entity],
        mode: TaggingMode,
        parallelism: usize,
    ) -> Vec<TagOutcome> {
        let parallelism = parallelism.max(1);
        exec::with_workers(parallelism, || {
            exec::map(exec::for_workers(parallelism), entities, |e| TagOutcome {
                id: e.id.clone(),
                mode,
                result: self.tag(e, mode),
            })
        })
    }
}

/// One line of an assignments file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignmentLine {
    pub id: String,
    pub mode: TaggingMode,
    pub tags: Vec<AssignedTag>,
    #[serde(default)]
    pub diagnostics: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl From<&TagOutcome> for AssignmentLine {
    fn from(outcome: &TagOutcome) -> Self {
        match &outcome.result {
            Ok(r) => AssignmentLine {
                id: outcome.id.clone(),
                mode: outcome.mode,
                tags: r.tags.clone(),
                diagnostics: r.diagnostics.clone(),
                error: None,
            },
            Err(e) => AssignmentLine {
                id: outcome.id.clone(),
                mode: outcome.mode,
                tags: Vec::new(),
                diagnostics: Vec::new(),
                error: Some(e.to_string()),
            },
        }
    }
}

pub fn write_assignments<W: Write>(mut out: W, lines: &[AssignmentLine]) -> std::io::Result<()> {
    for line in lines {
        serde_json::to_writer(&mut out, line)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn read_assignments<R: Read>(input: R) -> Result<Vec<AssignmentLine>, String> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(input).lines().enumerate() {
        let line = line.map_err(|e| e.to_string())?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| format!("line {}: {e}", i + 1))?);
    }
    Ok(out)
}
