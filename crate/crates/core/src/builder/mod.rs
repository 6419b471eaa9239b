//! Tag-system construction: batch generation of candidate tags, frequency
//! statistics, frequency-band truncation and semantic fusion.

use std::collections::{BTreeMap, BTreeSet};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{truncate_clues, Entity, DEFAULT_CLUE_BUDGET};
use crate::embed::{EmbedError, Encoder};
use crate::llm::{batch_complete, CompletionRequest, LlmBackend};
use crate::prompt::{parse_tag_list, render, ParseRules, PromptTemplate};

mod fusion;
mod system;

pub use fusion::{alias_partition, semantic_fuse, semantic_fuse_with, similar_pairs};
pub use system::{
    load_tag_system, save_tag_system, BuildManifest, StoreError, TagRecord, TagSystem,
    FORMAT_VERSION,
};

/// Default fusion / redundancy threshold.
pub const DEFAULT_SIMILARITY_THRESHOLD: f64 = 0.8;
pub const DEFAULT_MIN_FREQ: usize = 2;
/// Default upper frequency bound as a fraction of corpus size.
pub const DEFAULT_MAX_FREQ_RATIO: f64 = 0.2;

#[derive(Debug, thiserror::Error)]
pub enum BuildError {
    #[error("invalid build configuration: {0}")]
    Config(String),
    #[error("generate stage: {0}")]
    Generate(String),
    #[error("truncate stage: {0}")]
    Truncate(String),
    #[error("fuse stage: encoder failed on tag {tag:?}: {source}")]
    Encode {
        tag: String,
        #[source]
        source: EmbedError,
    },
    #[error("fuse stage: {0}")]
    Fuse(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagStat {
    /// Entities whose generation produced the tag; each entity counts once.
    pub frequency: usize,
    /// Parsed responses containing the tag, across all templates.
    pub emissions: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationFailure {
    pub entity_id: String,
    pub template_id: String,
    pub error: String,
}

/// Candidate tags with corpus-wide statistics.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawCounts {
    pub tags: BTreeMap<String, TagStat>,
    /// Each entity's de-duplicated tags in first-seen order.
    pub per_entity: IndexMap<String, Vec<String>>,
    #[serde(default)]
    pub failures: Vec<GenerationFailure>,
}

impl RawCounts {
    /// Builds counts from per-entity tag lists. Repeats within one entity
    /// count once.
    pub fn from_entity_tags<I>(entities: I) -> Self
    where
        I: IntoIterator<Item = (String, Vec<String>)>,
    {
        let mut counts = RawCounts::default();
        for (id, tags) in entities {
            let mut seen = BTreeSet::new();
            let mut unique = Vec::new();
            for tag in tags {
                let stat = counts.tags.entry(tag.clone()).or_default();
                stat.emissions += 1;
                if seen.insert(tag.clone()) {
                    stat.frequency += 1;
                    unique.push(tag);
                }
            }
            counts.per_entity.insert(id, unique);
        }
        counts
    }

    /// Entity positions (in `per_entity` order) for each tag.
    pub fn entity_sets(&self) -> BTreeMap<&str, BTreeSet<usize>> {
        let mut out: BTreeMap<&str, BTreeSet<usize>> = BTreeMap::new();
        for (idx, tags) in self.per_entity.values().enumerate() {
            for tag in tags {
                out.entry(tag.as_str()).or_default().insert(idx);
            }
        }
        out
    }

    pub fn frequency_summary(&self) -> String {
        let mut freqs: Vec<usize> = self.tags.values().map(|s| s.frequency).collect();
        if freqs.is_empty() {
            return "no tags".into();
        }
        freqs.sort_unstable();
        format!(
            "{} tags, frequency min {} / median {} / max {}",
            freqs.len(),
            freqs[0],
            freqs[freqs.len() / 2],
            freqs[freqs.len() - 1]
        )
    }
}

/// Renders each entity through each template, completes, parses, and
/// counts tags per entity. Output does not depend on `parallelism`.
pub fn generate_candidates<L: LlmBackend + ?Sized>(
    corpus: &[Entity],
    templates: &[PromptTemplate],
    llm: &L,
    rules: &ParseRules,
    parallelism: usize,
) -> Result<RawCounts, BuildError> {
    if corpus.is_empty() {
        return Err(BuildError::Generate("corpus is empty".into()));
    }
    if templates.is_empty() {
        return Err(BuildError::Generate("no templates configured".into()));
    }
    rules
        .validate()
        .map_err(|e| BuildError::Config(e.to_string()))?;

    let mut requests = Vec::with_capacity(corpus.len() * templates.len());
    for entity in corpus {
        for template in templates {
            let prompt = render(template, entity);
            if !prompt.missing.is_empty() {
                log::debug!(
                    "entity {}: template {} has no clue for {:?}",
                    entity.id,
                    template.id(),
                    prompt.missing
                );
            }
            requests.push(
                CompletionRequest::new(prompt.text).tagged(format!("{}#{}", entity.id, template.id())),
            );
        }
    }
    let outcome = batch_complete(llm, &requests, parallelism);
    if outcome.failures == requests.len() {
        let first = outcome.results.iter().find_map(|r| r.as_ref().err());
        return Err(BuildError::Generate(format!(
            "no candidates generated: all {} completions failed (first: {})",
            requests.len(),
            first.map(ToString::to_string).unwrap_or_default()
        )));
    }

    let mut failures = Vec::new();
    let mut per_entity = Vec::with_capacity(corpus.len());
    let mut results = outcome.results.into_iter();
    for entity in corpus {
        let mut tags = Vec::new();
        for template in templates {
            match results.next().expect("one result per request") {
                Ok(done) => tags.extend(parse_tag_list(&done.text, rules).tags),
                Err(err) => failures.push(GenerationFailure {
                    entity_id: entity.id.clone(),
                    template_id: template.id().to_string(),
                    error: err.to_string(),
                }),
            }
        }
        per_entity.push((entity.id.clone(), tags));
    }
    let mut counts = RawCounts::from_entity_tags(per_entity);
    counts.failures = failures;
    Ok(counts)
}

/// Keeps tags with `min_freq <= frequency <= max_freq` (no upper bound when
/// `max_freq` is `None`); per-entity lists are filtered to match.
pub fn frequency_truncate(
    counts: &RawCounts,
    min_freq: usize,
    max_freq: Option<usize>,
) -> Result<RawCounts, BuildError> {
    if min_freq == 0 {
        return Err(BuildError::Config("min_freq must be >= 1".into()));
    }
    if let Some(max) = max_freq {
        if max < min_freq {
            return Err(BuildError::Config(format!(
                "max_freq {max} is below min_freq {min_freq}"
            )));
        }
    }
    let keep = |stat: &TagStat| {
        stat.frequency >= min_freq && max_freq.is_none_or(|max| stat.frequency <= max)
    };
    let tags: BTreeMap<String, TagStat> = counts
        .tags
        .iter()
        .filter(|(_, s)| keep(s))
        .map(|(t, s)| (t.clone(), *s))
        .collect();
    if tags.is_empty() {
        return Err(BuildError::Truncate(format!(
            "no tags within [{min_freq}, {}]; distribution: {}",
            max_freq.map_or("inf".to_string(), |m| m.to_string()),
            counts.frequency_summary()
        )));
    }
    let per_entity = counts
        .per_entity
        .iter()
        .map(|(id, list)| {
            let kept = list.iter().filter(|t| tags.contains_key(*t)).cloned().collect();
            (id.clone(), kept)
        })
        .collect();
    Ok(RawCounts {
        tags,
        per_entity,
        failures: counts.failures.clone(),
    })
}

/// Settings for [`build_tag_system`].
#[derive(Debug, Clone, PartialEq)]
pub struct BuildConfig {
    pub parse_rules: ParseRules,
    pub clue_budget: usize,
    pub clue_priority: Vec<String>,
    pub min_freq: usize,
    /// `None` resolves to 20% of the corpus size (at least `min_freq`).
    pub max_freq: Option<usize>,
    pub unbounded_max: bool,
    pub fusion_threshold: f64,
    pub parallelism: usize,
    /// Fixed manifest timestamp; `None` reads the system clock.
    pub fixed_clock: Option<u64>,
}

impl Default for BuildConfig {
    fn default() -> Self {
        BuildConfig {
            parse_rules: ParseRules::default(),
            clue_budget: DEFAULT_CLUE_BUDGET,
            clue_priority: Vec::new(),
            min_freq: DEFAULT_MIN_FREQ,
            max_freq: None,
            unbounded_max: false,
            fusion_threshold: DEFAULT_SIMILARITY_THRESHOLD,
            parallelism: 4,
            fixed_clock: None,
        }
    }
}

impl BuildConfig {
    /// The upper frequency bound for a corpus of `n` entities.
    pub fn resolve_max_freq(&self, n: usize) -> Option<usize> {
        if self.unbounded_max {
            return None;
        }
        Some(self.max_freq.unwrap_or_else(|| {
            ((n as f64 * DEFAULT_MAX_FREQ_RATIO).ceil() as usize).max(self.min_freq)
        }))
    }
}

/// Everything a build produces.
#[derive(Debug, Clone)]
pub struct BuildOutput {
    pub system: TagSystem,
    pub raw: RawCounts,
    pub truncated: RawCounts,
}

/// Content hash of a corpus: ids, clues and ground truth, in order.
pub fn corpus_hash(corpus: &[Entity]) -> String {
    let mut h = Sha256::new();
    for entity in corpus {
        h.update(serde_json::to_vec(entity).expect("entities serialize"));
        h.update(b"\n");
    }
    hex::encode(h.finalize())
}

/// Runs generation, truncation and fusion, and records a manifest.
pub fn build_tag_system<L, E>(
    corpus: &[Entity],
    templates: &[PromptTemplate],
    llm: &L,
    encoder: &E,
    config: &BuildConfig,
) -> Result<BuildOutput, BuildError>
where
    L: LlmBackend + ?Sized,
    E: Encoder + ?Sized,
{
    let budgeted: Vec<Entity> = corpus
        .iter()
        .map(|e| {
            let t = truncate_clues(e, config.clue_budget, &config.clue_priority);
            if t.exhausted {
                log::warn!("entity {}: clue budget left no text", e.id);
            }
            t.entity
        })
        .collect();
    let raw = generate_candidates(
        &budgeted,
        templates,
        llm,
        &config.parse_rules,
        config.parallelism,
    )?;
    let max_freq = config.resolve_max_freq(corpus.len());
    let truncated = frequency_truncate(&raw, config.min_freq, max_freq)?;
    let mut system = semantic_fuse(&truncated, encoder, config.fusion_threshold)?;
    system.manifest = BuildManifest {
        corpus_hash: corpus_hash(corpus),
        entity_count: corpus.len(),
        template_ids: templates.iter().map(|t| t.id().to_string()).collect(),
        llm_backend: llm.name().to_string(),
        encoder_backend: encoder.name().to_string(),
        min_freq: config.min_freq,
        max_freq,
        raw_tag_count: raw.tags.len(),
        truncated_tag_count: truncated.tags.len(),
        failed_completions: raw.failures.len(),
        created_unix_s: config.fixed_clock.unwrap_or_else(|| {
            std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0)
        }),
    };
    Ok(BuildOutput {
        system,
        raw,
        truncated,
    })
}
