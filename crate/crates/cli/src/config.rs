//! Run configuration: a TOML file, then `--set section.key=value`
//! overrides. Relative paths resolve against the config file's directory
//! (the working directory when no file is given).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tagkit_core::prompt::{DelimiterConvention, ParseRules};

/// Every config key: (key, default, meaning).
pub const KEYS: &[(&str, &str, &str)] = &[
    ("output_dir", "\"out\"", "directory for artifacts"),
    ("deterministic", "false", "fixed clock and jitter-free retries"),
    ("corpus.path", "\"corpus.jsonl\"", "line-JSON corpus"),
    ("corpus.id_field", "\"id\"", "record field holding the entity id"),
    ("corpus.map", "[\"title=title\"]", "clue=source field mappings, in clue order"),
    ("corpus.hashtag_field", "unset", "record field with human hashtags"),
    ("corpus.strict", "true", "abort on malformed lines instead of skipping"),
    ("corpus.clue_budget", "6000", "max clue characters per entity"),
    ("corpus.clue_priority", "[]", "clue names kept first under the budget"),
    ("templates.generate", "[]", "generation template files"),
    ("templates.select", "unset", "selective template file (one {candidates} slot)"),
    ("templates.delimiter", "\"comma\"", "list join: comma | ideographic_enum | mixed"),
    ("parse.delimiters", "[\",\", \"、\", \"，\", \"\\n\"]", "tag separators in LLM output"),
    ("parse.min_tag_chars", "2", "shortest accepted tag"),
    ("parse.max_tag_chars", "64", "longest accepted tag"),
    ("parse.lowercase_fold", "false", "lowercase parsed tags"),
    ("llm.backend", "\"mock\"", "mock | openai"),
    ("llm.base_url", "\"https://api.openai.com/v1\"", "chat endpoint base"),
    ("llm.model", "\"gpt-3.5-turbo\"", "chat model"),
    ("llm.api_key_env", "\"OPENAI_API_KEY\"", "environment variable with the API key"),
    ("llm.timeout_s", "60", "per-request timeout"),
    ("llm.parallelism", "4", "concurrent requests"),
    ("llm.min_interval_ms", "250", "minimum spacing between requests"),
    ("llm.max_attempts", "4", "attempts per request"),
    ("llm.backoff_base_ms", "1000", "first retry delay, doubled per attempt"),
    ("llm.mock_top_j", "5", "mock: tags extracted per answer"),
    ("llm.mock_echo_count", "5", "mock: candidates echoed in selective prompts"),
    ("llm.mock_delimiter", "\"comma\"", "mock: answer delimiter"),
    ("llm.mock_anchor", "unset", "mock: read clues only after this marker"),
    ("encoder.backend", "\"hashing\"", "hashing | openai"),
    ("encoder.dim", "256", "vector dimension"),
    ("encoder.base_url", "\"https://api.openai.com/v1\"", "embeddings endpoint base"),
    ("encoder.model", "\"text-embedding-3-small\"", "embedding model"),
    ("encoder.api_key_env", "\"OPENAI_API_KEY\"", "environment variable with the API key"),
    ("encoder.batch_size", "64", "texts per embeddings request"),
    ("encoder.cache_path", "unset", "on-disk embedding cache"),
    ("builder.min_freq", "2", "drop tags from fewer entities"),
    ("builder.max_freq", "ceil(0.2 * entities)", "drop tags from more entities"),
    ("builder.unbounded_max", "false", "disable the upper frequency bound"),
    ("builder.fusion_threshold", "0.8", "cosine at which tags fuse"),
    ("tagger.accept_threshold", "0.8", "generative: minimum match cosine"),
    ("tagger.candidate_k", "50", "selective: candidates retrieved"),
    ("tagger.candidate_floor", "0.3", "selective: minimum candidate cosine"),
    ("tagger.max_tags_per_item", "10", "cap on assigned tags"),
    ("tagger.label_format", "\"{name}: {value}\"", "selective: query line format"),
    ("tagger.clue_order", "[]", "selective: query clue order (default: corpus.map order)"),
    ("metrics.threshold", "0.8", "cosine counted as redundant"),
];

pub fn keys_help() -> String {
    let width = KEYS.iter().map(|(k, _, _)| k.len()).max().unwrap_or(0);
    let mut out = String::from("Config keys (file or --set KEY=VALUE):\n");
    for (key, default, meaning) in KEYS {
        out.push_str(&format!("  {key:width$}  {meaning} [default: {default}]\n"));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub output_dir: PathBuf,
    pub deterministic: bool,
    pub corpus: CorpusSection,
    pub templates: TemplateSection,
    pub parse: ParseSection,
    pub llm: LlmSection,
    pub encoder: EncoderSection,
    pub builder: BuilderSection,
    pub tagger: TaggerSection,
    pub metrics: MetricsSection,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            output_dir: "out".into(),
            deterministic: false,
            corpus: CorpusSection::default(),
            templates: TemplateSection::default(),
            parse: ParseSection::default(),
            llm: LlmSection::default(),
            encoder: EncoderSection::default(),
            builder: BuilderSection::default(),
            tagger: TaggerSection::default(),
            metrics: MetricsSection::default(),
            base_dir: PathBuf::from("."),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSection {
    pub path: PathBuf,
    pub id_field: String,
    pub map: Vec<String>,
    pub hashtag_field: Option<String>,
    pub strict: bool,
    pub clue_budget: usize,
    pub clue_priority: Vec<String>,
}

impl Default for CorpusSection {
    fn default() -> Self {
        CorpusSection {
            path: "corpus.jsonl".into(),
            id_field: "id".into(),
            map: vec!["title=title".into()],
            hashtag_field: None,
            strict: true,
            clue_budget: tagkit_core::corpus::DEFAULT_CLUE_BUDGET,
            clue_priority: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TemplateSection {
    pub generate: Vec<PathBuf>,
    pub select: Option<PathBuf>,
    pub delimiter: DelimiterConvention,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParseSection {
    pub delimiters: Vec<String>,
    pub min_tag_chars: usize,
    pub max_tag_chars: usize,
    pub lowercase_fold: bool,
}

impl Default for ParseSection {
    fn default() -> Self {
        let d = ParseRules::default();
        ParseSection {
            delimiters: d.delimiters,
            min_tag_chars: d.min_tag_chars,
            max_tag_chars: d.max_tag_chars,
            lowercase_fold: d.lowercase_fold,
        }
    }
}

impl ParseSection {
    pub fn rules(&self) -> ParseRules {
        ParseRules {
            delimiters: self.delimiters.clone(),
            min_tag_chars: self.min_tag_chars,
            max_tag_chars: self.max_tag_chars,
            lowercase_fold: self.lowercase_fold,
            ..ParseRules::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LlmKind {
    Mock,
    Openai,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmSection {
    pub backend: LlmKind,
    pub base_url: String,
    pub model: String,
    pub api_key_env: String,
    pub timeout_s: u64,
    pub parallelism: usize,
    pub min_interval_ms: u64,
    pub max_attempts: u32,
    pub backoff_base_ms: u64,
    pub mock_top_j: usize,
    pub mock_echo_count: usize,
    pub mock_delimiter: DelimiterConvention,
    pub mock_anchor: Option<String>,
}

impl Default for LlmSection {
    fn default() -> Self {
        LlmSection {
            backend: LlmKind::Mock,
            base_url: "https://api.openai.com/v1".into(),
            model: "gpt-3.5-turbo".into(),
            api_key_env: "OPENAI_API_KEY".into(),
            timeout_s: 60,
            parallelism: 4,
            min_interval_ms: 250,
            max_attempts: 4,
            backoff_base_ms: 1000,
            mock_top_j: 5,
            mock_echo_count: 5,
            mock_delimiter: DelimiterConvention::Comma,
            mock_anchor: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    Hashing,
    Openai,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderSection {
    pub backend: EncoderKind,
    pub dim: usize,
    pub base_url: String,
    pub model: String,
    pub api_key_env: String,
    pub batch_size: usize,
    pub cache_path: Option<PathBuf>,
}

impl Default for EncoderSection {
    fn default() -> Self {
        EncoderSection {
            backend: EncoderKind::Hashing,
            dim: tagkit_core::embed::DEFAULT_DIM,
            base_url: "https://api.openai.com/v1".into(),
            model: "text-embedding-3-small".into(),
            api_key_env: "OPENAI_API_KEY".into(),
            batch_size: 64,
            cache_path: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BuilderSection {
    pub min_freq: usize,
    pub max_freq: Option<usize>,
    pub unbounded_max: bool,
    pub fusion_threshold: f64,
}

impl Default for BuilderSection {
    fn default() -> Self {
        BuilderSection {
            min_freq: tagkit_core::builder::DEFAULT_MIN_FREQ,
            max_freq: None,
            unbounded_max: false,
            fusion_threshold: tagkit_core::builder::DEFAULT_SIMILARITY_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaggerSection {
    pub accept_threshold: f64,
    pub candidate_k: usize,
    pub candidate_floor: f64,
    pub max_tags_per_item: usize,
    pub label_format: String,
    pub clue_order: Vec<String>,
}

impl Default for TaggerSection {
    fn default() -> Self {
        let d = tagkit_core::tagger::TaggerConfig::default();
        TaggerSection {
            accept_threshold: d.accept_threshold,
            candidate_k: d.candidate_k,
            candidate_floor: d.candidate_floor,
            max_tags_per_item: d.max_tags_per_item,
            label_format: d.label_format,
            clue_order: d.clue_order,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsSection {
    pub threshold: f64,
}

impl Default for MetricsSection {
    fn default() -> Self {
        MetricsSection {
            threshold: tagkit_core::builder::DEFAULT_SIMILARITY_THRESHOLD,
        }
    }
}

/// Parses a `--set` value as a TOML value, falling back to a bare string.
fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn apply_override(root: &mut toml::Table, assignment: &str) -> Result<(), String> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| format!("override {assignment:?} is not KEY=VALUE"))?;
    let key = key.trim();
    if !KEYS.iter().any(|(k, _, _)| *k == key) {
        return Err(format!("unknown config key {key:?}; run `tagkit validate` for the list"));
    }
    let mut parts: Vec<&str> = key.split('.').collect();
    let leaf = parts.pop().expect("split yields at least one part");
    let mut table = root;
    for part in parts {
        table = table
            .entry(part)
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| format!("{part} is not a table"))?;
    }
    table.insert(leaf.to_string(), parse_value(raw.trim()));
    Ok(())
}

impl RunConfig {
    /// Reads `path` (if any) and applies overrides in order.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig, String> {
        let (mut table, base_dir) = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| format!("cannot read config {}: {e}", p.display()))?;
                let table: toml::Table =
                    toml::from_str(&text).map_err(|e| format!("config {}: {e}", p.display()))?;
                let dir = p.parent().map(Path::to_path_buf).unwrap_or_default();
                (table, if dir.as_os_str().is_empty() { PathBuf::from(".") } else { dir })
            }
            None => (toml::Table::new(), PathBuf::from(".")),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let mut cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| e.to_string())?;
        cfg.base_dir = base_dir;
        Ok(cfg)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(&self.output_dir)
    }

    /// Range checks that do not touch the filesystem.
    pub fn check_ranges(&self) -> Result<(), String> {
        let unit = |name: &str, x: f64| {
            if x > 0.0 && x <= 1.0 {
                Ok(())
            } else {
                Err(format!("{name} = {x} must lie in (0, 1]"))
            }
        };
        unit("builder.fusion_threshold", self.builder.fusion_threshold)?;
        unit("tagger.accept_threshold", self.tagger.accept_threshold)?;
        unit("tagger.candidate_floor", self.tagger.candidate_floor)?;
        unit("metrics.threshold", self.metrics.threshold)?;
        if self.builder.min_freq == 0 {
            return Err("builder.min_freq must be >= 1".into());
        }
        if let Some(max) = self.builder.max_freq {
            if max < self.builder.min_freq {
                return Err(format!(
                    "builder.max_freq {max} is below builder.min_freq {}",
                    self.builder.min_freq
                ));
            }
        }
        if self.llm.parallelism == 0 || self.llm.max_attempts == 0 {
            return Err("llm.parallelism and llm.max_attempts must be >= 1".into());
        }
        if self.tagger.candidate_k == 0 || self.tagger.max_tags_per_item == 0 {
            return Err("tagger.candidate_k and tagger.max_tags_per_item must be >= 1".into());
        }
        if self.corpus.map.is_empty() {
            return Err("corpus.map needs at least one clue=source entry".into());
        }
        self.parse.rules().validate().map_err(|e| e.to_string())
    }
}
