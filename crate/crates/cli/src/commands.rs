use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use serde::Serialize;
use tagkit_core::builder::{build_tag_system, load_tag_system, BuildConfig, TagSystem};
use tagkit_core::corpus::{load_corpus, LoadedCorpus, ParseMode, SchemaMap};
use tagkit_core::embed::{CachedEncoder, EmbeddingClient, EmbeddingConfig, HashingEncoder};
use tagkit_core::llm::{ChatClient, ChatConfig, MockConfig, MockLlm, RetryPolicy};
use tagkit_core::metrics::{self, ItemTags, Provenance, ReportFormat};
use tagkit_core::prompt::{PromptTemplate, SelectiveTemplate};
use tagkit_core::synth::{self, SynthConfig};
use tagkit_core::tagger::{
    read_assignments, write_assignments, AssignmentLine, Tagger, TaggerConfig, TaggingMode,
};
use tagkit_core::{Encoder, LlmBackend};

use crate::config::{keys_help, EncoderKind, LlmKind, RunConfig};
use crate::exit::{self, CliError};

type Result<T> = std::result::Result<T, CliError>;

pub const TAG_SYSTEM_FILE: &str = "tag_system.json";
pub const RAW_COUNTS_FILE: &str = "raw_counts.json";
pub const TRUNCATED_COUNTS_FILE: &str = "truncated_counts.json";
pub const BUILD_LOG_FILE: &str = "build_log.txt";

fn file_name(p: &Path) -> String {
    p.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| p.display().to_string())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| CliError::io(format!("cannot write {}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("artifact serializes");
    bytes.push(b'\n');
    write_file(path, &bytes)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(format!("cannot create {}: {e}", dir.display())))
}

fn retry_policy(cfg: &RunConfig) -> RetryPolicy {
    RetryPolicy {
        max_attempts: cfg.llm.max_attempts,
        base_delay: Duration::from_millis(cfg.llm.backoff_base_ms),
        deterministic: cfg.deterministic,
    }
}

fn api_key(var: &str) -> Result<String> {
    std::env::var(var)
        .ok()
        .filter(|k| !k.trim().is_empty())
        .ok_or_else(|| CliError::config(format!("environment variable {var} is not set")))
}

pub fn make_llm(cfg: &RunConfig) -> Result<Box<dyn LlmBackend>> {
    match cfg.llm.backend {
        LlmKind::Mock => Ok(Box::new(MockLlm::new(MockConfig {
            top_j: cfg.llm.mock_top_j,
            echo_count: cfg.llm.mock_echo_count,
            delimiter: cfg.llm.mock_delimiter,
            anchor: cfg.llm.mock_anchor.clone(),
            ..MockConfig::default()
        }))),
        LlmKind::Openai => {
            let mut chat = ChatConfig::new(cfg.llm.base_url.clone(), cfg.llm.model.clone());
            chat.api_key = Some(api_key(&cfg.llm.api_key_env)?);
            chat.timeout = Duration::from_secs(cfg.llm.timeout_s);
            chat.min_interval = Duration::from_millis(cfg.llm.min_interval_ms);
            chat.retry = retry_policy(cfg);
            Ok(Box::new(ChatClient::new(chat).map_err(CliError::config)?))
        }
    }
}

pub enum EncoderHandle {
    Plain(Box<dyn Encoder>),
    Cached(CachedEncoder<Box<dyn Encoder>>),
}

impl EncoderHandle {
    pub fn get(&self) -> &dyn Encoder {
        match self {
            EncoderHandle::Plain(e) => e.as_ref(),
            EncoderHandle::Cached(c) => c,
        }
    }

    pub fn flush(&self) -> Result<()> {
        if let EncoderHandle::Cached(c) = self {
            c.flush()?;
        }
        Ok(())
    }
}

pub fn make_encoder(cfg: &RunConfig) -> Result<EncoderHandle> {
    let inner: Box<dyn Encoder> = match cfg.encoder.backend {
        EncoderKind::Hashing => Box::new(HashingEncoder::new(cfg.encoder.dim)?),
        EncoderKind::Openai => {
            let mut ec = EmbeddingConfig::new(
                cfg.encoder.base_url.clone(),
                cfg.encoder.model.clone(),
                cfg.encoder.dim,
            );
            ec.api_key = Some(api_key(&cfg.encoder.api_key_env)?);
            ec.batch_size = cfg.encoder.batch_size;
            ec.timeout = Duration::from_secs(cfg.llm.timeout_s);
            ec.min_interval = Duration::from_millis(cfg.llm.min_interval_ms);
            ec.retry = retry_policy(cfg);
            Box::new(EmbeddingClient::new(ec)?)
        }
    };
    Ok(match &cfg.encoder.cache_path {
        Some(p) => {
            let path = cfg.resolve(p);
            if let Some(parent) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                ensure_dir(parent)?;
            }
            EncoderHandle::Cached(CachedEncoder::open(inner, path)?)
        }
        None => EncoderHandle::Plain(inner),
    })
}

pub fn schema(cfg: &RunConfig) -> Result<SchemaMap> {
    let mut schema = SchemaMap::from_specs(cfg.corpus.id_field.clone(), &cfg.corpus.map)?;
    if let Some(h) = &cfg.corpus.hashtag_field {
        schema = schema.with_hashtag_field(h.clone());
    }
    Ok(schema)
}

fn load_entities(cfg: &RunConfig, path: &Path) -> Result<LoadedCorpus> {
    if !path.exists() {
        return Err(CliError::config(format!("corpus file {} not found", path.display())));
    }
    let mode = if cfg.corpus.strict {
        ParseMode::Strict
    } else {
        ParseMode::Lenient
    };
    let loaded = load_corpus(path, &schema(cfg)?, mode)?;
    for skipped in &loaded.skipped {
        log::warn!("skipped corpus line: {skipped:?}");
    }
    Ok(loaded)
}

fn load_template(cfg: &RunConfig, path: &Path) -> Result<PromptTemplate> {
    let full = cfg.resolve(path);
    if !full.is_file() {
        return Err(CliError::config(format!("template file {} not found", full.display())));
    }
    Ok(PromptTemplate::load(&full)?.with_delimiter(cfg.templates.delimiter))
}

fn generation_templates(cfg: &RunConfig) -> Result<Vec<PromptTemplate>> {
    if cfg.templates.generate.is_empty() {
        return Err(CliError::config("templates.generate lists no template"));
    }
    cfg.templates.generate.iter().map(|p| load_template(cfg, p)).collect()
}

fn selective_template(cfg: &RunConfig) -> Result<SelectiveTemplate> {
    let path = cfg
        .templates
        .select
        .as_ref()
        .ok_or_else(|| CliError::config("templates.select is not set"))?;
    Ok(SelectiveTemplate::new(load_template(cfg, path)?)?)
}

fn build_config(cfg: &RunConfig) -> BuildConfig {
    BuildConfig {
        parse_rules: cfg.parse.rules(),
        clue_budget: cfg.corpus.clue_budget,
        clue_priority: cfg.corpus.clue_priority.clone(),
        min_freq: cfg.builder.min_freq,
        max_freq: cfg.builder.max_freq,
        unbounded_max: cfg.builder.unbounded_max,
        fusion_threshold: cfg.builder.fusion_threshold,
        parallelism: cfg.llm.parallelism,
        fixed_clock: cfg.deterministic.then_some(0),
    }
}

pub fn tagger_config(cfg: &RunConfig) -> TaggerConfig {
    let clue_order = if cfg.tagger.clue_order.is_empty() {
        cfg.corpus
            .map
            .iter()
            .filter_map(|spec| spec.split_once('=').map(|(clue, _)| clue.trim().to_string()))
            .collect()
    } else {
        cfg.tagger.clue_order.clone()
    };
    TaggerConfig {
        accept_threshold: cfg.tagger.accept_threshold,
        candidate_k: cfg.tagger.candidate_k,
        candidate_floor: cfg.tagger.candidate_floor,
        max_tags_per_item: cfg.tagger.max_tags_per_item,
        clue_order,
        label_format: cfg.tagger.label_format.clone(),
        clue_budget: cfg.corpus.clue_budget,
        clue_priority: cfg.corpus.clue_priority.clone(),
        parse_rules: cfg.parse.rules(),
    }
}

pub fn build(cfg: &RunConfig) -> Result<()> {
    cfg.check_ranges().map_err(CliError::config)?;
    let templates = generation_templates(cfg)?;
    let llm = make_llm(cfg)?;
    let encoder = make_encoder(cfg)?;
    let corpus_path = cfg.resolve(&cfg.corpus.path);
    let loaded = load_entities(cfg, &corpus_path)?;
    let out_dir = cfg.output_dir();
    ensure_dir(&out_dir)?;

    let started = Instant::now();
    let bc = build_config(cfg);
    let out = build_tag_system(&loaded.entities, &templates, llm.as_ref(), encoder.get(), &bc)?;
    encoder.flush()?;
    let system = &out.system;
    let m = &system.manifest;

    write_file(&out_dir.join(TAG_SYSTEM_FILE), &system.to_bytes())?;
    write_json(&out_dir.join(RAW_COUNTS_FILE), &out.raw)?;
    write_json(&out_dir.join(TRUNCATED_COUNTS_FILE), &out.truncated)?;

    let aliases: usize = system.records().iter().map(|r| r.aliases.len()).sum();
    let mut log = vec![
        format!(
            "corpus: {} ({} entities, {} skipped lines, sha256 {})",
            file_name(&corpus_path),
            m.entity_count,
            loaded.skipped.len(),
            m.corpus_hash
        ),
        format!("templates: {}", m.template_ids.join(", ")),
        format!("llm: {}", m.llm_backend),
        format!("encoder: {}", m.encoder_backend),
        format!(
            "generate: {} raw tags, {} failed completions; {}",
            m.raw_tag_count,
            m.failed_completions,
            out.raw.frequency_summary()
        ),
        format!(
            "truncate: frequency band [{}, {}] kept {} tags",
            m.min_freq,
            m.max_freq.map_or("inf".into(), |x| x.to_string()),
            m.truncated_tag_count
        ),
        format!(
            "fuse: threshold {} -> {} tags ({} aliases merged)",
            system.fusion_threshold,
            system.len(),
            aliases
        ),
    ];
    for f in &out.raw.failures {
        log.push(format!("failure: {} / {}: {}", f.entity_id, f.template_id, f.error));
    }
    if !cfg.deterministic {
        log.push(format!("elapsed: {:.3}s", started.elapsed().as_secs_f64()));
    }
    write_file(&out_dir.join(BUILD_LOG_FILE), (log.join("\n") + "\n").as_bytes())?;

    println!(
        "built {} tags from {} entities ({} raw, {} after truncation) -> {}",
        system.len(),
        m.entity_count,
        m.raw_tag_count,
        m.truncated_tag_count,
        out_dir.join(TAG_SYSTEM_FILE).display()
    );
    Ok(())
}

fn load_system(path: &Path) -> Result<TagSystem> {
    if !path.exists() {
        return Err(CliError::io(format!("tag system {} not found", path.display())));
    }
    Ok(load_tag_system(path)?)
}

pub struct TagArgs {
    pub mode: TaggingMode,
    pub input: Option<PathBuf>,
    pub tag_system: Option<PathBuf>,
    pub output: Option<PathBuf>,
}

pub fn tag(cfg: &RunConfig, args: &TagArgs) -> Result<()> {
    cfg.check_ranges().map_err(CliError::config)?;
    let out_dir = cfg.output_dir();
    let ts_path = args.tag_system.clone().unwrap_or_else(|| out_dir.join(TAG_SYSTEM_FILE));
    let system = load_system(&ts_path)?;
    let llm = make_llm(cfg)?;
    let encoder = make_encoder(cfg)?;
    if let Some(w) = system.provenance_warning(encoder.get().name()) {
        eprintln!("warning: {w}");
    }
    let input = args.input.clone().unwrap_or_else(|| cfg.resolve(&cfg.corpus.path));
    let loaded = load_entities(cfg, &input)?;

    let mut tagger = Tagger::new(&system, llm.as_ref(), encoder.get(), tagger_config(cfg))?;
    tagger = match args.mode {
        TaggingMode::Generative => tagger.with_generative(generation_templates(cfg)?.remove(0)),
        TaggingMode::Selective => tagger.with_selective(selective_template(cfg)?),
    };
    let outcomes = tagger.tag_batch(&loaded.entities, args.mode, cfg.llm.parallelism);
    encoder.flush()?;
    let lines: Vec<AssignmentLine> = outcomes.iter().map(AssignmentLine::from).collect();

    let output = args
        .output
        .clone()
        .unwrap_or_else(|| out_dir.join(format!("assignments_{}.jsonl", args.mode)));
    if let Some(parent) = output.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(parent)?;
    }
    let file = fs::File::create(&output)
        .map_err(|e| CliError::io(format!("cannot write {}: {e}", output.display())))?;
    write_assignments(BufWriter::new(file), &lines)
        .map_err(|e| CliError::io(format!("cannot write {}: {e}", output.display())))?;

    let failed = lines.iter().filter(|l| l.error.is_some()).count();
    let tagged = lines.iter().filter(|l| !l.tags.is_empty()).count();
    let assigned: usize = lines.iter().map(|l| l.tags.len()).sum();
    for l in lines.iter().filter(|l| l.error.is_some()) {
        log::warn!("{}: {}", l.id, l.error.as_deref().unwrap_or_default());
    }
    println!(
        "{} tagging: {} items, {} with tags, {} empty, {} failed, {} assignments -> {}",
        args.mode,
        lines.len(),
        tagged,
        lines.len() - tagged - failed,
        failed,
        assigned,
        output.display()
    );
    if !lines.is_empty() && failed == lines.len() {
        return Err(CliError::new(exit::BACKEND, "every item failed; see warnings"));
    }
    Ok(())
}

pub struct EvalArgs {
    pub tag_system: Option<PathBuf>,
    pub assignments: Option<PathBuf>,
    pub use_ground_truth: bool,
    pub report: Option<PathBuf>,
}

pub fn eval(cfg: &RunConfig, args: &EvalArgs) -> Result<metrics::MetricsReport> {
    cfg.check_ranges().map_err(CliError::config)?;
    let encoder = make_encoder(cfg)?;
    let out_dir = cfg.output_dir();
    let ts_path = || args.tag_system.clone().unwrap_or_else(|| out_dir.join(TAG_SYSTEM_FILE));

    let (system, items, provenance) = if args.use_ground_truth {
        if cfg.corpus.hashtag_field.is_none() {
            return Err(CliError::config("--use-ground-truth needs corpus.hashtag_field"));
        }
        let corpus_path = cfg.resolve(&cfg.corpus.path);
        let loaded = load_entities(cfg, &corpus_path)?;
        let items = ItemTags::from_ground_truth(&loaded.entities);
        if items.iter().all(|i| i.tags.is_empty()) {
            return Err(CliError::mismatch(format!(
                "no entity in {} carries ground-truth tags",
                file_name(&corpus_path)
            )));
        }
        let system = metrics::tag_system_from_items(&items, encoder.get().name());
        let provenance = Provenance {
            source: "ground_truth".into(),
            tag_system_encoder: system.encoder_name.clone(),
            encoder: encoder.get().name().into(),
            input: Some(file_name(&corpus_path)),
        };
        (system, items, provenance)
    } else {
        let system = load_system(&ts_path())?;
        let (items, source, input) = match &args.assignments {
            Some(p) => {
                let file = fs::File::open(p)
                    .map_err(|e| CliError::io(format!("cannot read {}: {e}", p.display())))?;
                let lines = read_assignments(file)
                    .map_err(|e| CliError::io(format!("assignments {}: {e}", p.display())))?;
                for line in &lines {
                    if let Some(t) = line.tags.iter().find(|t| system.get(&t.tag).is_none()) {
                        return Err(CliError::mismatch(format!(
                            "item {} carries tag {:?}, absent from the tag system",
                            line.id, t.tag
                        )));
                    }
                }
                (ItemTags::from_assignments(&lines), "assignments", Some(file_name(p)))
            }
            None => (Vec::new(), "tag_system", None),
        };
        let provenance = Provenance {
            source: source.into(),
            tag_system_encoder: system.encoder_name.clone(),
            encoder: encoder.get().name().into(),
            input,
        };
        (system, items, provenance)
    };

    let report = metrics::compute_report(
        &system,
        &items,
        encoder.get(),
        cfg.metrics.threshold,
        provenance,
    )?;
    encoder.flush()?;
    for d in &report.diagnostics {
        eprintln!("note: {d}");
    }
    let path = args
        .report
        .clone()
        .unwrap_or_else(|| out_dir.join(format!("report_{}.json", report.provenance.source)));
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(parent)?;
    }
    metrics::emit_report(&report, &path, ReportFormat::Json)?;
    metrics::emit_report(&report, &path, ReportFormat::CsvHistograms)?;
    println!(
        "{}: {} tags, uniformity {:.4}, intra-item redundancy {:.4} at {} -> {}",
        report.provenance.source,
        report.tag_count,
        report.uniformity,
        report.intra_item_redundancy,
        report.threshold,
        path.display()
    );
    Ok(report)
}

pub fn validate(cfg: &RunConfig) -> Result<()> {
    cfg.check_ranges().map_err(CliError::config)?;
    let templates = generation_templates(cfg)?;
    if cfg.templates.select.is_some() {
        selective_template(cfg)?;
    }
    schema(cfg)?;
    let corpus_path = cfg.resolve(&cfg.corpus.path);
    if !corpus_path.is_file() {
        return Err(CliError::config(format!("corpus file {} not found", corpus_path.display())));
    }
    make_llm(cfg)?;
    make_encoder(cfg)?;

    let resolved = toml::to_string_pretty(cfg).map_err(CliError::config)?;
    println!("# resolved configuration\n{resolved}");
    println!(
        "# {} generation template(s): {}",
        templates.len(),
        templates.iter().map(|t| t.id()).collect::<Vec<_>>().join(", ")
    );
    println!("\n{}", keys_help());
    println!("configuration ok");
    Ok(())
}

pub struct SynthArgs {
    pub count: usize,
    pub seed: u64,
    pub out: PathBuf,
    pub holdout: usize,
    pub holdout_out: Option<PathBuf>,
}

pub fn synth(args: &SynthArgs) -> Result<()> {
    let write = |path: &Path, cfg: &SynthConfig| -> Result<()> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            ensure_dir(parent)?;
        }
        write_file(path, synth::to_jsonl(&synth::generate(cfg)).as_bytes())?;
        println!("wrote {} records -> {}", cfg.count, path.display());
        Ok(())
    };
    let main = SynthConfig {
        count: args.count,
        seed: args.seed,
        ..SynthConfig::default()
    };
    write(&args.out, &main)?;
    if args.holdout > 0 {
        let path = args
            .holdout_out
            .clone()
            .unwrap_or_else(|| args.out.with_file_name("holdout.jsonl"));
        write(
            &path,
            &SynthConfig {
                count: args.holdout,
                seed: args.seed.wrapping_add(1),
                id_prefix: "hold".into(),
                ..SynthConfig::default()
            },
        )?;
    }
    Ok(())
}
