use tagkit_core::builder::{build_tag_system, BuildConfig, BuildOutput};
use tagkit_core::embed::{CachedEncoder, HashingEncoder};
use tagkit_core::llm::MockLlm;
use tagkit_core::metrics::{self, ItemTags};
use tagkit_core::prompt::{PromptTemplate, SelectiveTemplate};
use tagkit_core::synth::{generate, to_entities, SynthConfig};
use tagkit_core::tagger::{AssignmentLine, Tagger, TaggerConfig, TaggingMode};
use tagkit_core::{Encoder, Entity};

const GENERATE: &str = r#"Clues from one short video.
The "title" is "{title}", the "category" is "{category}", the "speech" is "{asr}" and the "screen text" is "{ocr}".
Reply with up to five comma-separated topic tags."#;

const SELECT: &str = r#"The "title" is "{title}" and the "speech" is "{asr}".
Pick the tags that fit from this list. The "candidates" is "{candidates}"."#;

fn corpus(count: usize, seed: u64) -> Vec<Entity> {
    to_entities(&generate(&SynthConfig {
        count,
        seed,
        ..SynthConfig::default()
    }))
}

fn build(corpus: &[Entity], cfg: &BuildConfig) -> BuildOutput {
    let template = PromptTemplate::parse("generate.txt", GENERATE).unwrap();
    build_tag_system(
        corpus,
        &[template],
        &MockLlm::default(),
        &HashingEncoder::default(),
        cfg,
    )
    .unwrap()
}

fn fixed() -> BuildConfig {
    BuildConfig {
        fixed_clock: Some(0),
        ..BuildConfig::default()
    }
}

#[test]
fn build_is_redundancy_free_and_fuses_variants() {
    let out = build(&corpus(600, 7), &fixed());
    let enc = HashingEncoder::default();
    assert!(out.system.len() > 50);
    assert_eq!(metrics::uniformity(&out.system, &enc, 0.8).unwrap().value, 0.0);
    assert!(out.system.records().iter().any(|r| !r.aliases.is_empty()));
    assert!(out.system.len() < out.truncated.tags.len());
    assert_eq!(out.system.manifest.entity_count, 600);
    assert_eq!(out.system.manifest.raw_tag_count, out.raw.tags.len());
}

#[test]
fn truncation_band_and_min_freq_monotonicity() {
    let entities = corpus(500, 11);
    let mut last = usize::MAX;
    for min_freq in [1, 2, 4, 8, 16] {
        let cfg = BuildConfig {
            min_freq,
            ..fixed()
        };
        let out = build(&entities, &cfg);
        let max = cfg.resolve_max_freq(entities.len()).unwrap();
        for stat in out.truncated.tags.values() {
            assert!(stat.frequency >= min_freq && stat.frequency <= max);
        }
        assert!(out.truncated.tags.len() <= last);
        last = out.truncated.tags.len();
    }
}

#[test]
fn build_is_independent_of_parallelism() {
    let entities = corpus(300, 3);
    let bytes = |p| {
        build(
            &entities,
            &BuildConfig {
                parallelism: p,
                ..fixed()
            },
        )
        .system
        .to_bytes()
    };
    let one = bytes(1);
    assert_eq!(one, bytes(3));
    assert_eq!(one, bytes(8));
}

#[test]
fn cached_encoder_is_transparent() {
    let entities = corpus(200, 5);
    let template = PromptTemplate::parse("generate.txt", GENERATE).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let cached = CachedEncoder::open(HashingEncoder::default(), dir.path().join("cache.jsonl")).unwrap();
    let a = build_tag_system(&entities, std::slice::from_ref(&template), &MockLlm::default(), &cached, &fixed()).unwrap();
    cached.flush().unwrap();
    let reopened = CachedEncoder::open(HashingEncoder::default(), dir.path().join("cache.jsonl")).unwrap();
    assert!(!reopened.is_empty());
    let b = build_tag_system(&entities, &[template], &MockLlm::default(), &reopened, &fixed()).unwrap();
    assert_eq!(a.system.to_bytes(), b.system.to_bytes());
    assert_eq!(cached.name(), HashingEncoder::default().name());
}

#[test]
fn tagging_holdout_respects_closed_world() {
    let out = build(&corpus(600, 7), &fixed());
    let holdout = to_entities(&generate(&SynthConfig {
        count: 200,
        seed: 99,
        id_prefix: "hold".into(),
        ..SynthConfig::default()
    }));
    let enc = HashingEncoder::default();
    let llm = MockLlm::default();
    let cfg = TaggerConfig {
        candidate_k: 10,
        ..TaggerConfig::default()
    };
    let tagger = Tagger::new(&out.system, &llm, &enc, cfg)
        .unwrap()
        .with_generative(PromptTemplate::parse("generate.txt", GENERATE).unwrap())
        .with_selective(SelectiveTemplate::new(PromptTemplate::parse("select.txt", SELECT).unwrap()).unwrap());

    let mut assigned = 0;
    for outcome in tagger.tag_batch(&holdout, TaggingMode::Generative, 4) {
        for a in outcome.result.unwrap().tags {
            assert!(a.score >= 0.8);
            assert!(out.system.get(&a.tag).is_some());
            assigned += 1;
        }
    }
    assert!(assigned > 200);

    for e in &holdout {
        let r = tagger.tag_selective(e).unwrap();
        assert!(r.candidates.len() <= 10);
        for a in &r.tags {
            assert!(r.candidates.contains(&a.tag));
        }
    }
}

#[test]
fn ground_truth_and_assignments_share_metrics() {
    let entities = corpus(300, 21);
    let out = build(&entities, &fixed());
    let enc = HashingEncoder::default();
    let truth = ItemTags::from_ground_truth(&entities);
    assert_eq!(truth.len(), 300);
    let human = metrics::tag_system_from_items(&truth, enc.name());
    let report = metrics::compute_report(&human, &truth, &enc, 0.8, Default::default()).unwrap();
    assert_eq!(report.tags_per_item.total, 300);
    assert_eq!(report.popularity.total as usize, human.len());
    // Human hashtags keep plural variants apart, so some pairs are redundant.
    assert!(report.uniformity > 0.0);

    let llm = MockLlm::default();
    let tagger = Tagger::new(&out.system, &llm, &enc, TaggerConfig::default())
        .unwrap()
        .with_generative(PromptTemplate::parse("generate.txt", GENERATE).unwrap());
    let lines: Vec<AssignmentLine> = tagger
        .tag_batch(&entities, TaggingMode::Generative, 2)
        .iter()
        .map(AssignmentLine::from)
        .collect();
    let items = ItemTags::from_assignments(&lines);
    let report = metrics::compute_report(&out.system, &items, &enc, 0.8, Default::default()).unwrap();
    assert_eq!(report.uniformity, 0.0);
    assert_eq!(report.tags_per_item.total, 300);
}
