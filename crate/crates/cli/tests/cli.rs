use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tagkit_core::builder::load_tag_system;
use tagkit_core::embed::HashingEncoder;
use tagkit_core::llm::MockLlm;
use tagkit_core::metrics::{self, ItemTags};
use tagkit_core::prompt::PromptTemplate;
use tagkit_core::synth::{self, SynthConfig};
use tagkit_core::tagger::{read_assignments, AssignmentLine, Tagger, TaggerConfig, TaggingMode};

const BIN: &str = env!("CARGO_BIN_EXE_tagkit");

struct Workspace {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Workspace {
    fn new(count: usize) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let recs = synth::generate(&SynthConfig {
            count,
            ..SynthConfig::default()
        });
        std::fs::write(root.join("corpus.jsonl"), synth::to_jsonl(&recs)).unwrap();
        let holdout = synth::generate(&SynthConfig {
            count: 40,
            seed: 8,
            id_prefix: "hold".into(),
            ..SynthConfig::default()
        });
        std::fs::write(root.join("holdout.jsonl"), synth::to_jsonl(&holdout)).unwrap();
        let templates = Path::new(env!("CARGO_MANIFEST_DIR")).join("templates");
        for t in ["generate_en.txt", "select_en.txt"] {
            std::fs::copy(templates.join(t), root.join(t)).unwrap();
        }
        std::fs::write(
            root.join("run.toml"),
            r#"output_dir = "out"
deterministic = true
[corpus]
path = "corpus.jsonl"
map = ["title=title", "category=category", "asr=asr", "ocr=ocr"]
hashtag_field = "hashtags"
[templates]
generate = ["generate_en.txt"]
select = "select_en.txt"
"#,
        )
        .unwrap();
        Workspace { _dir: dir, root }
    }

    fn run(&self, args: &[&str]) -> Output {
        let config = self.root.join("run.toml");
        let mut cmd = Command::new(BIN);
        cmd.arg(args[0]);
        if args[0] != "synth" {
            cmd.arg("-c").arg(&config);
        }
        cmd.args(&args[1..]).current_dir(&self.root);
        cmd.output().unwrap()
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap_or(-1)
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn build_tag_eval_smoke() {
    let ws = Workspace::new(300);
    let b = ws.run(&["build"]);
    assert_eq!(code(&b), 0, "{}", stderr(&b));
    for f in ["tag_system.json", "raw_counts.json", "truncated_counts.json", "build_log.txt"] {
        assert!(ws.path("out").join(f).is_file(), "{f}");
    }
    for mode in ["generative", "selective"] {
        let t = ws.run(&["tag", "--mode", mode, "--input", "holdout.jsonl"]);
        assert_eq!(code(&t), 0, "{}", stderr(&t));
        assert!(String::from_utf8_lossy(&t.stdout).contains("40 items"));
    }
    let e = ws.run(&["eval", "--assignments", "out/assignments_generative.jsonl"]);
    assert_eq!(code(&e), 0, "{}", stderr(&e));
    let report = metrics::read_report(ws.path("out/report_assignments.json")).unwrap();
    assert_eq!(report.uniformity, 0.0);
    assert_eq!(report.tags_per_item.total, 40);
    let csv = std::fs::read_to_string(ws.path("out/report_assignments.tags_per_item.csv")).unwrap();
    assert!(csv.starts_with("bin,count\n"));
}

#[test]
fn cli_tagging_equals_library_tagging() {
    let ws = Workspace::new(300);
    assert_eq!(code(&ws.run(&["build"])), 0);
    let t = ws.run(&["tag", "--mode", "generative", "--input", "holdout.jsonl"]);
    assert_eq!(code(&t), 0, "{}", stderr(&t));
    let from_cli =
        read_assignments(std::fs::File::open(ws.path("out/assignments_generative.jsonl")).unwrap()).unwrap();

    let system = load_tag_system(ws.path("out/tag_system.json")).unwrap();
    let entities = tagkit_core::corpus::load_corpus(
        ws.path("holdout.jsonl"),
        &synth::schema(),
        Default::default(),
    )
    .unwrap()
    .entities;
    let template = PromptTemplate::load(ws.path("generate_en.txt")).unwrap();
    let llm = MockLlm::default();
    let enc = HashingEncoder::default();
    let cfg = TaggerConfig {
        clue_order: ["title", "category", "asr", "ocr"].map(String::from).to_vec(),
        ..TaggerConfig::default()
    };
    let tagger = Tagger::new(&system, &llm, &enc, cfg).unwrap().with_generative(template);
    let direct: Vec<AssignmentLine> = tagger
        .tag_batch(&entities, TaggingMode::Generative, 1)
        .iter()
        .map(AssignmentLine::from)
        .collect();
    assert_eq!(from_cli, direct);
}

#[test]
fn ground_truth_eval_equals_library_call() {
    let ws = Workspace::new(200);
    let e = ws.run(&["eval", "--use-ground-truth"]);
    assert_eq!(code(&e), 0, "{}", stderr(&e));
    let report = metrics::read_report(ws.path("out/report_ground_truth.json")).unwrap();

    let entities = synth::to_entities(&synth::generate(&SynthConfig {
        count: 200,
        ..SynthConfig::default()
    }));
    let enc = HashingEncoder::default();
    let items = ItemTags::from_ground_truth(&entities);
    let ts = metrics::tag_system_from_items(&items, tagkit_core::Encoder::name(&enc));
    let direct = metrics::compute_report(&ts, &items, &enc, 0.8, report.provenance.clone()).unwrap();
    assert_eq!(report, direct);
}

#[test]
fn empty_results_are_still_emitted() {
    let ws = Workspace::new(300);
    assert_eq!(code(&ws.run(&["build"])), 0);
    let t = ws.run(&[
        "tag",
        "--input",
        "holdout.jsonl",
        "--set",
        "tagger.accept_threshold=1.0",
        "--set",
        "llm.mock_top_j=1",
        "--map",
        "category=category",
    ]);
    assert_eq!(code(&t), 0, "{}", stderr(&t));
    let lines =
        read_assignments(std::fs::File::open(ws.path("out/assignments_generative.jsonl")).unwrap()).unwrap();
    assert_eq!(lines.len(), 40);
    assert!(lines.iter().any(|l| l.tags.is_empty() && l.error.is_none()));
}

#[test]
fn missing_template_is_config_error() {
    let ws = Workspace::new(50);
    let o = ws.run(&["build", "--set", "templates.generate=[\"nope.txt\"]"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("config validation"));
}

#[test]
fn unknown_key_is_config_error() {
    let ws = Workspace::new(50);
    assert_eq!(code(&ws.run(&["build", "--set", "builder.min_frequency=3"])), 2);
    assert_eq!(code(&ws.run(&["validate", "--set", "builder.fusion_threshold=1.5"])), 2);
}

#[test]
fn unloadable_tag_system_is_io_error() {
    let ws = Workspace::new(50);
    std::fs::create_dir_all(ws.path("out")).unwrap();
    std::fs::write(ws.path("out/tag_system.json"), "{\"format_version\":1,").unwrap();
    let o = ws.run(&["tag"]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert_eq!(code(&ws.run(&["tag", "--tag-system", "missing.json"])), 3);
}

#[test]
fn foreign_assignments_are_data_mismatch() {
    let ws = Workspace::new(300);
    assert_eq!(code(&ws.run(&["build"])), 0);
    std::fs::write(
        ws.path("foreign.jsonl"),
        "{\"id\":\"x\",\"mode\":\"generative\",\"tags\":[{\"tag\":\"not in system\",\"score\":0.9}]}\n",
    )
    .unwrap();
    let o = ws.run(&["eval", "--assignments", "foreign.jsonl"]);
    assert_eq!(code(&o), 4, "{}", stderr(&o));
}

#[test]
fn dimension_mismatch_is_data_mismatch() {
    let ws = Workspace::new(300);
    assert_eq!(code(&ws.run(&["build"])), 0);
    let o = ws.run(&["tag", "--input", "holdout.jsonl", "--set", "encoder.dim=64"]);
    assert_eq!(code(&o), 4, "{}", stderr(&o));
    assert!(stderr(&o).contains("embedding provenance mismatch"));
}

#[test]
fn unreachable_backend_is_backend_error() {
    let ws = Workspace::new(20);
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let o = Command::new(BIN)
        .args(["build", "-c"])
        .arg(ws.path("run.toml"))
        .args([
            "--set",
            "llm.backend=openai",
            "--set",
            &format!("llm.base_url=\"http://127.0.0.1:{port}/v1\""),
            "--set",
            "llm.api_key_env=TAGKIT_TEST_KEY",
            "--set",
            "llm.max_attempts=1",
            "--set",
            "llm.min_interval_ms=0",
        ])
        .env("TAGKIT_TEST_KEY", "sk-test")
        .output()
        .unwrap();
    assert_eq!(code(&o), 5, "{}", stderr(&o));
}

#[test]
fn missing_api_key_is_config_error() {
    let ws = Workspace::new(20);
    let o = Command::new(BIN)
        .args(["build", "-c"])
        .arg(ws.path("run.toml"))
        .args(["--set", "llm.backend=openai", "--set", "llm.api_key_env=TAGKIT_UNSET_KEY"])
        .env_remove("TAGKIT_UNSET_KEY")
        .output()
        .unwrap();
    assert_eq!(code(&o), 2);
}

#[test]
fn help_lists_every_config_key() {
    for sub in ["build", "tag", "eval", "validate"] {
        let o = Command::new(BIN).args([sub, "--help"]).output().unwrap();
        let text = String::from_utf8_lossy(&o.stdout);
        for key in [
            "output_dir",
            "corpus.map",
            "corpus.hashtag_field",
            "templates.select",
            "llm.backend",
            "llm.mock_top_j",
            "encoder.cache_path",
            "builder.fusion_threshold",
            "tagger.candidate_k",
            "metrics.threshold",
        ] {
            assert!(text.contains(key), "{sub} --help lacks {key}");
        }
    }
}

#[test]
fn validate_reports_ok() {
    let ws = Workspace::new(20);
    let o = ws.run(&["validate"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("configuration ok"));
    assert!(text.contains("fusion_threshold = 0.8"));
}

#[test]
fn synth_is_seeded() {
    let ws = Workspace::new(1);
    for name in ["a.jsonl", "b.jsonl"] {
        let o = ws.run(&["synth", "--count", "50", "--seed", "3", "--out", name]);
        assert_eq!(code(&o), 0);
    }
    assert_eq!(
        std::fs::read(ws.path("a.jsonl")).unwrap(),
        std::fs::read(ws.path("b.jsonl")).unwrap()
    );
}
