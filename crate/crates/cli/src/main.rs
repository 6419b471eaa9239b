//! `tagkit`: build a tag system from a corpus, tag new items, evaluate.
//!
//! Exit codes: 0 success, 2 configuration, 3 I/O or format, 4 data
//! mismatch, 5 backend failure.

mod commands;
mod config;
mod exit;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use tagkit_core::tagger::TaggingMode;

use crate::commands::{EvalArgs, SynthArgs, TagArgs};
use crate::config::RunConfig;
use crate::exit::CliError;

#[derive(Parser)]
#[command(name = "tagkit", version, about = "Zero-shot tag-system construction and tagging")]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// TOML config file.
    #[arg(short, long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override a config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Replace corpus.map; repeatable, in clue order.
    #[arg(long, value_name = "CLUE=SOURCE")]
    map: Vec<String>,
    /// Override corpus.id_field.
    #[arg(long, value_name = "FIELD")]
    id_field: Option<String>,
    /// Override llm.parallelism.
    #[arg(long, value_name = "N")]
    parallelism: Option<usize>,
    /// Fixed clock and jitter-free retries.
    #[arg(long)]
    deterministic: bool,
    /// Override output_dir (relative to the working directory).
    #[arg(short, long, value_name = "DIR")]
    output_dir: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Generative,
    Selective,
}

#[derive(Subcommand)]
enum Command {
    /// Build a tag system from the configured corpus.
    Build {
        #[command(flatten)]
        common: Common,
    },
    /// Assign tags to items with an existing tag system.
    Tag {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "generative")]
        mode: Mode,
        /// Corpus to tag [default: corpus.path].
        #[arg(long, value_name = "FILE")]
        input: Option<PathBuf>,
        /// Tag system [default: <output_dir>/tag_system.json].
        #[arg(long, value_name = "FILE")]
        tag_system: Option<PathBuf>,
        /// Assignments file [default: <output_dir>/assignments_<mode>.jsonl].
        #[arg(long, value_name = "FILE")]
        output: Option<PathBuf>,
    },
    /// Compute quality metrics for a tag system, assignments or human tags.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Tag system [default: <output_dir>/tag_system.json].
        #[arg(long, value_name = "FILE")]
        tag_system: Option<PathBuf>,
        /// Assignments produced by `tag`.
        #[arg(long, value_name = "FILE", conflicts_with = "use_ground_truth")]
        assignments: Option<PathBuf>,
        /// Evaluate the corpus hashtags instead of a built system.
        #[arg(long)]
        use_ground_truth: bool,
        /// Report path [default: <output_dir>/report_<source>.json].
        #[arg(long, value_name = "FILE")]
        report: Option<PathBuf>,
    },
    /// Check a configuration and print every key.
    Validate {
        #[command(flatten)]
        common: Common,
    },
    /// Write a seeded synthetic corpus.
    Synth {
        #[arg(long, default_value_t = 600)]
        count: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, value_name = "FILE", default_value = "corpus.jsonl")]
        out: PathBuf,
        /// Also write this many holdout records (seed + 1).
        #[arg(long, default_value_t = 0)]
        holdout: usize,
        /// Holdout path [default: holdout.jsonl next to --out].
        #[arg(long, value_name = "FILE")]
        holdout_out: Option<PathBuf>,
    },
}

fn load_config(common: &Common) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::load(common.config.as_deref(), &common.set).map_err(CliError::config)?;
    if !common.map.is_empty() {
        cfg.corpus.map = common.map.clone();
    }
    if let Some(id) = &common.id_field {
        cfg.corpus.id_field = id.clone();
    }
    if let Some(p) = common.parallelism {
        cfg.llm.parallelism = p;
    }
    if common.deterministic {
        cfg.deterministic = true;
    }
    if let Some(dir) = &common.output_dir {
        cfg.output_dir = std::path::absolute(dir).unwrap_or_else(|_| dir.clone());
    }
    Ok(cfg)
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Build { common } => commands::build(&load_config(&common)?),
        Command::Tag {
            common,
            mode,
            input,
            tag_system,
            output,
        } => commands::tag(
            &load_config(&common)?,
            &TagArgs {
                mode: match mode {
                    Mode::Generative => TaggingMode::Generative,
                    Mode::Selective => TaggingMode::Selective,
                },
                input,
                tag_system,
                output,
            },
        ),
        Command::Eval {
            common,
            tag_system,
            assignments,
            use_ground_truth,
            report,
        } => commands::eval(
            &load_config(&common)?,
            &EvalArgs {
                tag_system,
                assignments,
                use_ground_truth,
                report,
            },
        )
        .map(|_| ()),
        Command::Validate { common } => commands::validate(&load_config(&common)?),
        Command::Synth {
            count,
            seed,
            out,
            holdout,
            holdout_out,
        } => commands::synth(&SynthArgs {
            count,
            seed,
            out,
            holdout,
            holdout_out,
        }),
    }
}

fn main() -> ExitCode {
    let keys = config::keys_help();
    let mut command = Cli::command();
    for name in ["build", "tag", "eval", "validate"] {
        command = command.mut_subcommand(name, |sub| sub.after_help(keys.clone()));
    }
    let cli = match Cli::from_arg_matches(&command.get_matches()) {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();

    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}
