//! Process exit codes and the mapping from library errors onto them.

use std::fmt;

use tagkit_core::builder::{BuildError, StoreError};
use tagkit_core::corpus::CorpusError;
use tagkit_core::embed::EmbedError;
use tagkit_core::metrics::MetricsError;
use tagkit_core::prompt::PromptError;
use tagkit_core::tagger::TagError;

pub const CONFIG: u8 = 2;
pub const IO_FORMAT: u8 = 3;
pub const DATA_MISMATCH: u8 = 4;
pub const BACKEND: u8 = 5;

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn new(code: u8, message: impl Into<String>) -> Self {
        CliError {
            code,
            message: message.into(),
        }
    }

    pub fn config(message: impl fmt::Display) -> Self {
        CliError::new(CONFIG, format!("config validation: {message}"))
    }

    pub fn io(message: impl fmt::Display) -> Self {
        CliError::new(IO_FORMAT, message.to_string())
    }

    pub fn mismatch(message: impl fmt::Display) -> Self {
        CliError::new(DATA_MISMATCH, format!("data mismatch: {message}"))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

pub fn embed_code(e: &EmbedError) -> u8 {
    match e {
        EmbedError::DimensionMismatch { .. } => DATA_MISMATCH,
        EmbedError::Config(_) => CONFIG,
        EmbedError::Backend(_) => BACKEND,
        EmbedError::Cache(_) => IO_FORMAT,
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        match e {
            CorpusError::InvalidSchema(_) | CorpusError::InvalidClueName(_) => CliError::config(e),
            other => CliError::io(format!("corpus: {other}")),
        }
    }
}

impl From<PromptError> for CliError {
    fn from(e: PromptError) -> Self {
        CliError::config(e)
    }
}

impl From<StoreError> for CliError {
    fn from(e: StoreError) -> Self {
        CliError::io(e)
    }
}

impl From<EmbedError> for CliError {
    fn from(e: EmbedError) -> Self {
        CliError::new(embed_code(&e), format!("encoder: {e}"))
    }
}

impl From<BuildError> for CliError {
    fn from(e: BuildError) -> Self {
        let code = match &e {
            BuildError::Config(_) => CONFIG,
            BuildError::Generate(_) => BACKEND,
            BuildError::Truncate(_) | BuildError::Fuse(_) => DATA_MISMATCH,
            BuildError::Encode { source, .. } => embed_code(source),
        };
        CliError::new(code, format!("build failed: {e}"))
    }
}

impl From<TagError> for CliError {
    fn from(e: TagError) -> Self {
        let code = match &e {
            TagError::EmptySystem => DATA_MISMATCH,
            TagError::Config(_) | TagError::MissingTemplate(_) | TagError::Prompt(_) => CONFIG,
            TagError::Llm(_) => BACKEND,
            TagError::Embed(inner) => embed_code(inner),
        };
        CliError::new(code, format!("tagging failed: {e}"))
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        let code = match &e {
            MetricsError::Threshold(_) => CONFIG,
            MetricsError::Embed(inner) => embed_code(inner),
            MetricsError::Io { .. } => IO_FORMAT,
        };
        CliError::new(code, format!("eval failed: {e}"))
    }
}
