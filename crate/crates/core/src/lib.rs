//! Zero-shot tag-system construction and tagging for multimodal items that
//! have already been reduced to textual clues.
//!
//! The pipeline has two halves:
//!
//! * **Construction** ([`builder`]): every item is rendered through one or
//!   more instruction templates ([`prompt`]), completed by an LLM backend
//!   ([`llm`]), parsed into candidate tags, counted, truncated by frequency
//!   band and finally fused by embedding similarity ([`embed`]).
//! * **Tagging** ([`tagger`]): new items receive tags from an existing
//!   [`builder::TagSystem`] either generatively (free LLM output matched
//!   against the system by cosine similarity) or selectively (retrieve
//!   candidates first, let the LLM choose among them).
//!
//! [`metrics`] scores a tag system and a set of assignments for popularity,
//! tags-per-item, intra-item redundancy and uniformity.
//!
//! Compute-heavy loops run on rayon when the `parallel` feature is enabled
//! (the default) and fall back to plain iterators otherwise; see [`exec`].

pub mod builder;
pub mod corpus;
pub mod embed;
pub mod exec;
pub mod llm;
pub mod metrics;
pub mod prompt;
pub mod synth;
pub mod tagger;
mod union_find;

pub use builder::{TagRecord, TagSystem};
pub use corpus::{Entity, SchemaMap};
pub use embed::{EmbeddingVector, Encoder};
pub use exec::Execution;
pub use llm::{CompletionRequest, CompletionResult, LlmBackend};
