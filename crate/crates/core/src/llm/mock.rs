use std::collections::BTreeMap;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{CompletionRequest, CompletionResult, LlmBackend, LlmError};
use crate::prompt::DelimiterConvention;

/// Behaviour of the offline extractive backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MockConfig {
    /// Tags returned by extraction.
    pub top_j: usize,
    /// Candidates echoed back when the prompt carries a candidate region.
    pub echo_count: usize,
    pub delimiter: DelimiterConvention,
    pub quote_open: char,
    pub quote_close: char,
    /// Words linking a quoted label to its quoted value, e.g. `is`, `为`.
    pub connectors: Vec<String>,
    /// Label of the region holding selective candidates.
    pub candidates_label: String,
    /// When set and present, only text after its last occurrence is read.
    /// Lets templates carry a worked example without it leaking into output.
    pub anchor: Option<String>,
}

impl Default for MockConfig {
    fn default() -> Self {
        MockConfig {
            top_j: 5,
            echo_count: 5,
            delimiter: DelimiterConvention::Comma,
            quote_open: '"',
            quote_close: '"',
            connectors: vec!["is".into(), "为".into()],
            candidates_label: "candidates".into(),
            anchor: None,
        }
    }
}

/// Deterministic stand-in for a chat model.
///
/// Reads the clue regions a template emits (`"label" is "value"` or
/// `"label"为"value"`), tokenizes their values on whitespace, punctuation
/// and CJK/non-CJK boundaries, and answers with the most frequent tokens of
/// at least two characters (ties broken lexicographically). If a region is
/// labelled with `candidates_label`, the first `echo_count` listed
/// candidates are echoed instead. Output is a pure function of the prompt.
#[derive(Debug, Clone)]
pub struct MockLlm {
    config: MockConfig,
    region: Regex,
}

impl Default for MockLlm {
    fn default() -> Self {
        MockLlm::new(MockConfig::default())
    }
}

impl MockLlm {
    pub fn new(config: MockConfig) -> Self {
        let qo = regex::escape(&config.quote_open.to_string());
        let qc = regex::escape(&config.quote_close.to_string());
        let connectors = config
            .connectors
            .iter()
            .map(|c| regex::escape(c))
            .collect::<Vec<_>>()
            .join("|");
        let not_close = format!("[^{qc}]");
        let pattern = format!(
            r"{qo}({not_close}*){qc}\s*(?:{connectors})\s*{qo}({not_close}*){qc}"
        );
        let region = Regex::new(&pattern).expect("mock region pattern is valid");
        MockLlm { config, region }
    }

    pub fn config(&self) -> &MockConfig {
        &self.config
    }

    /// `(label, value)` pairs found in the prompt.
    pub fn clue_regions<'a>(&self, prompt: &'a str) -> Vec<(&'a str, &'a str)> {
        let scoped = match &self.config.anchor {
            Some(anchor) => prompt
                .rfind(anchor.as_str())
                .map_or(prompt, |at| &prompt[at + anchor.len()..]),
            None => prompt,
        };
        self.region
            .captures_iter(scoped)
            .filter_map(|caps| Some((caps.get(1)?.as_str(), caps.get(2)?.as_str())))
            .collect()
    }

    /// Computes the mock answer for a prompt.
    pub fn respond(&self, prompt: &str) -> String {
        let regions = self.clue_regions(prompt);
        if let Some((_, list)) = regions
            .iter()
            .find(|(label, _)| *label == self.config.candidates_label)
        {
            let echoed: Vec<&str> = list
                .split([',', '、', '，'])
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .take(self.config.echo_count)
                .collect();
            return self.config.delimiter.join(&echoed);
        }

        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for (_, value) in &regions {
            for token in tokenize(value) {
                *counts.entry(token).or_default() += 1;
            }
        }
        let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let top: Vec<String> = ranked
            .into_iter()
            .take(self.config.top_j)
            .map(|(t, _)| t)
            .collect();
        self.config.delimiter.join(&top)
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum CharClass {
    Word,
    Cjk,
    Break,
}

fn classify(c: char) -> CharClass {
    if crate::prompt::is_cjk(c) {
        CharClass::Cjk
    } else if c.is_alphanumeric() || c == '-' {
        CharClass::Word
    } else {
        CharClass::Break
    }
}

/// Lowercased runs of word or CJK characters, at least two characters long.
pub(crate) fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    let mut class = CharClass::Break;
    let flush = |current: &mut String, tokens: &mut Vec<String>| {
        let trimmed = current.trim_matches('-');
        if trimmed.chars().count() >= 2 {
            tokens.push(trimmed.to_string());
        }
        current.clear();
    };
    for c in text.chars().flat_map(char::to_lowercase) {
        let next = classify(c);
        if next != class {
            flush(&mut current, &mut tokens);
            class = next;
        }
        if next != CharClass::Break {
            current.push(c);
        }
    }
    flush(&mut current, &mut tokens);
    tokens
}

impl LlmBackend for MockLlm {
    fn name(&self) -> &str {
        "mock-extractive"
    }

    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResult, LlmError> {
        request.validate()?;
        let text: String = self
            .respond(&request.prompt)
            .chars()
            .take(request.max_output_chars)
            .collect();
        Ok(CompletionResult {
            text,
            backend_name: self.name().to_string(),
            latency_ms: 0,
            attempt_count: 1,
        })
    }
}

type Script = dyn Fn(&CompletionRequest) -> Result<String, LlmError> + Send + Sync;

/// Backend driven by a closure; for tests and fixtures.
pub struct ScriptedLlm {
    name: String,
    script: Box<Script>,
}

impl ScriptedLlm {
    pub fn new<F>(name: impl Into<String>, script: F) -> Self
    where
        F: Fn(&CompletionRequest) -> Result<String, LlmError> + Send + Sync + 'static,
    {
        ScriptedLlm {
            name: name.into(),
            script: Box::new(script),
        }
    }

    /// Always answers with `text`.
    pub fn constant(text: impl Into<String>) -> Self {
        let text = text.into();
        ScriptedLlm::new("scripted-constant", move |_| Ok(text.clone()))
    }
}

impl std::fmt::Debug for ScriptedLlm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ScriptedLlm").field("name", &self.name).finish()
    }
}

impl LlmBackend for ScriptedLlm {
    fn name(&self) -> &str {
        &self.name
    }

    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResult, LlmError> {
        let text = (self.script)(request)?;
        Ok(CompletionResult {
            text,
            backend_name: self.name.clone(),
            latency_ms: 0,
            attempt_count: 1,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ask(mock: &MockLlm, prompt: &str) -> String {
        mock.complete(&CompletionRequest::new(prompt)).unwrap().text
    }

    // Independent reference: whitespace split, count, sort.
    fn frequency_oracle(text: &str, j: usize) -> Vec<String> {
        let mut counts: Vec<(String, usize)> = Vec::new();
        for word in text.split_whitespace() {
            match counts.iter_mut().find(|(w, _)| w == word) {
                Some((_, n)) => *n += 1,
                None => counts.push((word.to_string(), 1)),
            }
        }
        counts.retain(|(w, _)| w.chars().count() >= 2);
        counts.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        counts.into_iter().take(j).map(|(w, _)| w).collect()
    }

    #[test]
    fn extracts_most_frequent_tokens() {
        let mock = MockLlm::default();
        assert_eq!(frequency_oracle("cat cat dog", 5).join(", "), "cat, dog");
        assert_eq!(ask(&mock, r#"an item whose "asr" is "cat cat dog""#), "cat, dog");
    }

    #[test]
    fn ties_break_lexicographically() {
        let mock = MockLlm::default();
        assert_eq!(ask(&mock, r#""title" is "b a""#), "");
        assert_eq!(ask(&mock, r#""title" is "bb aa""#), "aa, bb");
    }

    #[test]
    fn empty_regions_give_empty_output() {
        let mock = MockLlm::default();
        assert_eq!(ask(&mock, r#""title" is "", "asr" is """#), "");
        assert_eq!(ask(&mock, "no regions here"), "");
    }

    #[test]
    fn multiple_regions_are_pooled() {
        let mock = MockLlm::default();
        let out = ask(&mock, r#""title" is "pasta night", "asr" is "pasta sauce night night""#);
        assert_eq!(out, "night, pasta, sauce");
    }

    #[test]
    fn cjk_regions_and_boundaries() {
        let mock = MockLlm::new(MockConfig {
            delimiter: DelimiterConvention::IdeographicEnum,
            ..MockConfig::default()
        });
        let out = ask(&mock, r#""标题"为"美食vlog美食"，"类别"为"美食""#);
        assert_eq!(out, "美食、vlog");
    }

    #[test]
    fn echoes_candidates() {
        let mock = MockLlm::new(MockConfig {
            echo_count: 3,
            ..MockConfig::default()
        });
        let out = ask(&mock, r#""title" is "x", "candidates" is "aa, bb, cc, dd""#);
        assert_eq!(out, "aa, bb, cc");
    }

    #[test]
    fn anchor_scopes_regions() {
        let mock = MockLlm::new(MockConfig {
            anchor: Some("NEW ITEM".into()),
            ..MockConfig::default()
        });
        let out = ask(&mock, r#"example "title" is "ignored words" NEW ITEM "title" is "kept kept""#);
        assert_eq!(out, "kept");
    }

    #[test]
    fn pure_function_of_prompt() {
        let mock = MockLlm::default();
        let mut req = CompletionRequest::new(r#""t" is "one two two""#);
        let a = mock.complete(&req).unwrap();
        req.temperature = 1.5;
        let b = mock.complete(&req).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn tokenizer_splits_on_punctuation() {
        assert_eq!(tokenize("Hello, World! it's"), ["hello", "world", "it"]);
        assert_eq!(tokenize("low-carb -x-"), ["low-carb"]);
    }
}
