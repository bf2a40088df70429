//! Prompt construction: a fixed instruction prefix, an optional block of Q&A
//! examples, and the target message wrapped in message tags.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{validate_ground_truth, Corpus, LogRecord};
use crate::hashing::ContentHasher;

pub const DEFAULT_PROMPT_TOML: &str = include_str!("../data/default_prompt.toml");

#[derive(Debug, thiserror::Error)]
pub enum PromptError {
    #[error("{path}: parse error at line {line}, column {column}: {message}")]
    Parse {
        path: String,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("few-shot mode requires at least one example")]
    NoExamples,
    #[error("example {index}: answer `{answer}` is not a canonical template ({reason})")]
    NonCanonicalAnswer {
        index: usize,
        answer: String,
        reason: String,
    },
    #[error("example {index}: question equals corpus message of record {record_id}")]
    ExampleInCorpus { index: usize, record_id: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptMode {
    ZeroShot,
    FewShot,
}

impl PromptMode {
    /// Short label used in configuration ids and file names.
    pub fn short(self) -> &'static str {
        match self {
            PromptMode::ZeroShot => "zero",
            PromptMode::FewShot => "few",
        }
    }
}

impl fmt::Display for PromptMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short())
    }
}

impl FromStr for PromptMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "zero" | "zero_shot" | "zero-shot" => Ok(PromptMode::ZeroShot),
            "few" | "few_shot" | "few-shot" => Ok(PromptMode::FewShot),
            other => Err(format!("unknown prompt mode `{other}` (expected zero or few)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FewShotExample {
    pub question: String,
    pub answer: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Tags {
    pub msg_open: String,
    pub msg_close: String,
    pub tpl_open: String,
    pub tpl_close: String,
}

impl Default for Tags {
    fn default() -> Self {
        Self {
            msg_open: "<MSG>".into(),
            msg_close: "</MSG>".into(),
            tpl_open: "<TPL>".into(),
            tpl_close: "</TPL>".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSpec {
    pub mode: PromptMode,
    #[serde(rename = "prefix")]
    pub prefix_text: String,
    #[serde(default, rename = "example")]
    pub examples: Vec<FewShotExample>,
    #[serde(default)]
    pub tags: Tags,
    /// Where the prefix and examples came from, e.g. "transcribed" or "authored-equivalent".
    #[serde(default = "unspecified")]
    pub provenance: String,
}

fn unspecified() -> String {
    "unspecified".into()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub text: String,
    pub record_id: String,
    pub mode: PromptMode,
    /// The target message itself contains one of the message or template tags, so
    /// tag-based parsing of the prompt or of an echoed response is ambiguous.
    pub tag_collision: bool,
}

impl PromptSpec {
    pub fn from_toml_str(text: &str, origin: &str) -> Result<Self, PromptError> {
        let spec: PromptSpec = toml::from_str(text).map_err(|e| {
            let (line, column) = e.span().map(|span| line_col(text, span.start)).unwrap_or((0, 0));
            PromptError::Parse {
                path: origin.to_string(),
                line,
                column,
                message: e.message().to_string(),
            }
        })?;
        spec.validate()?;
        Ok(spec)
    }

    /// The shipped four-example configuration.
    pub fn default_few_shot() -> Self {
        Self::from_toml_str(DEFAULT_PROMPT_TOML, "default_prompt.toml").expect("bundled prompt config is valid")
    }

    pub fn validate(&self) -> Result<(), PromptError> {
        if self.mode == PromptMode::FewShot && self.examples.is_empty() {
            return Err(PromptError::NoExamples);
        }
        for (index, ex) in self.examples.iter().enumerate() {
            if let Some(v) = validate_ground_truth(&ex.answer).first() {
                return Err(PromptError::NonCanonicalAnswer {
                    index,
                    answer: ex.answer.clone(),
                    reason: v.to_string(),
                });
            }
        }
        Ok(())
    }

    /// Same spec rendered in another mode. Switching to zero-shot keeps the examples
    /// but stops rendering them.
    pub fn with_mode(&self, mode: PromptMode) -> Result<Self, PromptError> {
        let spec = Self { mode, ..self.clone() };
        spec.validate()?;
        Ok(spec)
    }

    /// Rejects specs whose example questions coincide with a message under evaluation.
    pub fn check_against_corpus(&self, corpus: &Corpus) -> Result<(), PromptError> {
        for (index, ex) in self.examples.iter().enumerate() {
            if let Some(r) = corpus.records().iter().find(|r| r.content == ex.question) {
                return Err(PromptError::ExampleInCorpus {
                    index,
                    record_id: r.record_id.clone(),
                });
            }
        }
        Ok(())
    }

    pub fn content_hash(&self) -> String {
        let mut h = ContentHasher::new();
        h.field(self.mode.short())
            .field(&self.prefix_text)
            .field(&self.tags.msg_open)
            .field(&self.tags.msg_close)
            .field(&self.tags.tpl_open)
            .field(&self.tags.tpl_close);
        for ex in &self.examples {
            h.field(&ex.question).field(&ex.answer);
        }
        h.finish()
    }

    fn examples_block(&self) -> String {
        let mut out = String::new();
        for ex in &self.examples {
            out.push_str("Q: ");
            out.push_str(&ex.question);
            out.push_str("\nA: ");
            out.push_str(&self.tags.tpl_open);
            out.push_str(&ex.answer);
            out.push_str(&self.tags.tpl_close);
            out.push_str("\n\n");
        }
        out
    }
}

pub fn load_prompt_spec(path: &Path) -> Result<PromptSpec, PromptError> {
    let text = std::fs::read_to_string(path).map_err(|source| PromptError::Io {
        path: path.display().to_string(),
        source,
    })?;
    PromptSpec::from_toml_str(&text, &path.display().to_string())
}

/// Renders the prompt for one record. Layout: prefix, blank line, examples (few-shot
/// only), then `<MSG>message</MSG>` as the final line with no trailing newline.
pub fn render_prompt(spec: &PromptSpec, record: &LogRecord) -> Result<RenderedPrompt, PromptError> {
    if spec.mode == PromptMode::FewShot && spec.examples.is_empty() {
        return Err(PromptError::NoExamples);
    }
    let mut text = String::with_capacity(spec.prefix_text.len() + record.content.len() + 512);
    text.push_str(spec.prefix_text.trim());
    text.push_str("\n\n");
    if spec.mode == PromptMode::FewShot {
        text.push_str(&spec.examples_block());
    }
    text.push_str(&spec.tags.msg_open);
    text.push_str(&record.content);
    text.push_str(&spec.tags.msg_close);

    let t = &spec.tags;
    let tag_collision = [&t.msg_open, &t.msg_close, &t.tpl_open, &t.tpl_close]
        .iter()
        .any(|tag| record.content.contains(tag.as_str()));

    Ok(RenderedPrompt {
        text,
        record_id: record.record_id.clone(),
        mode: spec.mode,
        tag_collision,
    })
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, column)
}
