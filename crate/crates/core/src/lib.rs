//! Benchmark harness for LLM-based log parsing.
//!
//! The pipeline runs in stages, each usable on its own:
//!
//! * [`corpus`] loads (message, ground-truth template) pairs grouped by project.
//! * [`prompting`] renders zero-shot and few-shot prompts around a single message.
//! * [`llm_client`] sends prompts to a chat-completion provider, or replays recorded
//!   answers, and persists every response in an append-only cache.
//! * [`extraction`] finds the template inside a raw response and classifies
//!   malformed answers.
//! * [`normalization`] rewrites the many placeholder notations models invent into `<*>`.
//! * [`metrics`] scores a template against its ground truth (PA, ED, LCS and the
//!   normalized similarities).
//! * [`analysis`] aggregates scores per configuration, ranks configurations under nine
//!   metric variants and correlates the resulting rankings.
//! * [`cli`] wires the stages into `query`, `score` and `report` commands.

pub mod analysis;
pub mod cli;
pub mod corpus;
pub mod extraction;
pub mod hashing;
pub mod llm_client;
pub mod metrics;
pub mod normalization;
pub mod prompting;

pub use analysis::{AggregateReport, ConfigId, MetricId, RankTable};
pub use corpus::{Corpus, LogRecord, Manifest};
pub use extraction::{ExtractionClass, TemplateCandidate};
pub use llm_client::{ModelResponse, ProviderConfig, ResponseStatus};
pub use metrics::ScoreRow;
pub use normalization::{NormalizationRule, NormalizedTemplate, RuleSet};
pub use prompting::{PromptMode, PromptSpec, RenderedPrompt};
