//! Finds the template inside a model response.
//!
//! A well-behaved answer contains exactly one `<TPL>…</TPL>` pair. Everything else is
//! classified so that malformed answers can be counted and handed to a reviewer:
//! responses with only one of the two tags, several pairs, no tags at all, an echo of
//! the prompt, or nothing.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::llm_client::{ModelResponse, ResponseStatus};

pub const DEFAULT_ECHO_THRESHOLD: f64 = 0.9;
const EXCERPT_CHARS: usize = 240;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtractionClass {
    WellFormed,
    SingleTagOnly,
    MultiplePairs,
    UntaggedPlaintext,
    EchoedPrompt,
    EmptyResponse,
    NotFound,
}

impl ExtractionClass {
    pub const ALL: [ExtractionClass; 7] = [
        ExtractionClass::WellFormed,
        ExtractionClass::SingleTagOnly,
        ExtractionClass::MultiplePairs,
        ExtractionClass::UntaggedPlaintext,
        ExtractionClass::EchoedPrompt,
        ExtractionClass::EmptyResponse,
        ExtractionClass::NotFound,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ExtractionClass::WellFormed => "well_formed",
            ExtractionClass::SingleTagOnly => "single_tag_only",
            ExtractionClass::MultiplePairs => "multiple_pairs",
            ExtractionClass::UntaggedPlaintext => "untagged_plaintext",
            ExtractionClass::EchoedPrompt => "echoed_prompt",
            ExtractionClass::EmptyResponse => "empty_response",
            ExtractionClass::NotFound => "not_found",
        }
    }
}

impl fmt::Display for ExtractionClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateCandidate {
    pub record_id: String,
    pub raw_template: Option<String>,
    pub extraction_class: ExtractionClass,
    pub needs_review: bool,
    /// Byte range of `raw_template` inside the response text.
    pub chosen_span: Option<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Extractor {
    pub tpl_open: String,
    pub tpl_close: String,
    /// Share of non-empty response lines that must occur verbatim in the prompt for
    /// the response to count as an echo.
    pub echo_threshold: f64,
}

impl Default for Extractor {
    fn default() -> Self {
        Self {
            tpl_open: "<TPL>".into(),
            tpl_close: "</TPL>".into(),
            echo_threshold: DEFAULT_ECHO_THRESHOLD,
        }
    }
}

/// Extraction with the default tags and echo threshold.
pub fn extract_template(response: &ModelResponse, rendered_prompt_text: &str) -> TemplateCandidate {
    Extractor::default().extract(response, rendered_prompt_text)
}

struct Found {
    class: ExtractionClass,
    span: Option<(usize, usize)>,
}

impl Extractor {
    pub fn extract(&self, response: &ModelResponse, rendered_prompt_text: &str) -> TemplateCandidate {
        let raw = if response.status == ResponseStatus::Ok {
            response.raw_text.as_str()
        } else {
            ""
        };
        let found = self.classify(raw, rendered_prompt_text);
        TemplateCandidate {
            record_id: response.record_id.clone(),
            raw_template: found.span.map(|(s, e)| raw[s..e].to_string()),
            extraction_class: found.class,
            needs_review: found.class != ExtractionClass::WellFormed,
            chosen_span: found.span,
        }
    }

    /// Classification as a pure function of the two texts.
    pub fn classify_text(&self, raw_text: &str, prompt_text: &str) -> (ExtractionClass, Option<(usize, usize)>) {
        let f = self.classify(raw_text, prompt_text);
        (f.class, f.span)
    }

    fn classify(&self, raw: &str, prompt: &str) -> Found {
        if raw.trim().is_empty() {
            return Found {
                class: ExtractionClass::EmptyResponse,
                span: None,
            };
        }
        let pairs = self.pairs(raw);
        if self.is_echo(raw, prompt, pairs.len()) {
            return Found {
                class: ExtractionClass::EchoedPrompt,
                span: None,
            };
        }
        match pairs.len() {
            1 => Found {
                class: ExtractionClass::WellFormed,
                span: Some(pairs[0]),
            },
            n if n > 1 => Found {
                class: ExtractionClass::MultiplePairs,
                span: Some(pairs[0]),
            },
            _ => {
                if let Some(span) = self.single_tag(raw) {
                    Found {
                        class: ExtractionClass::SingleTagOnly,
                        span,
                    }
                } else {
                    match longest_unechoed_line(raw, prompt) {
                        Some(span) => Found {
                            class: ExtractionClass::UntaggedPlaintext,
                            span: Some(span),
                        },
                        None => Found {
                            class: ExtractionClass::NotFound,
                            span: None,
                        },
                    }
                }
            }
        }
    }

    /// Non-overlapping open/close pairs, scanning left to right; spans cover the inner text.
    fn pairs(&self, raw: &str) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        let mut pos = 0;
        while let Some(o) = raw[pos..].find(&self.tpl_open) {
            let inner_start = pos + o + self.tpl_open.len();
            match raw[inner_start..].find(&self.tpl_close) {
                Some(c) => {
                    out.push((inner_start, inner_start + c));
                    pos = inner_start + c + self.tpl_close.len();
                }
                None => break,
            }
        }
        out
    }

    fn is_echo(&self, raw: &str, prompt: &str, pair_count: usize) -> bool {
        let lines: Vec<&str> = raw.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
        // A one-line answer holding a single tag pair is an answer, even if it happens
        // to match a line of the prompt.
        if lines.len() < 2 && pair_count == 1 {
            return false;
        }
        let echoed = lines.iter().filter(|l| prompt.contains(**l)).count();
        !lines.is_empty() && echoed as f64 >= self.echo_threshold * lines.len() as f64
    }

    /// Outer `None`: neither tag present. Inner `None`: a tag is present but nothing
    /// usable sits next to it.
    fn single_tag(&self, raw: &str) -> Option<Option<(usize, usize)>> {
        if let Some(o) = raw.find(&self.tpl_open) {
            let start = o + self.tpl_open.len();
            let line_end = raw[start..].find('\n').map_or(raw.len(), |i| start + i);
            let span = trim_span(raw, start, line_end).or_else(|| {
                // tag alone on its line: take the next non-empty line
                raw[line_end..]
                    .split_inclusive('\n')
                    .scan(line_end, |at, line| {
                        let s = *at;
                        *at += line.len();
                        Some((s, s + line.len()))
                    })
                    .find_map(|(s, e)| trim_span(raw, s, e))
            });
            return Some(span);
        }
        if let Some(c) = raw.find(&self.tpl_close) {
            let line_start = raw[..c].rfind('\n').map_or(0, |i| i + 1);
            return Some(trim_span(raw, line_start, c));
        }
        None
    }
}

fn trim_span(raw: &str, start: usize, end: usize) -> Option<(usize, usize)> {
    let slice = &raw[start..end];
    let lead = slice.len() - slice.trim_start().len();
    let trimmed = slice.trim();
    if trimmed.is_empty() {
        None
    } else {
        Some((start + lead, start + lead + trimmed.len()))
    }
}

/// The longest non-empty line that does not occur in the prompt. Ties keep the first.
fn longest_unechoed_line(raw: &str, prompt: &str) -> Option<(usize, usize)> {
    let mut best: Option<(usize, usize)> = None;
    let mut at = 0;
    for line in raw.split_inclusive('\n') {
        let (s, e) = (at, at + line.len());
        at = e;
        if let Some((ts, te)) = trim_span(raw, s, e) {
            if prompt.contains(&raw[ts..te]) {
                continue;
            }
            let len = raw[ts..te].chars().count();
            if best.is_none_or(|(bs, be)| len > raw[bs..be].chars().count()) {
                best = Some((ts, te));
            }
        }
    }
    best
}

/// Count of candidates per class; every class is present, possibly with zero.
pub fn class_counts<'a>(
    candidates: impl IntoIterator<Item = &'a TemplateCandidate>,
) -> BTreeMap<ExtractionClass, usize> {
    let mut counts: BTreeMap<ExtractionClass, usize> = ExtractionClass::ALL.iter().map(|c| (*c, 0)).collect();
    for c in candidates {
        *counts.entry(c.extraction_class).or_default() += 1;
    }
    counts
}

#[derive(Debug, thiserror::Error)]
pub enum ReviewError {
    #[error("review file: {0}")]
    Csv(#[from] csv::Error),
    #[error("review file references unknown record `{0}`")]
    UnknownRecord(String),
    #[error("review file lists record `{0}` more than once")]
    DuplicateRecord(String),
    #[error("record `{0}` has an empty response and cannot take a template")]
    TemplateForEmptyResponse(String),
}

/// One row of the editable review file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewEntry {
    pub record_id: String,
    pub extraction_class: ExtractionClass,
    pub proposed_template: String,
    pub excerpt: String,
}

/// Review rows for every candidate that needs a human look, in input order.
pub fn review_queue<'a>(candidates: impl IntoIterator<Item = (&'a TemplateCandidate, &'a str)>) -> Vec<ReviewEntry> {
    candidates
        .into_iter()
        .filter(|(c, _)| c.needs_review)
        .map(|(c, raw)| ReviewEntry {
            record_id: c.record_id.clone(),
            extraction_class: c.extraction_class,
            proposed_template: c.raw_template.clone().unwrap_or_default(),
            excerpt: excerpt(raw),
        })
        .collect()
}

fn excerpt(raw: &str) -> String {
    let flat = raw.replace('\r', "").replace('\n', "\\n");
    let mut out: String = flat.chars().take(EXCERPT_CHARS).collect();
    if flat.chars().count() > EXCERPT_CHARS {
        out.push('…');
    }
    out
}

pub fn write_review_file<W: Write>(out: W, entries: &[ReviewEntry]) -> Result<(), ReviewError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(["record_id", "extraction_class", "proposed_template", "excerpt"])?;
    for e in entries {
        w.serialize(e)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_review_file<R: Read>(input: R) -> Result<Vec<ReviewEntry>, ReviewError> {
    let mut r = csv::Reader::from_reader(input);
    Ok(r.deserialize().collect::<Result<Vec<_>, _>>()?)
}

/// Replaces proposed templates with the reviewed ones. An empty reviewed template
/// means "no template in this response". Returns the number of candidates changed.
pub fn apply_reviews(candidates: &mut [TemplateCandidate], reviews: &[ReviewEntry]) -> Result<usize, ReviewError> {
    let mut seen = HashSet::new();
    for r in reviews {
        if !seen.insert(r.record_id.as_str()) {
            return Err(ReviewError::DuplicateRecord(r.record_id.clone()));
        }
        if !candidates.iter().any(|c| c.record_id == r.record_id) {
            return Err(ReviewError::UnknownRecord(r.record_id.clone()));
        }
    }
    let mut changed = 0;
    for r in reviews {
        let c = candidates
            .iter_mut()
            .find(|c| c.record_id == r.record_id)
            .expect("checked above");
        let reviewed = (!r.proposed_template.trim().is_empty()).then(|| r.proposed_template.clone());
        if c.extraction_class == ExtractionClass::EmptyResponse && reviewed.is_some() {
            return Err(ReviewError::TemplateForEmptyResponse(r.record_id.clone()));
        }
        if c.raw_template != reviewed {
            c.raw_template = reviewed;
            c.chosen_span = None;
            changed += 1;
        }
    }
    Ok(changed)
}
