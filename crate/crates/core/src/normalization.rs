//! Placeholder canonicalization. Models write variables as `{ip}`, `${name}`,
//! `[[v]]`, `<pid>`, `XXX` and many more; an ordered list of regex rules rewrites
//! all of them to `<*>` so templates can be compared with the ground truth.

use std::collections::HashSet;
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::hashing::ContentHasher;

pub const DEFAULT_RULES_TOML: &str = include_str!("../data/default_rules.toml");

/// Upper bound on re-running the rule list; real inputs settle in two or three passes.
const MAX_PASSES: usize = 32;

pub const FLAG_UNCLOSED: &str = "unclosed placeholder";
pub const FLAG_BARE_STAR: &str = "bare asterisk";
pub const FLAG_UNBALANCED: &str = "unbalanced brackets";

#[derive(Debug, thiserror::Error)]
pub enum RuleError {
    #[error("rule file {path}: {message}")]
    Parse { path: String, message: String },
    #[error("rule `{rule_id}`: pattern does not compile: {message}")]
    BadPattern { rule_id: String, message: String },
    #[error("duplicate rule id `{0}`")]
    DuplicateId(String),
    #[error("rules `{0}` and `{1}` share order {2}")]
    DuplicateOrder(String, String, i64),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NormalizationRule {
    pub rule_id: String,
    pub pattern: String,
    #[serde(default = "canonical")]
    pub replacement: String,
    #[serde(default)]
    pub description: String,
    /// Explicit position; defaults to ten times the position in the file.
    #[serde(default)]
    pub order: Option<i64>,
}

fn canonical() -> String {
    "<*>".into()
}

#[derive(Debug, Clone)]
struct CompiledRule {
    rule: NormalizationRule,
    regex: Regex,
}

/// Validated, compiled and order-sorted rules.
#[derive(Debug, Clone, Default)]
pub struct RuleSet {
    rules: Vec<CompiledRule>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NormalizedTemplate {
    pub text: String,
    pub rules_fired: Vec<String>,
    pub residual_flags: Vec<String>,
}

impl NormalizedTemplate {
    /// Wraps text that is scored as-is, without running any rules.
    pub fn verbatim(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            rules_fired: Vec::new(),
            residual_flags: Vec::new(),
        }
    }
}

#[derive(Deserialize)]
struct RuleFile {
    #[serde(default)]
    rule: Vec<NormalizationRule>,
}

impl RuleSet {
    pub fn new(rules: Vec<NormalizationRule>) -> Result<Self, RuleError> {
        let mut ids = HashSet::new();
        let mut compiled = Vec::with_capacity(rules.len());
        for (i, mut rule) in rules.into_iter().enumerate() {
            if !ids.insert(rule.rule_id.clone()) {
                return Err(RuleError::DuplicateId(rule.rule_id));
            }
            let regex = Regex::new(&rule.pattern).map_err(|e| RuleError::BadPattern {
                rule_id: rule.rule_id.clone(),
                message: e.to_string(),
            })?;
            rule.order.get_or_insert(10 * i as i64);
            compiled.push(CompiledRule { rule, regex });
        }
        compiled.sort_by_key(|c| c.rule.order);
        for w in compiled.windows(2) {
            if w[0].rule.order == w[1].rule.order {
                return Err(RuleError::DuplicateOrder(
                    w[0].rule.rule_id.clone(),
                    w[1].rule.rule_id.clone(),
                    w[0].rule.order.unwrap_or_default(),
                ));
            }
        }
        Ok(Self { rules: compiled })
    }

    pub fn from_toml_str(text: &str, origin: &str) -> Result<Self, RuleError> {
        let file: RuleFile = toml::from_str(text).map_err(|e| RuleError::Parse {
            path: origin.to_string(),
            message: e.to_string(),
        })?;
        Self::new(file.rule)
    }

    /// The bundled rule set, compiled once per process.
    pub fn default_rules() -> Self {
        static DEFAULT: OnceLock<RuleSet> = OnceLock::new();
        DEFAULT
            .get_or_init(|| {
                Self::from_toml_str(DEFAULT_RULES_TOML, "default_rules.toml").expect("bundled rule file is valid")
            })
            .clone()
    }

    pub fn rules(&self) -> impl Iterator<Item = &NormalizationRule> {
        self.rules.iter().map(|c| &c.rule)
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    /// Hash over the ordered rule contents; recorded in every report.
    pub fn content_hash(&self) -> String {
        let mut h = ContentHasher::new();
        for c in &self.rules {
            h.field(&c.rule.rule_id)
                .field(&c.rule.pattern)
                .field(&c.rule.replacement);
        }
        h.finish()
    }

    pub fn normalize(&self, raw_template: &str) -> NormalizedTemplate {
        normalize(raw_template, self)
    }
}

pub fn load_rules(path: &Path) -> Result<RuleSet, RuleError> {
    let text = std::fs::read_to_string(path).map_err(|source| RuleError::Io {
        path: path.display().to_string(),
        source,
    })?;
    RuleSet::from_toml_str(&text, &path.display().to_string())
}

/// Collapses every whitespace run to a single space and trims both ends.
pub fn collapse_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Applies the rules in order, each globally, then collapses whitespace, and repeats
/// until a pass changes nothing. The result is therefore a fixed point of the rule
/// set: normalizing it again returns it unchanged.
pub fn normalize(raw_template: &str, rules: &RuleSet) -> NormalizedTemplate {
    let mut text = collapse_whitespace(raw_template);
    let mut fired: Vec<String> = Vec::new();
    for _ in 0..MAX_PASSES {
        let before = text.clone();
        for c in &rules.rules {
            let replaced = c.regex.replace_all(&text, c.rule.replacement.as_str());
            if replaced != text {
                text = replaced.into_owned();
                if !fired.contains(&c.rule.rule_id) {
                    fired.push(c.rule.rule_id.clone());
                }
            }
        }
        text = collapse_whitespace(&text);
        if text == before {
            break;
        }
    }
    let residual_flags = residual_flags(&text);
    NormalizedTemplate {
        text,
        rules_fired: fired,
        residual_flags,
    }
}

/// Leftovers that suggest a placeholder the rules did not recognise.
pub fn residual_flags(text: &str) -> Vec<String> {
    let mut flags = Vec::new();
    if has_unclosed_angle(text) {
        flags.push(FLAG_UNCLOSED.to_string());
    }
    let bare_star = |t: &str| {
        let core = t.trim_matches(|c: char| c.is_ascii_punctuation() && c != '*');
        !core.is_empty() && core.chars().all(|c| c == '*')
    };
    if text.replace("<*>", " ").split_whitespace().any(bare_star) {
        flags.push(FLAG_BARE_STAR.to_string());
    }
    let balanced = |open: char, close: char| {
        text.chars().filter(|&c| c == open).count() == text.chars().filter(|&c| c == close).count()
    };
    if !(balanced('(', ')') && balanced('[', ']') && balanced('{', '}')) {
        flags.push(FLAG_UNBALANCED.to_string());
    }
    flags
}

/// `<` followed by a placeholder-like run (`*` or word characters) that ends without `>`.
fn has_unclosed_angle(text: &str) -> bool {
    for (i, _) in text.match_indices('<') {
        let rest = &text[i + 1..];
        let run_len = rest
            .find(|c: char| !(c == '*' || c == '_' || c.is_alphanumeric()))
            .unwrap_or(rest.len());
        if run_len == 0 {
            continue;
        }
        let next = rest[run_len..].chars().next();
        if next != Some('>') {
            return true;
        }
    }
    false
}
