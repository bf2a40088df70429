//! Per-message scores: parsing accuracy, character-level Levenshtein distance,
//! longest common subsequence, and the normalized similarities
//!
//! ```text
//! es_norm  = 1 - ED(T, GT) / max(len(T), len(GT))
//! lcs_norm = LCS(T, GT) / len(GT)
//! ```
//!
//! Lengths are counted in Unicode scalar values, not bytes.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::analysis::ConfigId;
use crate::corpus::LogRecord;
use crate::normalization::{collapse_whitespace, NormalizedTemplate};
use crate::prompting::PromptMode;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub record_id: String,
    pub project: String,
    pub provider_id: String,
    pub mode: PromptMode,
    pub pa: bool,
    pub ed: usize,
    pub lcs: usize,
    pub es_norm: f64,
    pub lcs_norm: f64,
    pub len_t: usize,
    pub len_gt: usize,
}

impl ScoreRow {
    pub fn config(&self) -> ConfigId {
        ConfigId::new(&self.provider_id, self.mode)
    }
}

/// Token-level equality of two canonical templates (whitespace-delimited, case-sensitive).
pub fn parsing_accuracy(t: &str, gt: &str) -> bool {
    t.split_whitespace().eq(gt.split_whitespace())
}

/// Levenshtein distance with unit costs, two-row dynamic programme.
pub fn edit_distance(t: &str, gt: &str) -> usize {
    let a: Vec<char> = t.chars().collect();
    let b: Vec<char> = gt.chars().collect();
    edit_distance_chars(&a, &b)
}

pub fn edit_distance_chars<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let substitute = prev[j] + usize::from(ca != cb);
            cur[j + 1] = substitute.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Length of the longest common (not necessarily contiguous) character subsequence.
pub fn longest_common_subsequence(t: &str, gt: &str) -> usize {
    let a: Vec<char> = t.chars().collect();
    let b: Vec<char> = gt.chars().collect();
    lcs_chars(&a, &b)
}

pub fn lcs_chars<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for ca in a {
        for (j, cb) in b.iter().enumerate() {
            cur[j + 1] = if ca == cb { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// `1 - ed / max(len_t, len_gt)`; two empty strings are identical (1.0).
pub fn edit_similarity(ed: usize, len_t: usize, len_gt: usize) -> f64 {
    let longest = len_t.max(len_gt);
    if longest == 0 {
        1.0
    } else {
        1.0 - ed as f64 / longest as f64
    }
}

/// `lcs / len_gt`; with an empty ground truth only an empty template scores 1.
pub fn lcs_similarity(lcs: usize, len_t: usize, len_gt: usize) -> f64 {
    if len_gt == 0 {
        if len_t == 0 {
            1.0
        } else {
            0.0
        }
    } else {
        lcs as f64 / len_gt as f64
    }
}

/// Scores one record. An absent template is scored as the empty string. The ground
/// truth has its whitespace collapsed; the template text is compared as given.
pub fn score_record(candidate: Option<&NormalizedTemplate>, record: &LogRecord, config: &ConfigId) -> ScoreRow {
    let t = candidate.map_or("", |c| c.text.as_str());
    let gt = collapse_whitespace(&record.ground_truth);
    let t_chars: Vec<char> = t.chars().collect();
    let gt_chars: Vec<char> = gt.chars().collect();
    let ed = edit_distance_chars(&t_chars, &gt_chars);
    let lcs = lcs_chars(&t_chars, &gt_chars);
    let (len_t, len_gt) = (t_chars.len(), gt_chars.len());
    ScoreRow {
        record_id: record.record_id.clone(),
        project: record.project.clone(),
        provider_id: config.provider_id.clone(),
        mode: config.mode,
        // Pipeline templates are whitespace-canonical, so token equality and ed == 0
        // coincide; checking both keeps pa => ed == 0 for hand-built templates too.
        pa: candidate.is_some() && ed == 0 && parsing_accuracy(t, &gt),
        ed,
        lcs,
        es_norm: edit_similarity(ed, len_t, len_gt),
        lcs_norm: lcs_similarity(lcs, len_t, len_gt),
        len_t,
        len_gt,
    }
}

/// Writes score rows as CSV. `metadata` lines go first, each prefixed with `# `.
pub fn write_scores<W: Write>(out: W, metadata: &[(String, String)], rows: &[ScoreRow]) -> csv::Result<()> {
    let mut out = out;
    for (k, v) in metadata {
        writeln!(out, "# {k}: {v}")?;
    }
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a score file written by [`write_scores`], returning metadata and rows.
/// `# key: value` header lines of a score file, in file order.
pub type ScoreMetadata = Vec<(String, String)>;

pub fn read_scores<R: Read>(input: R) -> csv::Result<(ScoreMetadata, Vec<ScoreRow>)> {
    let mut text = String::new();
    let mut input = input;
    input.read_to_string(&mut text)?;
    let metadata = text
        .lines()
        .take_while(|l| l.starts_with("# "))
        .filter_map(|l| l[2..].split_once(": "))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let rows = r.deserialize().collect::<csv::Result<Vec<ScoreRow>>>()?;
    Ok((metadata, rows))
}
