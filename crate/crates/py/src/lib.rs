//! Python bindings for the logbench metrics, normalization, extraction and analysis
//! functions. Values cross the boundary as plain strings, numbers, lists and dicts.

use std::path::Path;

use logbench::analysis::{competition_ranks, pearson_rank_correlation, ConfigId, Direction};
use logbench::corpus::{self, LogRecord};
use logbench::extraction::Extractor;
use logbench::metrics::{self, score_record};
use logbench::normalization::{self, NormalizedTemplate, RuleSet};
use logbench::prompting::{self, PromptMode, PromptSpec};
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn rules_from(path: Option<&str>) -> PyResult<RuleSet> {
    match path {
        Some(p) => normalization::load_rules(Path::new(p)).map_err(value_err),
        None => Ok(RuleSet::default_rules()),
    }
}

/// Character-level Levenshtein distance.
#[pyfunction]
fn edit_distance(template: &str, ground_truth: &str) -> usize {
    metrics::edit_distance(template, ground_truth)
}

/// Length of the longest common character subsequence.
#[pyfunction]
fn lcs(template: &str, ground_truth: &str) -> usize {
    metrics::longest_common_subsequence(template, ground_truth)
}

/// Token-level exact match after whitespace splitting.
#[pyfunction]
fn parsing_accuracy(template: &str, ground_truth: &str) -> bool {
    metrics::parsing_accuracy(template, ground_truth)
}

/// Scores one template against a ground truth. `template=None` scores an absent
/// answer; `normalize=True` runs the placeholder rules on the template first.
#[pyfunction]
#[pyo3(signature = (template, ground_truth, normalize=false, rules=None))]
fn score<'py>(
    py: Python<'py>,
    template: Option<&str>,
    ground_truth: &str,
    normalize: bool,
    rules: Option<&str>,
) -> PyResult<Bound<'py, PyDict>> {
    let candidate = match template {
        Some(t) if normalize => Some(rules_from(rules)?.normalize(t)),
        Some(t) => Some(NormalizedTemplate::verbatim(t)),
        None => None,
    };
    let record = LogRecord {
        record_id: "python#1".into(),
        project: "python".into(),
        content: String::new(),
        ground_truth: ground_truth.into(),
    };
    let row = score_record(
        candidate.as_ref(),
        &record,
        &ConfigId::new("python", PromptMode::FewShot),
    );
    let d = PyDict::new(py);
    d.set_item("pa", row.pa)?;
    d.set_item("ed", row.ed)?;
    d.set_item("lcs", row.lcs)?;
    d.set_item("es_norm", row.es_norm)?;
    d.set_item("lcs_norm", row.lcs_norm)?;
    d.set_item("len_t", row.len_t)?;
    d.set_item("len_gt", row.len_gt)?;
    Ok(d)
}

/// Rewrites placeholder notations to `<*>`; `rules` is an optional rule file path.
#[pyfunction]
#[pyo3(signature = (raw_template, rules=None))]
fn normalize<'py>(py: Python<'py>, raw_template: &str, rules: Option<&str>) -> PyResult<Bound<'py, PyDict>> {
    let n = rules_from(rules)?.normalize(raw_template);
    let d = PyDict::new(py);
    d.set_item("text", n.text)?;
    d.set_item("rules_fired", n.rules_fired)?;
    d.set_item("residual_flags", n.residual_flags)?;
    Ok(d)
}

/// Classifies a model response and pulls out the template text, if any.
#[pyfunction]
#[pyo3(signature = (response_text, prompt_text=""))]
fn extract_template<'py>(py: Python<'py>, response_text: &str, prompt_text: &str) -> PyResult<Bound<'py, PyDict>> {
    let (class, span) = Extractor::default().classify_text(response_text, prompt_text);
    let d = PyDict::new(py);
    d.set_item("class", class.as_str())?;
    d.set_item("template", span.map(|(a, b)| &response_text[a..b]))?;
    Ok(d)
}

/// Renders the bundled prompt for one message. `mode` is "zero" or "few".
#[pyfunction]
#[pyo3(signature = (message, mode="few"))]
fn render_prompt(message: &str, mode: &str) -> PyResult<String> {
    let mode: PromptMode = mode.parse().map_err(PyValueError::new_err)?;
    let spec = PromptSpec::default_few_shot().with_mode(mode).map_err(value_err)?;
    let record = LogRecord {
        record_id: "python#1".into(),
        project: "python".into(),
        content: message.into(),
        ground_truth: "<*>".into(),
    };
    Ok(prompting::render_prompt(&spec, &record).map_err(value_err)?.text)
}

/// Loads a corpus directory as a list of record dicts, optionally checked against
/// a manifest file.
#[pyfunction]
#[pyo3(signature = (directory, manifest=None))]
fn load_corpus<'py>(py: Python<'py>, directory: &str, manifest: Option<&str>) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let manifest = manifest
        .map(|m| corpus::load_manifest(Path::new(m)))
        .transpose()
        .map_err(|e| PyIOError::new_err(e.to_string()))?;
    let corpus = corpus::load_corpus(Path::new(directory), manifest.as_ref()).map_err(value_err)?;
    corpus
        .records()
        .iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("record_id", &r.record_id)?;
            d.set_item("project", &r.project)?;
            d.set_item("content", &r.content)?;
            d.set_item("ground_truth", &r.ground_truth)?;
            Ok(d)
        })
        .collect()
}

/// Pearson correlation of two equally long rank vectors.
#[pyfunction]
fn pearson(a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
    pearson_rank_correlation(&a, &b).map_err(value_err)
}

/// Competition ranks ("1224") of metric values.
#[pyfunction]
#[pyo3(signature = (values, lower_is_better=false))]
fn rank(values: Vec<f64>, lower_is_better: bool) -> Vec<usize> {
    let direction = if lower_is_better {
        Direction::LowerIsBetter
    } else {
        Direction::HigherIsBetter
    };
    competition_ranks(&values, direction)
}

#[pymodule]
#[pyo3(name = "logbench")]
pub fn logbench_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(edit_distance, m)?)?;
    m.add_function(wrap_pyfunction!(lcs, m)?)?;
    m.add_function(wrap_pyfunction!(parsing_accuracy, m)?)?;
    m.add_function(wrap_pyfunction!(score, m)?)?;
    m.add_function(wrap_pyfunction!(normalize, m)?)?;
    m.add_function(wrap_pyfunction!(extract_template, m)?)?;
    m.add_function(wrap_pyfunction!(render_prompt, m)?)?;
    m.add_function(wrap_pyfunction!(load_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(pearson, m)?)?;
    m.add_function(wrap_pyfunction!(rank, m)?)?;
    Ok(())
}
