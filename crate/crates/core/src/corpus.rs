//! Benchmark corpora: one `<Project>.csv` file per project, each row pairing a raw
//! log message with its ground-truth template.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::hashing::ContentHasher;

pub const CONTENT_COLUMN: &str = "Content";
pub const TEMPLATE_COLUMN: &str = "EventTemplate";
pub const LINE_ID_COLUMN: &str = "LineId";

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("no project files found in {0}")]
    NoProjectFiles(PathBuf),
    #[error("{file}: missing required column `{column}`")]
    MissingColumn { file: PathBuf, column: String },
    #[error("{file}: {message}")]
    Format { file: PathBuf, message: String },
    #[error("record {record_id}: {violations}")]
    Validation {
        record_id: String,
        violations: ViolationList,
    },
    #[error("duplicate record id `{0}`")]
    DuplicateRecordId(String),
    #[error("corpus does not match manifest:\n{0}")]
    CountMismatch(CountDiffs),
    #[error("manifest {path}: {message}")]
    Manifest { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogRecord {
    pub record_id: String,
    pub project: String,
    pub content: String,
    pub ground_truth: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub source: PathBuf,
    pub variant: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    projects: Vec<String>,
    records: Vec<LogRecord>,
    provenance: Provenance,
}

/// Expected per-project record counts.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Manifest {
    #[serde(default)]
    pub variant: Option<String>,
    pub counts: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountDiff {
    pub project: String,
    pub expected: usize,
    pub actual: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountDiffs(pub Vec<CountDiff>);

impl fmt::Display for CountDiffs {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, d) in self.0.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "  {}: expected {}, actual {}", d.project, d.expected, d.actual)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    EmptyTemplate,
    EmptyMessage,
    /// A bracketed token such as `<$size$>` or `<pid>` where `<*>` is required.
    NonCanonicalPlaceholder {
        offset: usize,
        found: String,
    },
    /// `<*` with no closing `>`.
    UnclosedPlaceholder {
        offset: usize,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptyTemplate => write!(f, "empty template"),
            Violation::EmptyMessage => write!(f, "empty message"),
            Violation::NonCanonicalPlaceholder { offset, found } => {
                write!(f, "non-canonical placeholder `{found}` at offset {offset}")
            }
            Violation::UnclosedPlaceholder { offset } => {
                write!(f, "unclosed placeholder at offset {offset}")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ViolationList(pub Vec<Violation>);

impl fmt::Display for ViolationList {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(ToString::to_string).collect();
        f.write_str(&parts.join("; "))
    }
}

static ANGLE_TOKEN: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"<[^<>\s]*>").unwrap());

/// Checks that a template is non-empty and that every angle-bracketed token in it is
/// exactly `<*>`. Offsets are byte offsets into `template`.
pub fn validate_ground_truth(template: &str) -> Vec<Violation> {
    if template.trim().is_empty() {
        return vec![Violation::EmptyTemplate];
    }
    let mut out = Vec::new();
    for m in ANGLE_TOKEN.find_iter(template) {
        if m.as_str() != "<*>" {
            out.push(Violation::NonCanonicalPlaceholder {
                offset: m.start(),
                found: m.as_str().to_string(),
            });
        }
    }
    for (offset, _) in template.match_indices("<*") {
        if !template[offset + 2..].starts_with('>') {
            out.push(Violation::UnclosedPlaceholder { offset });
        }
    }
    out.sort_by_key(|v| match v {
        Violation::EmptyTemplate | Violation::EmptyMessage => 0,
        Violation::NonCanonicalPlaceholder { offset, .. } => *offset,
        Violation::UnclosedPlaceholder { offset } => *offset,
    });
    out
}

pub fn load_manifest(path: &Path) -> Result<Manifest, CorpusError> {
    let text = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    toml::from_str(&text).map_err(|e| CorpusError::Manifest {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Loads every `*.csv` file in `dir` as one project (named by the file stem), in
/// lexicographic file order. Rows keep their file order.
pub fn load_corpus(dir: &Path, manifest: Option<&Manifest>) -> Result<Corpus, CorpusError> {
    let io_err = |source| CorpusError::Io {
        path: dir.to_path_buf(),
        source,
    };
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "csv"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(CorpusError::NoProjectFiles(dir.to_path_buf()));
    }

    let mut projects = Vec::with_capacity(files.len());
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for file in &files {
        let project = file
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| CorpusError::Format {
                file: file.clone(),
                message: "file name is not valid UTF-8".into(),
            })?
            .to_string();
        for record in read_project_file(file, &project)? {
            if !seen.insert(record.record_id.clone()) {
                return Err(CorpusError::DuplicateRecordId(record.record_id));
            }
            records.push(record);
        }
        projects.push(project);
    }

    let corpus = Corpus {
        projects,
        records,
        provenance: Provenance {
            source: dir.to_path_buf(),
            variant: manifest
                .and_then(|m| m.variant.clone())
                .unwrap_or_else(|| "unspecified".to_string()),
        },
    };
    if let Some(manifest) = manifest {
        corpus.check_manifest(manifest)?;
    }
    Ok(corpus)
}

fn read_project_file(file: &Path, project: &str) -> Result<Vec<LogRecord>, CorpusError> {
    let format_err = |e: csv::Error| CorpusError::Format {
        file: file.to_path_buf(),
        message: e.to_string(),
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(file)
        .map_err(format_err)?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(format_err)?
        .iter()
        .map(|h| h.trim_start_matches('\u{feff}').trim().to_string())
        .collect();
    let column = |name: &str| headers.iter().position(|h| h == name);
    let missing = |name: &str| CorpusError::MissingColumn {
        file: file.to_path_buf(),
        column: name.to_string(),
    };
    let content_idx = column(CONTENT_COLUMN).ok_or_else(|| missing(CONTENT_COLUMN))?;
    let template_idx = column(TEMPLATE_COLUMN).ok_or_else(|| missing(TEMPLATE_COLUMN))?;
    let line_idx = column(LINE_ID_COLUMN);

    let mut out = Vec::new();
    for (row, result) in reader.records().enumerate() {
        let row = row + 1;
        let rec = result.map_err(format_err)?;
        let field = |idx: usize| -> Result<&str, CorpusError> {
            rec.get(idx).ok_or_else(|| CorpusError::Format {
                file: file.to_path_buf(),
                message: format!("row {row}: too few fields"),
            })
        };
        let line_id = match line_idx {
            Some(i) => field(i)?.to_string(),
            None => row.to_string(),
        };
        let record = LogRecord {
            record_id: format!("{project}#{line_id}"),
            project: project.to_string(),
            content: field(content_idx)?.to_string(),
            ground_truth: field(template_idx)?.to_string(),
        };
        let mut violations = validate_ground_truth(&record.ground_truth);
        if record.content.is_empty() {
            violations.insert(0, Violation::EmptyMessage);
        }
        if !violations.is_empty() {
            return Err(CorpusError::Validation {
                record_id: record.record_id,
                violations: ViolationList(violations),
            });
        }
        out.push(record);
    }
    Ok(out)
}

impl Corpus {
    /// Builds a corpus from records already in memory. Projects are ordered by first
    /// appearance.
    pub fn from_records(records: Vec<LogRecord>, provenance: Provenance) -> Result<Self, CorpusError> {
        let mut projects: Vec<String> = Vec::new();
        let mut seen = HashSet::new();
        for r in &records {
            if !seen.insert(r.record_id.clone()) {
                return Err(CorpusError::DuplicateRecordId(r.record_id.clone()));
            }
            let violations = validate_ground_truth(&r.ground_truth);
            if !violations.is_empty() {
                return Err(CorpusError::Validation {
                    record_id: r.record_id.clone(),
                    violations: ViolationList(violations),
                });
            }
            if !projects.contains(&r.project) {
                projects.push(r.project.clone());
            }
        }
        Ok(Self {
            projects,
            records,
            provenance,
        })
    }

    pub fn projects(&self) -> &[String] {
        &self.projects
    }

    pub fn records(&self) -> &[LogRecord] {
        &self.records
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, record_id: &str) -> Option<&LogRecord> {
        self.records.iter().find(|r| r.record_id == record_id)
    }

    /// Record counts per project, in project order.
    pub fn counts(&self) -> Vec<(String, usize)> {
        self.projects
            .iter()
            .map(|p| (p.clone(), self.records.iter().filter(|r| &r.project == p).count()))
            .collect()
    }

    /// Compares per-project counts against `manifest`; every differing project is
    /// listed, including projects present on only one side.
    pub fn check_manifest(&self, manifest: &Manifest) -> Result<(), CorpusError> {
        let actual: BTreeMap<String, usize> = self.counts().into_iter().collect();
        let mut names: Vec<&String> = manifest.counts.keys().chain(actual.keys()).collect();
        names.sort();
        names.dedup();
        let diffs: Vec<CountDiff> = names
            .into_iter()
            .filter_map(|p| {
                let expected = manifest.counts.get(p).copied().unwrap_or(0);
                let actual = actual.get(p).copied().unwrap_or(0);
                (expected != actual).then(|| CountDiff {
                    project: p.clone(),
                    expected,
                    actual,
                })
            })
            .collect();
        if diffs.is_empty() {
            Ok(())
        } else {
            Err(CorpusError::CountMismatch(CountDiffs(diffs)))
        }
    }

    /// Hash over project names and record fields; independent of file layout.
    pub fn content_hash(&self) -> String {
        let mut h = ContentHasher::new();
        for r in &self.records {
            h.field(&r.project)
                .field(&r.record_id)
                .field(&r.content)
                .field(&r.ground_truth);
        }
        h.finish()
    }

    /// Writes the corpus back to `<dir>/<Project>.csv` files that [`load_corpus`]
    /// reads into an equal corpus.
    pub fn write_to_dir(&self, dir: &Path) -> Result<(), CorpusError> {
        fs::create_dir_all(dir).map_err(|source| CorpusError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        for project in &self.projects {
            let path = dir.join(format!("{project}.csv"));
            let format_err = |e: csv::Error| CorpusError::Format {
                file: path.clone(),
                message: e.to_string(),
            };
            let mut w = csv::WriterBuilder::new()
                .quote_style(csv::QuoteStyle::Always)
                .from_path(&path)
                .map_err(format_err)?;
            w.write_record([LINE_ID_COLUMN, CONTENT_COLUMN, TEMPLATE_COLUMN])
                .map_err(format_err)?;
            let prefix = format!("{project}#");
            for r in self.records.iter().filter(|r| &r.project == project) {
                let line_id = r.record_id.strip_prefix(&prefix).unwrap_or(&r.record_id);
                w.write_record([line_id, r.content.as_str(), r.ground_truth.as_str()])
                    .map_err(format_err)?;
            }
            w.flush().map_err(|source| CorpusError::Io {
                path: path.clone(),
                source,
            })?;
        }
        Ok(())
    }
}
