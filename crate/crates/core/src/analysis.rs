//! Aggregation of score rows per configuration, ranking of configurations under
//! nine metric variants, and Pearson correlation between the resulting rank vectors.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::metrics::ScoreRow;
use crate::prompting::PromptMode;

pub const MEDIAN_CONVENTION: &str = "midpoint";
pub const TIE_POLICY: &str = "competition";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AnalysisError {
    #[error("no score rows to aggregate")]
    Empty,
    #[error("rows from several configurations passed to a single aggregate: {0} and {1}")]
    MixedConfigurations(String, String),
    #[error("record `{0}` scored twice for one configuration")]
    DuplicateRecord(String),
    #[error("unknown metric `{0}`")]
    UnknownMetric(String),
    #[error("no configurations to rank")]
    NoConfigurations,
    #[error("rank vectors differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("correlation needs at least two entries")]
    TooShort,
    #[error("correlation undefined: a rank vector has zero variance")]
    ZeroVariance,
    #[error("rank table for `{0}` is missing")]
    MissingRankTable(MetricId),
    #[error("rank tables cover different configurations")]
    ConfigurationMismatch,
}

/// A (provider, prompt mode) pair, e.g. `gpt-3.5-few`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ConfigId {
    pub provider_id: String,
    pub mode: PromptMode,
}

impl ConfigId {
    pub fn new(provider_id: &str, mode: PromptMode) -> Self {
        Self {
            provider_id: provider_id.to_string(),
            mode,
        }
    }
}

impl fmt::Display for ConfigId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.provider_id, self.mode)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricId {
    Pa,
    EdMedian,
    EdMean,
    EdNormMedian,
    EdNormSum,
    LcsMedian,
    LcsMean,
    LcsNormMedian,
    LcsNormSum,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    HigherIsBetter,
    LowerIsBetter,
}

impl MetricId {
    pub const ALL: [MetricId; 9] = [
        MetricId::Pa,
        MetricId::EdMedian,
        MetricId::EdMean,
        MetricId::EdNormMedian,
        MetricId::EdNormSum,
        MetricId::LcsMedian,
        MetricId::LcsMean,
        MetricId::LcsNormMedian,
        MetricId::LcsNormSum,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MetricId::Pa => "pa",
            MetricId::EdMedian => "ed_median",
            MetricId::EdMean => "ed_mean",
            MetricId::EdNormMedian => "ed_norm_median",
            MetricId::EdNormSum => "ed_norm_sum",
            MetricId::LcsMedian => "lcs_median",
            MetricId::LcsMean => "lcs_mean",
            MetricId::LcsNormMedian => "lcs_norm_median",
            MetricId::LcsNormSum => "lcs_norm_sum",
        }
    }

    /// Raw edit distances are costs; everything else is a similarity or a count of hits.
    pub fn direction(self) -> Direction {
        match self {
            MetricId::EdMedian | MetricId::EdMean => Direction::LowerIsBetter,
            _ => Direction::HigherIsBetter,
        }
    }

    pub fn value(self, s: &Summary) -> f64 {
        match self {
            MetricId::Pa => s.pa_total as f64,
            MetricId::EdMedian => s.ed.median,
            MetricId::EdMean => s.ed.mean,
            MetricId::EdNormMedian => s.ed.normalized_median,
            MetricId::EdNormSum => s.ed.normalized_sum,
            MetricId::LcsMedian => s.lcs.median,
            MetricId::LcsMean => s.lcs.mean,
            MetricId::LcsNormMedian => s.lcs.normalized_median,
            MetricId::LcsNormSum => s.lcs.normalized_sum,
        }
    }
}

impl fmt::Display for MetricId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MetricId {
    type Err = AnalysisError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        MetricId::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| AnalysisError::UnknownMetric(s.to_string()))
    }
}

/// Four variants of one similarity family. `median`/`mean` are over raw distances
/// (ED) or raw subsequence lengths (LCS); the normalized variants are over
/// `es_norm` or `lcs_norm`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FamilyStats {
    pub median: f64,
    pub mean: f64,
    pub normalized_median: f64,
    pub normalized_mean: f64,
    pub normalized_sum: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub pa_total: usize,
    pub ed: FamilyStats,
    pub lcs: FamilyStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub config: ConfigId,
    pub overall: Summary,
    pub per_project: BTreeMap<String, Summary>,
    /// Corpus, rule-file and prompt-spec hashes plus conventions used.
    pub metadata: BTreeMap<String, String>,
}

impl AggregateReport {
    pub fn with_metadata<I, K, V>(mut self, entries: I) -> Self
    where
        I: IntoIterator<Item = (K, V)>,
        K: Into<String>,
        V: Into<String>,
    {
        for (k, v) in entries {
            self.metadata.insert(k.into(), v.into());
        }
        self
    }
}

/// Median of a sorted slice; the mean of the two central values for even counts.
fn median_sorted(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

fn sorted(mut values: Vec<f64>) -> Vec<f64> {
    values.sort_by(f64::total_cmp);
    values
}

fn family(raw: Vec<usize>, normalized: Vec<f64>) -> FamilyStats {
    let n = raw.len();
    let raw_total: u128 = raw.iter().map(|&v| v as u128).sum();
    let raw_sorted = sorted(raw.into_iter().map(|v| v as f64).collect());
    let norm_sorted = sorted(normalized);
    // summing in sorted order makes the result independent of row order
    let normalized_sum: f64 = norm_sorted.iter().sum();
    FamilyStats {
        median: median_sorted(&raw_sorted),
        mean: raw_total as f64 / n as f64,
        normalized_median: median_sorted(&norm_sorted),
        normalized_mean: normalized_sum / n as f64,
        normalized_sum,
    }
}

/// Statistics over a non-empty set of rows, without any configuration checks.
pub fn summarize(rows: &[&ScoreRow]) -> Result<Summary, AnalysisError> {
    if rows.is_empty() {
        return Err(AnalysisError::Empty);
    }
    Ok(Summary {
        n: rows.len(),
        pa_total: rows.iter().filter(|r| r.pa).count(),
        ed: family(
            rows.iter().map(|r| r.ed).collect(),
            rows.iter().map(|r| r.es_norm).collect(),
        ),
        lcs: family(
            rows.iter().map(|r| r.lcs).collect(),
            rows.iter().map(|r| r.lcs_norm).collect(),
        ),
    })
}

/// Aggregates the rows of one configuration, overall and per project.
pub fn aggregate(rows: &[ScoreRow]) -> Result<AggregateReport, AnalysisError> {
    let first = rows.first().ok_or(AnalysisError::Empty)?;
    let config = first.config();
    let mut seen = BTreeSet::new();
    let mut by_project: BTreeMap<&str, Vec<&ScoreRow>> = BTreeMap::new();
    for r in rows {
        let c = r.config();
        if c != config {
            return Err(AnalysisError::MixedConfigurations(config.to_string(), c.to_string()));
        }
        if !seen.insert(r.record_id.as_str()) {
            return Err(AnalysisError::DuplicateRecord(r.record_id.clone()));
        }
        by_project.entry(r.project.as_str()).or_default().push(r);
    }
    let all: Vec<&ScoreRow> = rows.iter().collect();
    let mut per_project = BTreeMap::new();
    for (project, rs) in by_project {
        per_project.insert(project.to_string(), summarize(&rs)?);
    }
    let metadata = BTreeMap::from([
        ("median_convention".to_string(), MEDIAN_CONVENTION.to_string()),
        ("tie_policy".to_string(), TIE_POLICY.to_string()),
    ]);
    Ok(AggregateReport {
        config,
        overall: summarize(&all)?,
        per_project,
        metadata,
    })
}

/// Splits rows by configuration and aggregates each group.
pub fn aggregate_all(rows: &[ScoreRow]) -> Result<BTreeMap<ConfigId, AggregateReport>, AnalysisError> {
    if rows.is_empty() {
        return Err(AnalysisError::Empty);
    }
    let mut groups: BTreeMap<ConfigId, Vec<ScoreRow>> = BTreeMap::new();
    for r in rows {
        groups.entry(r.config()).or_default().push(r.clone());
    }
    groups
        .into_iter()
        .map(|(c, rs)| aggregate(&rs).map(|a| (c, a)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankEntry {
    pub config: ConfigId,
    pub value: f64,
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankTable {
    pub metric: MetricId,
    /// One entry per configuration, in configuration order.
    pub entries: Vec<RankEntry>,
    pub tie_policy_applied: bool,
}

impl RankTable {
    pub fn rank_of(&self, config: &ConfigId) -> Option<usize> {
        self.entries.iter().find(|e| &e.config == config).map(|e| e.rank)
    }

    pub fn configs(&self) -> impl Iterator<Item = &ConfigId> {
        self.entries.iter().map(|e| &e.config)
    }

    pub fn ranks(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.rank as f64).collect()
    }
}

/// Competition ranking ("1224") of metric values; rank 1 is best.
pub fn competition_ranks(values: &[f64], direction: Direction) -> Vec<usize> {
    values
        .iter()
        .map(|v| {
            1 + values
                .iter()
                .filter(|w| match direction {
                    Direction::HigherIsBetter => *w > v,
                    Direction::LowerIsBetter => *w < v,
                })
                .count()
        })
        .collect()
}

/// Ranks configurations on one metric variant.
pub fn rank(reports: &BTreeMap<ConfigId, AggregateReport>, metric: MetricId) -> Result<RankTable, AnalysisError> {
    if reports.is_empty() {
        return Err(AnalysisError::NoConfigurations);
    }
    let values: Vec<f64> = reports.values().map(|r| metric.value(&r.overall)).collect();
    let ranks = competition_ranks(&values, metric.direction());
    let distinct: BTreeSet<usize> = ranks.iter().copied().collect();
    let entries = reports
        .keys()
        .zip(values)
        .zip(&ranks)
        .map(|((config, value), &rank)| RankEntry {
            config: config.clone(),
            value,
            rank,
        })
        .collect();
    Ok(RankTable {
        metric,
        entries,
        tie_policy_applied: distinct.len() < ranks.len(),
    })
}

pub fn rank_all(reports: &BTreeMap<ConfigId, AggregateReport>) -> Result<Vec<RankTable>, AnalysisError> {
    MetricId::ALL.iter().map(|&m| rank(reports, m)).collect()
}

/// Pearson product-moment coefficient of two equally long vectors, from raw moments
/// (`n*Sxy - Sx*Sy` over the root of the matching variance terms). Rank vectors hold
/// integers or half-integers, so every sum is exact and identical or mirrored rank
/// vectors give exactly 1 or -1.
pub fn pearson_rank_correlation(a: &[f64], b: &[f64]) -> Result<f64, AnalysisError> {
    if a.len() != b.len() {
        return Err(AnalysisError::LengthMismatch(a.len(), b.len()));
    }
    if a.len() < 2 {
        return Err(AnalysisError::TooShort);
    }
    let n = a.len() as f64;
    let (mut sa, mut sb, mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sa += x;
        sb += y;
        sab += x * y;
        saa += x * x;
        sbb += y * y;
    }
    let cov = n * sab - sa * sb;
    let var_a = n * saa - sa * sa;
    let var_b = n * sbb - sb * sb;
    if var_a <= 0.0 || var_b <= 0.0 {
        return Err(AnalysisError::ZeroVariance);
    }
    Ok((cov / (var_a * var_b).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Comparison {
    MeanVsMedian,
    StandardVsNormalized,
    EdVsLcs,
}

impl Comparison {
    pub const ALL: [Comparison; 3] = [
        Comparison::MeanVsMedian,
        Comparison::StandardVsNormalized,
        Comparison::EdVsLcs,
    ];

    /// The four metric pairs (x, y) plotted against each other.
    pub fn pairs(self) -> [(MetricId, MetricId); 4] {
        use MetricId::*;
        match self {
            Comparison::MeanVsMedian => [
                (EdMean, EdMedian),
                (EdNormSum, EdNormMedian),
                (LcsMean, LcsMedian),
                (LcsNormSum, LcsNormMedian),
            ],
            Comparison::StandardVsNormalized => [
                (EdMedian, EdNormMedian),
                (EdMean, EdNormSum),
                (LcsMedian, LcsNormMedian),
                (LcsMean, LcsNormSum),
            ],
            Comparison::EdVsLcs => [
                (EdMedian, LcsMedian),
                (EdMean, LcsMean),
                (EdNormMedian, LcsNormMedian),
                (EdNormSum, LcsNormSum),
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterPoint {
    pub config: ConfigId,
    pub x_metric: MetricId,
    pub y_metric: MetricId,
    pub x_rank: usize,
    pub y_rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairCoefficient {
    pub x_metric: MetricId,
    pub y_metric: MetricId,
    /// `None` when either rank vector is constant.
    pub coefficient: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonResult {
    pub comparison: Comparison,
    /// Over all (configuration, metric pair) points.
    pub pooled: Option<f64>,
    pub per_pair: Vec<PairCoefficient>,
    /// Pooled over the configurations of one prompt mode.
    pub per_mode: BTreeMap<PromptMode, Option<f64>>,
    pub scatter: Vec<ScatterPoint>,
    /// Points whose two ranks differ.
    pub deviations: Vec<ScatterPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationSummary {
    pub comparisons: Vec<ComparisonResult>,
}

impl CorrelationSummary {
    pub fn get(&self, c: Comparison) -> Option<&ComparisonResult> {
        self.comparisons.iter().find(|r| r.comparison == c)
    }
}

fn defined(a: &[f64], b: &[f64]) -> Option<f64> {
    pearson_rank_correlation(a, b).ok()
}

/// Correlates rank vectors for the three comparisons. All nine tables must be
/// present and cover the same configurations.
pub fn comparison_report(tables: &[RankTable]) -> Result<CorrelationSummary, AnalysisError> {
    let mut by_metric: BTreeMap<MetricId, &RankTable> = BTreeMap::new();
    for t in tables {
        by_metric.insert(t.metric, t);
    }
    for m in MetricId::ALL {
        if !by_metric.contains_key(&m) {
            return Err(AnalysisError::MissingRankTable(m));
        }
    }
    let configs: Vec<&ConfigId> = by_metric[&MetricId::Pa].configs().collect();
    if by_metric.values().any(|t| !t.configs().eq(configs.iter().copied())) {
        return Err(AnalysisError::ConfigurationMismatch);
    }

    let mut comparisons = Vec::new();
    for comparison in Comparison::ALL {
        let mut scatter = Vec::new();
        let mut per_pair = Vec::new();
        for (xm, ym) in comparison.pairs() {
            let (xt, yt) = (by_metric[&xm], by_metric[&ym]);
            per_pair.push(PairCoefficient {
                x_metric: xm,
                y_metric: ym,
                coefficient: defined(&xt.ranks(), &yt.ranks()),
            });
            for (xe, ye) in xt.entries.iter().zip(&yt.entries) {
                scatter.push(ScatterPoint {
                    config: xe.config.clone(),
                    x_metric: xm,
                    y_metric: ym,
                    x_rank: xe.rank,
                    y_rank: ye.rank,
                });
            }
        }
        let pooled_over = |points: &[&ScatterPoint]| {
            let xs: Vec<f64> = points.iter().map(|p| p.x_rank as f64).collect();
            let ys: Vec<f64> = points.iter().map(|p| p.y_rank as f64).collect();
            defined(&xs, &ys)
        };
        let all: Vec<&ScatterPoint> = scatter.iter().collect();
        let modes: BTreeSet<PromptMode> = configs.iter().map(|c| c.mode).collect();
        let per_mode = modes
            .into_iter()
            .map(|m| {
                let pts: Vec<&ScatterPoint> = scatter.iter().filter(|p| p.config.mode == m).collect();
                (m, pooled_over(&pts))
            })
            .collect();
        let deviations = scatter.iter().filter(|p| p.x_rank != p.y_rank).cloned().collect();
        comparisons.push(ComparisonResult {
            comparison,
            pooled: pooled_over(&all),
            per_pair,
            per_mode,
            scatter,
            deviations,
        });
    }
    Ok(CorrelationSummary { comparisons })
}

/// Everything `report` writes, in one serializable value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FullReport {
    pub metadata: BTreeMap<String, String>,
    pub aggregates: Vec<AggregateReport>,
    pub rank_tables: Vec<RankTable>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub correlations: Option<CorrelationSummary>,
}

/// Aggregates, ranks and (with two or more configurations) correlates.
pub fn build_report(rows: &[ScoreRow], metadata: BTreeMap<String, String>) -> Result<FullReport, AnalysisError> {
    let reports = aggregate_all(rows)?;
    let rank_tables = rank_all(&reports)?;
    let correlations = if reports.len() >= 2 {
        Some(comparison_report(&rank_tables)?)
    } else {
        None
    };
    let aggregates = reports
        .into_values()
        .map(|a| a.with_metadata(metadata.clone()))
        .collect();
    Ok(FullReport {
        metadata,
        aggregates,
        rank_tables,
        correlations,
    })
}

fn fmt_num(v: f64, decimals: usize) -> String {
    format!("{v:.decimals$}")
}

fn render_grid(header: &[String], rows: &[Vec<String>], total_row: bool) -> String {
    let cols = header.len();
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for r in rows {
        for (i, c) in r.iter().enumerate().take(cols) {
            widths[i] = widths[i].max(c.chars().count());
        }
    }
    let line = |cells: &[String]| {
        let mut s = String::new();
        for (i, c) in cells.iter().enumerate() {
            if i == 0 {
                s.push_str(&format!("{c:<w$}", w = widths[0]));
            } else {
                s.push_str(&format!("  {c:>w$}", w = widths[i]));
            }
        }
        s.trim_end().to_string() + "\n"
    };
    let mut out = line(header);
    let rule: usize = widths.iter().sum::<usize>() + 2 * (cols - 1);
    out.push_str(&"-".repeat(rule));
    out.push('\n');
    for (i, r) in rows.iter().enumerate() {
        if total_row && i + 1 == rows.len() {
            out.push_str(&"-".repeat(rule));
            out.push('\n');
        }
        out.push_str(&line(r));
    }
    out
}

fn project_table<F>(aggs: &[AggregateReport], projects: &[String], cell: F) -> String
where
    F: Fn(&Summary) -> String,
{
    let mut header = vec!["project".to_string()];
    header.extend(aggs.iter().map(|a| a.config.to_string()));
    let mut rows = Vec::new();
    for p in projects {
        let mut row = vec![p.clone()];
        row.extend(aggs.iter().map(|a| a.per_project.get(p).map_or("-".into(), &cell)));
        rows.push(row);
    }
    let mut total = vec!["Total".to_string()];
    total.extend(aggs.iter().map(|a| cell(&a.overall)));
    rows.push(total);
    render_grid(&header, &rows, true)
}

/// Projects in first-seen order across the given aggregates, or `order` if given.
fn project_order(aggs: &[AggregateReport], order: Option<&[String]>) -> Vec<String> {
    if let Some(o) = order {
        return o.to_vec();
    }
    let mut set = BTreeSet::new();
    for a in aggs {
        set.extend(a.per_project.keys().cloned());
    }
    set.into_iter().collect()
}

/// Parsing-accuracy counts: projects as rows, configurations as columns, a total row.
pub fn pa_table(aggs: &[AggregateReport], order: Option<&[String]>) -> String {
    project_table(aggs, &project_order(aggs, order), |s| s.pa_total.to_string())
}

/// Median edit distance and median LCS tables in the same layout.
pub fn median_tables(aggs: &[AggregateReport], order: Option<&[String]>) -> (String, String) {
    let projects = project_order(aggs, order);
    (
        project_table(aggs, &projects, |s| fmt_num(s.ed.median, 1)),
        project_table(aggs, &projects, |s| fmt_num(s.lcs.median, 1)),
    )
}

/// Metrics as rows, configurations as columns, each cell `rank (value)`.
pub fn rank_grid(tables: &[RankTable]) -> String {
    let Some(first) = tables.first() else {
        return String::new();
    };
    let mut header = vec!["metric".to_string()];
    header.extend(first.configs().map(ToString::to_string));
    let rows: Vec<Vec<String>> = tables
        .iter()
        .map(|t| {
            let mut row = vec![t.metric.to_string()];
            row.extend(t.entries.iter().map(|e| e.rank.to_string()));
            row
        })
        .collect();
    render_grid(&header, &rows, false)
}

pub fn correlation_text(summary: &CorrelationSummary) -> String {
    let show = |c: Option<f64>| c.map_or("undefined".to_string(), |v| fmt_num(v, 4));
    let mut out = String::new();
    for r in &summary.comparisons {
        let name = match r.comparison {
            Comparison::MeanVsMedian => "mean vs median",
            Comparison::StandardVsNormalized => "standard vs normalized",
            Comparison::EdVsLcs => "ED vs LCS",
        };
        out.push_str(&format!("{name}: pooled {}\n", show(r.pooled)));
        for (mode, c) in &r.per_mode {
            out.push_str(&format!("  {mode} prompts: {}\n", show(*c)));
        }
        for p in &r.per_pair {
            out.push_str(&format!(
                "  {} vs {}: {}\n",
                p.x_metric,
                p.y_metric,
                show(p.coefficient)
            ));
        }
        if r.deviations.is_empty() {
            out.push_str("  deviations: none\n");
        } else {
            out.push_str("  deviations:\n");
            for d in &r.deviations {
                out.push_str(&format!(
                    "    {}: {} rank {} vs {} rank {}\n",
                    d.config, d.x_metric, d.x_rank, d.y_metric, d.y_rank
                ));
            }
        }
    }
    out
}
