//! Analysis cells and their tabular renderings.
//!
//! [`correlate`] joins surprisal records to dataset annotations and computes
//! one [`AnalysisCell`] per (model, method, correction, split). [`emit`] renders
//! cells as TSV, markdown or JSON. Human formats print three decimals. JSON
//! keeps full precision and round-trips losslessly.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::BackendDescriptor;
use crate::dataset::{Dataset, Genre, NoveltyLabel, TargetAnnotation};
use crate::scoring::{ClozeTemplate, Correction, Method, PerplexityReport, SurprisalRecord};
use crate::stats::{self, CorrelationReport, GainMode, StatsError};

/// Split name of the cell computed over every target.
pub const ALL_SPLIT: &str = "all";
pub const SIGNIFICANCE_LEVEL: f64 = 0.001;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("record for item {item_id:?} target {target_index} has no counterpart in dataset {dataset:?}")]
    OrphanRecord {
        dataset: String,
        item_id: String,
        target_index: usize,
    },
    #[error("record for item {item_id:?} target {target_index} names surface {record:?}, dataset has {dataset:?}")]
    SurfaceMismatch {
        item_id: String,
        target_index: usize,
        record: String,
        dataset: String,
    },
    #[error("duplicate record for item {item_id:?} target {target_index} ({model}, {method}, {correction})")]
    DuplicateRecord {
        item_id: String,
        target_index: usize,
        model: String,
        method: Method,
        correction: Correction,
    },
    #[error("malformed report json: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Stats(#[from] StatsError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisCell {
    pub dataset: String,
    pub model: String,
    pub method: Method,
    pub correction: Correction,
    /// `"all"` or a genre name.
    pub split: String,
    pub n_targets: usize,
    /// `100 * n_novel / n_targets` when labels are present.
    pub novel_pct: Option<f64>,
    pub correlation: CorrelationReport,
    pub perplexity: Option<PerplexityReport>,
    /// Conditions that left a measure undefined, or other caveats.
    pub flags: Vec<String>,
}

impl AnalysisCell {
    /// True when every computed p-value is below [`SIGNIFICANCE_LEVEL`]; `None` if nothing was computed.
    pub fn significant(&self) -> Option<bool> {
        let c = &self.correlation;
        let ps: Vec<f64> = [
            c.pearson.map(|x| x.p_value),
            c.spearman.map(|x| x.p_value),
            c.mann_whitney.map(|x| x.p_value),
        ]
        .into_iter()
        .flatten()
        .collect();
        (!ps.is_empty()).then(|| ps.iter().all(|&p| p < SIGNIFICANCE_LEVEL))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CorrelateOptions {
    /// Add one cell per genre next to the `"all"` cell.
    pub by_genre: bool,
}

struct Observation<'a> {
    surprisal: f64,
    target: &'a TargetAnnotation,
    genre: Option<Genre>,
}

type GroupKey = (String, Method, Correction);

/// Join records to annotations and compute every analysis cell.
///
/// Measures are chosen by the dataset's annotation kind: continuous scores get
/// Pearson and Spearman, labels get Mann-Whitney r_b and AUC. A cell where a
/// measure is undefined (single class, zero variance) is kept and flagged.
pub fn correlate(
    records: &[SurprisalRecord],
    ds: &Dataset,
    options: CorrelateOptions,
) -> Result<Vec<AnalysisCell>, ReportError> {
    let index = ds.index();
    let mut groups: BTreeMap<GroupKey, Vec<Observation>> = BTreeMap::new();
    let mut seen = HashSet::new();
    // key order makes cell values independent of record file order
    let mut ordered: Vec<&SurprisalRecord> = records.iter().collect();
    ordered.sort_by_cached_key(|r| r.key());
    for rec in ordered {
        let orphan = || ReportError::OrphanRecord {
            dataset: ds.name().to_owned(),
            item_id: rec.item_id.clone(),
            target_index: rec.target_index,
        };
        let item = index.get(rec.item_id.as_str()).ok_or_else(orphan)?;
        let target = item.targets.get(rec.target_index).ok_or_else(orphan)?;
        if target.surface != rec.surface {
            return Err(ReportError::SurfaceMismatch {
                item_id: rec.item_id.clone(),
                target_index: rec.target_index,
                record: rec.surface.clone(),
                dataset: target.surface.clone(),
            });
        }
        if !seen.insert(rec.key()) {
            return Err(ReportError::DuplicateRecord {
                item_id: rec.item_id.clone(),
                target_index: rec.target_index,
                model: rec.model.clone(),
                method: rec.method,
                correction: rec.correction,
            });
        }
        groups
            .entry((rec.model.clone(), rec.method, rec.correction))
            .or_default()
            .push(Observation {
                surprisal: rec.surprisal_nats,
                target,
                genre: item.genre,
            });
    }

    let split_totals = split_target_counts(ds);
    let mut cells = Vec::new();
    for ((model, method, correction), obs) in &groups {
        let mut splits: Vec<(String, Vec<&Observation>)> = Vec::new();
        if options.by_genre {
            for genre in Genre::ALL {
                let members: Vec<&Observation> = obs.iter().filter(|o| o.genre == Some(genre)).collect();
                if !members.is_empty() {
                    splits.push((genre.as_str().to_owned(), members));
                }
            }
        }
        splits.push((ALL_SPLIT.to_owned(), obs.iter().collect()));

        for (split, members) in splits {
            let mut cell = compute_cell(ds, model, *method, *correction, &split, &members);
            if members.len() < split_totals.get(split.as_str()).copied().unwrap_or(0) {
                cell.flags.push("partial_coverage".to_owned());
            }
            cells.push(cell);
        }
    }
    Ok(cells)
}

fn split_target_counts(ds: &Dataset) -> HashMap<&'static str, usize> {
    let mut counts = HashMap::new();
    for (item, _, _) in ds.targets() {
        *counts.entry(ALL_SPLIT).or_insert(0) += 1;
        if let Some(g) = item.genre {
            *counts.entry(g.as_str()).or_insert(0) += 1;
        }
    }
    counts
}

fn compute_cell(
    ds: &Dataset,
    model: &str,
    method: Method,
    correction: Correction,
    split: &str,
    members: &[&Observation],
) -> AnalysisCell {
    let kind = ds.annotation_kind();
    let mut flags = Vec::new();
    let surprisals: Vec<f64> = members.iter().map(|o| o.surprisal).collect();

    let (mut pearson, mut spearman) = (None, None);
    if kind.has_scores() {
        let scores: Vec<f64> = members
            .iter()
            .map(|o| o.target.novelty_score.expect("continuous datasets carry scores"))
            .collect();
        match stats::pearson(&surprisals, &scores) {
            Ok(r) => pearson = Some(r),
            Err(e) => flags.push(format!("pearson_undefined: {e}")),
        }
        match stats::spearman(&surprisals, &scores) {
            Ok(r) => spearman = Some(r),
            Err(e) => flags.push(format!("spearman_undefined: {e}")),
        }
    }

    let (mut n_novel, mut n_conventional, mut mann_whitney, mut novel_pct) = (0, 0, None, None);
    if kind.has_labels() {
        let mut novel = Vec::new();
        let mut conventional = Vec::new();
        for o in members {
            match o.target.novelty_label.expect("binary datasets carry labels") {
                NoveltyLabel::Novel => novel.push(o.surprisal),
                NoveltyLabel::Conventional => conventional.push(o.surprisal),
            }
        }
        n_novel = novel.len();
        n_conventional = conventional.len();
        novel_pct = Some(100.0 * n_novel as f64 / members.len() as f64);
        match stats::mann_whitney(&novel, &conventional) {
            Ok(m) => mann_whitney = Some(m),
            Err(StatsError::EmptyGroup) => flags.push("single_class".to_owned()),
            Err(e) => flags.push(format!("mann_whitney_undefined: {e}")),
        }
    }

    AnalysisCell {
        dataset: ds.name().to_owned(),
        model: model.to_owned(),
        method,
        correction,
        split: split.to_owned(),
        n_targets: members.len(),
        novel_pct,
        correlation: CorrelationReport {
            n: members.len(),
            pearson,
            spearman,
            n_novel,
            n_conventional,
            mann_whitney,
        },
        perplexity: None,
        flags,
    }
}

/// Attach perplexity reports of `model` to its cells, matching on split name.
pub fn attach_perplexity(cells: &mut [AnalysisCell], model: &str, reports: &[PerplexityReport]) {
    for cell in cells.iter_mut().filter(|c| c.model == model) {
        if let Some(r) = reports.iter().find(|r| r.split_name == cell.split) {
            cell.perplexity = Some(r.clone());
        }
    }
}

/// Rank-biserial gain of one cell over another.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainRow {
    pub dataset: String,
    pub split: String,
    pub correction: Correction,
    /// Row label: the model for cloze gains, the variant model for model gains.
    pub label: String,
    pub base: String,
    pub variant: String,
    pub base_r_b: f64,
    pub variant_r_b: f64,
    pub gain: f64,
    pub mode: GainMode,
}

/// Cloze-over-direct rank-biserial gains for every model with both methods.
pub fn cloze_gains(cells: &[AnalysisCell], mode: GainMode) -> Result<Vec<GainRow>, ReportError> {
    let mut rows = Vec::new();
    for direct in cells.iter().filter(|c| c.method == Method::Direct) {
        let Some(cloze) = cells.iter().find(|c| {
            c.method == Method::Cloze
                && c.dataset == direct.dataset
                && c.model == direct.model
                && c.correction == direct.correction
                && c.split == direct.split
        }) else {
            continue;
        };
        if let (Some(b), Some(v)) = (direct.correlation.rank_biserial(), cloze.correlation.rank_biserial()) {
            rows.push(GainRow {
                dataset: direct.dataset.clone(),
                split: direct.split.clone(),
                correction: direct.correction,
                label: direct.model.clone(),
                base: Method::Direct.to_string(),
                variant: Method::Cloze.to_string(),
                base_r_b: b,
                variant_r_b: v,
                gain: stats::gain_percent(b, v, mode)?,
                mode,
            });
        }
    }
    Ok(rows)
}

/// Variant-over-base model gains (e.g. instruction-tuned over base) for matching cells.
pub fn model_gains(
    cells: &[AnalysisCell],
    pairs: &[(String, String)],
    mode: GainMode,
) -> Result<Vec<GainRow>, ReportError> {
    let mut rows = Vec::new();
    for (base_model, variant_model) in pairs {
        for base in cells.iter().filter(|c| &c.model == base_model) {
            let Some(variant) = cells.iter().find(|c| {
                &c.model == variant_model
                    && c.dataset == base.dataset
                    && c.method == base.method
                    && c.correction == base.correction
                    && c.split == base.split
            }) else {
                continue;
            };
            if let (Some(b), Some(v)) = (base.correlation.rank_biserial(), variant.correlation.rank_biserial()) {
                rows.push(GainRow {
                    dataset: base.dataset.clone(),
                    split: base.split.clone(),
                    correction: base.correction,
                    label: variant_model.clone(),
                    base: base_model.clone(),
                    variant: variant_model.clone(),
                    base_r_b: b,
                    variant_r_b: v,
                    gain: stats::gain_percent(b, v, mode)?,
                    mode,
                });
            }
        }
    }
    Ok(rows)
}

/// Every knob that shaped a report, embedded next to its cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub tool_version: String,
    pub dataset: String,
    pub threshold: Option<f64>,
    /// One descriptor per scoring run that produced the records.
    pub backends: Vec<BackendDescriptor>,
    pub templates: Vec<ClozeTemplate>,
    pub corrections: Vec<Correction>,
    pub significance_procedures: String,
    pub significance_level: f64,
    pub gain_mode: GainMode,
}

impl ReportMetadata {
    pub fn new(dataset: impl Into<String>) -> Self {
        Self {
            tool_version: crate::VERSION.to_owned(),
            dataset: dataset.into(),
            threshold: None,
            backends: Vec::new(),
            templates: Vec::new(),
            corrections: Vec::new(),
            significance_procedures: stats::SIGNIFICANCE_PROCEDURES.to_owned(),
            significance_level: SIGNIFICANCE_LEVEL,
            gain_mode: GainMode::AbsolutePoints,
        }
    }
}

/// A complete report file: metadata, cells and gain rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub metadata: ReportMetadata,
    pub cells: Vec<AnalysisCell>,
    pub gains: Vec<GainRow>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Tsv,
    Markdown,
    Json,
}

pub const CELL_COLUMNS: [&str; 20] = [
    "dataset",
    "model",
    "method",
    "correction",
    "split",
    "n",
    "n_novel",
    "n_conventional",
    "novel_pct",
    "r",
    "r_p",
    "rho",
    "rho_p",
    "r_b",
    "r_b_p",
    "auc",
    "u",
    "ppl",
    "significant_0.001",
    "flags",
];

fn fixed3(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_owned(), |x| format!("{x:.3}"))
}

fn sci(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_owned(), |x| format!("{x:.3e}"))
}

/// Three decimals without the leading zero, as in published tables (`.419`, `-.05`).
fn no_lead_zero3(v: Option<f64>) -> String {
    match v {
        None => "–".to_owned(),
        Some(x) => {
            let s = format!("{x:.3}");
            if let Some(rest) = s.strip_prefix("0.") {
                format!(".{rest}")
            } else if let Some(rest) = s.strip_prefix("-0.") {
                format!("-.{rest}")
            } else {
                s
            }
        }
    }
}

/// Render cells in the requested format.
pub fn emit(cells: &[AnalysisCell], format: OutputFormat) -> String {
    match format {
        OutputFormat::Tsv => emit_tsv(cells),
        OutputFormat::Markdown => emit_markdown(cells),
        OutputFormat::Json => serde_json::to_string_pretty(cells).expect("cells serialize"),
    }
}

pub fn parse_cells_json(text: &str) -> Result<Vec<AnalysisCell>, ReportError> {
    Ok(serde_json::from_str(text)?)
}

fn emit_tsv(cells: &[AnalysisCell]) -> String {
    let mut out = CELL_COLUMNS.join("\t");
    out.push('\n');
    for c in cells {
        let k = &c.correlation;
        let mw = k.mann_whitney;
        let row = [
            c.dataset.clone(),
            c.model.clone(),
            c.method.to_string(),
            c.correction.to_string(),
            c.split.clone(),
            c.n_targets.to_string(),
            k.n_novel.to_string(),
            k.n_conventional.to_string(),
            fixed3(c.novel_pct),
            fixed3(k.pearson.map(|x| x.coefficient)),
            sci(k.pearson.map(|x| x.p_value)),
            fixed3(k.spearman.map(|x| x.coefficient)),
            sci(k.spearman.map(|x| x.p_value)),
            fixed3(mw.map(|m| m.rank_biserial)),
            sci(mw.map(|m| m.p_value)),
            fixed3(mw.map(|m| m.auc)),
            mw.map_or_else(|| "NA".to_owned(), |m| format!("{:.1}", m.u)),
            fixed3(c.perplexity.as_ref().map(|p| p.perplexity)),
            match c.significant() {
                Some(true) => "yes".to_owned(),
                Some(false) => "no".to_owned(),
                None => "NA".to_owned(),
            },
            if c.flags.is_empty() { "-".to_owned() } else { c.flags.join(";") },
        ];
        out.push_str(&row.join("\t"));
        out.push('\n');
    }
    out
}

type TableKey = (String, Method, Correction, bool);

fn emit_markdown(cells: &[AnalysisCell]) -> String {
    // Preserve first-appearance order of tables and rows.
    let mut tables: Vec<(TableKey, Vec<&AnalysisCell>)> = Vec::new();
    let by_genre = cells.iter().any(|c| c.split != ALL_SPLIT);
    for cell in cells {
        let key = if by_genre {
            (format!("{} / {}", cell.dataset, cell.model), cell.method, cell.correction, true)
        } else {
            (cell.dataset.clone(), cell.method, cell.correction, false)
        };
        match tables.iter_mut().find(|(k, _)| *k == key) {
            Some((_, rows)) => rows.push(cell),
            None => tables.push((key, vec![cell])),
        }
    }

    let mut out = String::new();
    for ((title, method, correction, genre_table), rows) in tables {
        let _ = writeln!(out, "### {title} ({method}, {correction})\n");
        if genre_table {
            out.push_str("| Genre | n | Nov. % | ppl. | r | ρ | r_b | AUC |\n");
            out.push_str("|---|---:|---:|---:|---:|---:|---:|---:|\n");
        } else {
            out.push_str("| Model | n | r | ρ | r_b | AUC |\n");
            out.push_str("|---|---:|---:|---:|---:|---:|\n");
        }
        let mut not_significant = Vec::new();
        for c in &rows {
            let k = &c.correlation;
            let metrics = format!(
                "{} | {} | {} | {}",
                no_lead_zero3(k.pearson.map(|x| x.coefficient)),
                no_lead_zero3(k.spearman.map(|x| x.coefficient)),
                no_lead_zero3(k.rank_biserial()),
                no_lead_zero3(k.auc()),
            );
            if genre_table {
                let _ = writeln!(
                    out,
                    "| {} | {} | {} | {} | {metrics} |",
                    title_case(&c.split),
                    c.n_targets,
                    c.novel_pct.map_or_else(|| "–".to_owned(), |p| format!("{p:.2}")),
                    c.perplexity.as_ref().map_or_else(|| "–".to_owned(), |p| format!("{:.0}", p.perplexity)),
                );
            } else {
                let _ = writeln!(out, "| {} | {} | {metrics} |", c.model, c.n_targets);
            }
            if c.significant() == Some(false) {
                not_significant.push(if genre_table { title_case(&c.split) } else { c.model.clone() });
            }
        }
        out.push('\n');
        if not_significant.is_empty() {
            let _ = writeln!(out, "All estimates significant at the {SIGNIFICANCE_LEVEL} level.\n");
        } else {
            let _ = writeln!(
                out,
                "Not significant at the {SIGNIFICANCE_LEVEL} level: {}.\n",
                not_significant.join(", ")
            );
        }
        let flagged: Vec<String> = rows
            .iter()
            .filter(|c| !c.flags.is_empty())
            .map(|c| format!("{}/{}: {}", c.model, c.split, c.flags.join("; ")))
            .collect();
        if !flagged.is_empty() {
            let _ = writeln!(out, "Flags: {}\n", flagged.join(" | "));
        }
    }
    out
}

fn title_case(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(first) => first.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

pub const GAIN_COLUMNS: [&str; 10] = [
    "dataset",
    "split",
    "correction",
    "label",
    "base",
    "variant",
    "base_r_b",
    "variant_r_b",
    "gain",
    "mode",
];

/// Render gain rows: TSV in long form, markdown as a label × dataset grid.
pub fn emit_gains(rows: &[GainRow], format: OutputFormat) -> String {
    match format {
        OutputFormat::Json => serde_json::to_string_pretty(rows).expect("rows serialize"),
        OutputFormat::Tsv => {
            let mut out = GAIN_COLUMNS.join("\t");
            out.push('\n');
            for r in rows {
                let mode = match r.mode {
                    GainMode::Relative => "relative",
                    GainMode::AbsolutePoints => "absolute_points",
                };
                let _ = writeln!(
                    out,
                    "{}\t{}\t{}\t{}\t{}\t{}\t{:.3}\t{:.3}\t{:+.1}\t{mode}",
                    r.dataset, r.split, r.correction, r.label, r.base, r.variant, r.base_r_b, r.variant_r_b, r.gain
                );
            }
            out
        }
        OutputFormat::Markdown => {
            let mut datasets: Vec<&str> = Vec::new();
            let mut labels: Vec<&str> = Vec::new();
            for r in rows {
                if !datasets.contains(&r.dataset.as_str()) {
                    datasets.push(&r.dataset);
                }
                if !labels.contains(&r.label.as_str()) {
                    labels.push(&r.label);
                }
            }
            let mut out = format!("| Model | {} |\n", datasets.join(" | "));
            let _ = writeln!(out, "|---|{}", "---:|".repeat(datasets.len()));
            for label in labels {
                let cells: Vec<String> = datasets
                    .iter()
                    .map(|d| {
                        rows.iter()
                            .find(|r| r.label == label && r.dataset == *d && r.split == ALL_SPLIT)
                            .map_or_else(|| "–".to_owned(), |r| format!("{:+.1}", r.gain))
                    })
                    .collect();
                let _ = writeln!(out, "| {label} | {} |", cells.join(" | "));
            }
            out
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{SentenceItem, TargetAnnotation};
    use crate::stats::MannWhitney;

    fn dataset(labels: &[(Option<Genre>, NoveltyLabel)]) -> Dataset {
        let items = labels
            .iter()
            .enumerate()
            .map(|(i, &(genre, label))| SentenceItem {
                id: format!("i{i}"),
                sentence: "a word".into(),
                genre,
                targets: vec![TargetAnnotation {
                    surface: "word".into(),
                    start: 2,
                    end: 6,
                    novelty_score: None,
                    novelty_label: Some(label),
                    pos: None,
                }],
            })
            .collect();
        Dataset::from_items("toy", items).unwrap()
    }

    fn record(i: usize, s: f64) -> SurprisalRecord {
        SurprisalRecord {
            item_id: format!("i{i}"),
            target_index: 0,
            surface: "word".into(),
            method: Method::Direct,
            model: "m".into(),
            correction: Correction::Raw,
            surprisal_nats: s,
            span_first: 1,
            span_last: 1,
            leakage: 1,
        }
    }

    use NoveltyLabel::{Conventional as C, Novel as N};

    #[test]
    fn binary_cell_and_genre_split() {
        let ds = dataset(&[
            (Some(Genre::Fiction), N),
            (Some(Genre::Fiction), C),
            (Some(Genre::News), C),
            (Some(Genre::News), C),
        ]);
        let recs: Vec<_> = [5.0, 2.0, 3.0, 1.0].iter().enumerate().map(|(i, &s)| record(i, s)).collect();
        let cells = correlate(&recs, &ds, CorrelateOptions { by_genre: true }).unwrap();
        let splits: Vec<&str> = cells.iter().map(|c| c.split.as_str()).collect();
        assert_eq!(splits, ["fiction", "news", "all"]);
        let all = &cells[2];
        assert_eq!(all.correlation.rank_biserial(), Some(1.0));
        assert_eq!(all.novel_pct, Some(25.0));
        assert!(all.correlation.pearson.is_none());
        // single-class genre is flagged, not dropped
        assert_eq!(cells[1].flags, ["single_class"]);
        assert!(cells[1].correlation.mann_whitney.is_none());
    }

    #[test]
    fn all_row_is_recomputed_not_averaged() {
        let ds = dataset(&[
            (Some(Genre::Fiction), N),
            (Some(Genre::Fiction), C),
            (Some(Genre::News), N),
            (Some(Genre::News), C),
        ]);
        let recs: Vec<_> = [2.0, 1.0, 4.0, 3.0].iter().enumerate().map(|(i, &s)| record(i, s)).collect();
        let cells = correlate(&recs, &ds, CorrelateOptions { by_genre: true }).unwrap();
        assert_eq!(cells[0].correlation.rank_biserial(), Some(1.0));
        assert_eq!(cells[1].correlation.rank_biserial(), Some(1.0));
        // pairs: (2,1)+ (2,3)- (4,1)+ (4,3)+ -> 2/4
        assert_eq!(cells[2].correlation.rank_biserial(), Some(0.5));
    }

    #[test]
    fn join_errors() {
        let ds = dataset(&[(None, N), (None, C)]);
        let mut orphan = record(9, 1.0);
        assert!(matches!(
            correlate(&[orphan.clone()], &ds, CorrelateOptions::default()),
            Err(ReportError::OrphanRecord { .. })
        ));
        orphan.item_id = "i0".into();
        orphan.target_index = 1;
        assert!(matches!(
            correlate(&[orphan], &ds, CorrelateOptions::default()),
            Err(ReportError::OrphanRecord { .. })
        ));
        let mut wrong = record(0, 1.0);
        wrong.surface = "other".into();
        assert!(matches!(
            correlate(&[wrong], &ds, CorrelateOptions::default()),
            Err(ReportError::SurfaceMismatch { .. })
        ));
        assert!(matches!(
            correlate(&[record(0, 1.0), record(0, 2.0)], &ds, CorrelateOptions::default()),
            Err(ReportError::DuplicateRecord { .. })
        ));
    }

    #[test]
    fn partial_coverage_flagged() {
        let ds = dataset(&[(None, N), (None, C), (None, C)]);
        let cells = correlate(&[record(0, 2.0), record(1, 1.0)], &ds, CorrelateOptions::default()).unwrap();
        assert_eq!(cells[0].flags, ["partial_coverage"]);
    }

    #[test]
    fn leading_zero_dropped() {
        assert_eq!(no_lead_zero3(Some(0.4187)), ".419");
        assert_eq!(no_lead_zero3(Some(-0.05)), "-.050");
        assert_eq!(no_lead_zero3(Some(1.0)), "1.000");
        assert_eq!(no_lead_zero3(None), "–");
    }

    fn cell_with(model: &str, method: Method, r_b: f64) -> AnalysisCell {
        AnalysisCell {
            dataset: "d".into(),
            model: model.into(),
            method,
            correction: Correction::Raw,
            split: ALL_SPLIT.into(),
            n_targets: 10,
            novel_pct: Some(50.0),
            correlation: CorrelationReport {
                n: 10,
                pearson: None,
                spearman: None,
                n_novel: 5,
                n_conventional: 5,
                mann_whitney: Some(MannWhitney {
                    n_novel: 5,
                    n_conventional: 5,
                    wins: 0,
                    losses: 0,
                    ties: 0,
                    u: 0.0,
                    rank_biserial: r_b,
                    auc: (r_b + 1.0) / 2.0,
                    p_value: 0.01,
                    exact: true,
                }),
            },
            perplexity: None,
            flags: vec![],
        }
    }

    #[test]
    fn gain_tables() {
        let cells = vec![
            cell_with("base", Method::Direct, 0.638),
            cell_with("base", Method::Cloze, 0.687),
            cell_with("base-it", Method::Direct, 0.678),
        ];
        let cloze = cloze_gains(&cells, GainMode::AbsolutePoints).unwrap();
        assert_eq!(cloze.len(), 1);
        assert!((cloze[0].gain - 4.9).abs() < 1e-9);
        let it = model_gains(&cells, &[("base".into(), "base-it".into())], GainMode::AbsolutePoints).unwrap();
        assert_eq!(it.len(), 1);
        assert!((it[0].gain - 4.0).abs() < 1e-9);
        let md = emit_gains(&cloze, OutputFormat::Markdown);
        assert_eq!(md, "| Model | d |\n|---|---:|\n| base | +4.9 |\n");
        assert!(emit_gains(&it, OutputFormat::Tsv).contains("\t+4.0\tabsolute_points\n"));
    }

    #[test]
    fn tsv_header_is_stable() {
        let cells = vec![cell_with("m", Method::Direct, 0.5)];
        let a = emit(&cells, OutputFormat::Tsv);
        let b = emit(&cells, OutputFormat::Tsv);
        assert_eq!(a, b);
        assert_eq!(a.lines().next().unwrap(), CELL_COLUMNS.join("\t"));
        assert!(a.contains("\t0.500\t1.000e-2\t0.750\t0.0\t"));
    }

    #[test]
    fn json_roundtrip_is_lossless() {
        let mut cells = vec![cell_with("m", Method::Cloze, 0.1 + 0.2)];
        cells[0].flags.push("partial_coverage".into());
        let json = emit(&cells, OutputFormat::Json);
        assert_eq!(parse_cells_json(&json).unwrap(), cells);
    }
}
