use std::collections::{BTreeMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::json;

use surpnov_core::backends::{open_backend, BackendDescriptor, MockLM};
use surpnov_core::dataset::{binarize, load_dataset, synthesize_corpus, Dataset, DatasetFormat, Genre};
use surpnov_core::report::{
    attach_perplexity, cloze_gains, correlate, emit, emit_gains, model_gains, AnalysisCell, CorrelateOptions,
    OutputFormat, Report, ReportMetadata, ALL_SPLIT,
};
use surpnov_core::scoring::{
    corpus_perplexity, parse_records_tsv, score_items, write_records_tsv, PerplexityReport, RecordKey,
    ScoreFailure, ScorePlan, SurprisalRecord,
};
use surpnov_core::SentenceItem;

use crate::args::{CorrelateArgs, PerplexityArgs, SynthesizeArgs};
use crate::config::{self, ensure_dir, file_component, write_manifest, Manifest, RunConfig};

pub fn records_path(out: &Path, dataset: &str, model: &str) -> PathBuf {
    out.join(format!("{}.{}.records.tsv", file_component(dataset), file_component(model)))
}

fn sibling(records: &Path, suffix: &str) -> PathBuf {
    let name = records.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let stem = name.strip_suffix(".records.tsv").unwrap_or(&name);
    records.with_file_name(format!("{stem}.{suffix}"))
}

#[derive(Debug)]
pub struct ScoreOutcome {
    pub records_path: PathBuf,
    pub existing: usize,
    pub written: usize,
    pub failures: Vec<ScoreFailure>,
}

/// Read an existing records file, dropping an incomplete trailing line left by an interrupted run.
fn load_existing(path: &Path, model: &str) -> Result<Vec<SurprisalRecord>> {
    let Ok(mut text) = fs::read_to_string(path) else {
        return Ok(Vec::new());
    };
    if !text.is_empty() && !text.ends_with('\n') {
        let keep = text.rfind('\n').map_or(0, |i| i + 1);
        log::warn!("{}: dropping incomplete trailing line", path.display());
        text.truncate(keep);
        let file = OpenOptions::new().write(true).open(path)?;
        file.set_len(keep as u64)?;
    }
    if text.is_empty() {
        return Ok(Vec::new());
    }
    let records = parse_records_tsv(&text)
        .with_context(|| format!("existing records file {} is unreadable; move it aside", path.display()))?;
    if let Some(other) = records.iter().find(|r| r.model != model) {
        bail!("{} holds records for model {:?}, not {model:?}", path.display(), other.model);
    }
    Ok(records)
}

/// Score every pending (target, method, correction) and append to the records file.
pub fn cmd_score(cfg: &RunConfig) -> Result<ScoreOutcome> {
    let started = Instant::now();
    let ds = load_dataset(&cfg.dataset, DatasetFormat::Jsonl)?;
    let backend = open_backend(cfg.backend.clone(), MockLM::default(), cfg.http_options()?)?;
    ensure_dir(&cfg.out)?;
    let path = records_path(&cfg.out, ds.name(), &cfg.backend.model_id);

    let existing = load_existing(&path, &cfg.backend.model_id)?;
    let done: HashSet<RecordKey> = existing.iter().map(SurprisalRecord::key).collect();
    let mut file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&path)
        .with_context(|| format!("opening {}", path.display()))?;
    if file.metadata()?.len() == 0 {
        write_records_tsv(&mut file, &[], true)?;
    }

    let plan = ScorePlan {
        methods: &cfg.methods,
        corrections: &cfg.corrections,
        template: &cfg.template,
    };
    let items: Vec<&SentenceItem> = ds.items().iter().collect();
    let mut written = 0;
    let mut failures = Vec::new();
    for chunk in items.chunks(cfg.chunk_size) {
        let (records, failed) = score_items(chunk, backend.as_ref(), &plan, &|k| done.contains(k));
        write_records_tsv(&mut file, &records, false)?;
        file.flush()?;
        written += records.len();
        failures.extend(failed);
    }
    file.sync_all()?;

    let failures_path = sibling(&path, "failures.jsonl");
    if failures.is_empty() {
        let _ = fs::remove_file(&failures_path);
    } else {
        let mut out = String::new();
        for f in &failures {
            out.push_str(&serde_json::to_string(f)?);
            out.push('\n');
        }
        fs::write(&failures_path, out)?;
    }
    let mut outputs = vec![path.clone()];
    if !failures.is_empty() {
        outputs.push(failures_path);
    }
    write_manifest(
        &sibling(&path, "score.manifest.json"),
        &Manifest {
            command: "score".into(),
            tool_version: surpnov_core::VERSION.into(),
            dataset: ds.name().into(),
            config: cfg,
            outputs,
            summary: json!({
                "items": ds.items().len(),
                "targets": ds.target_count(),
                "existing_records": existing.len(),
                "written_records": written,
                "failures": failures.len(),
            }),
        },
    )?;
    log::info!(
        "{}: {} existing, {written} new records, {} failures in {:.2?}",
        path.display(),
        existing.len(),
        failures.len(),
        started.elapsed()
    );
    Ok(ScoreOutcome {
        records_path: path,
        existing: existing.len(),
        written,
        failures,
    })
}

fn discover_records(out: &Path, dataset: &str) -> Result<Vec<PathBuf>> {
    let prefix = format!("{}.", file_component(dataset));
    let mut found: Vec<PathBuf> = fs::read_dir(out)
        .with_context(|| format!("listing {}", out.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with(&prefix) && n.ends_with(".records.tsv"))
        })
        .collect();
    found.sort();
    Ok(found)
}

/// The score manifest stored next to a records file, when present.
fn score_config(records: &Path) -> Option<RunConfig> {
    let text = fs::read_to_string(sibling(records, "score.manifest.json")).ok()?;
    let manifest: Manifest<RunConfig> = serde_json::from_str(&text).ok()?;
    Some(manifest.config)
}

fn parse_pair(s: &str) -> Result<(String, String)> {
    match s.split_once('=') {
        Some((a, b)) if !a.is_empty() && !b.is_empty() => Ok((a.to_owned(), b.to_owned())),
        _ => Err(anyhow!("--pair {s:?} is not BASE=VARIANT")),
    }
}

/// Perplexity results for one model, as written by `perplexity`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerplexityFile {
    pub dataset: String,
    pub model: String,
    pub backend: BackendDescriptor,
    pub reports: Vec<PerplexityReport>,
}

#[derive(Debug)]
pub struct CorrelateOutcome {
    pub report: Report,
    pub outputs: Vec<PathBuf>,
}

/// Dataset used for correlation: score-only datasets are binarized at `threshold`.
pub fn analysis_dataset(ds: Dataset, threshold: f64) -> Result<Dataset> {
    let kind = ds.annotation_kind();
    if kind.has_scores() && !kind.has_labels() {
        Ok(binarize(&ds, threshold)?)
    } else {
        Ok(ds)
    }
}

pub fn cmd_correlate(args: &CorrelateArgs) -> Result<CorrelateOutcome> {
    let ds = analysis_dataset(load_dataset(&args.dataset, DatasetFormat::Jsonl)?, args.threshold)?;
    let pairs = args.pairs.iter().map(|p| parse_pair(p)).collect::<Result<Vec<_>>>()?;
    let record_files = if args.records.is_empty() {
        discover_records(&args.out, ds.name())?
    } else {
        args.records.clone()
    };
    if record_files.is_empty() {
        bail!("no records files for dataset {:?} in {}", ds.name(), args.out.display());
    }
    let mut records = Vec::new();
    let mut metadata = ReportMetadata::new(ds.name());
    metadata.threshold = Some(args.threshold);
    metadata.gain_mode = args.gain_mode.into();
    for path in &record_files {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        records.extend(parse_records_tsv(&text).with_context(|| format!("parsing {}", path.display()))?);
        if let Some(cfg) = score_config(path) {
            metadata.backends.push(cfg.backend);
            if !metadata.templates.contains(&cfg.template) {
                metadata.templates.push(cfg.template);
            }
        }
    }
    let mut corrections: Vec<_> = records.iter().map(|r| r.correction).collect();
    corrections.sort();
    corrections.dedup();
    metadata.corrections = corrections;

    let mut cells = correlate(&records, &ds, CorrelateOptions { by_genre: args.genre })?;
    for path in &args.perplexity {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let file: PerplexityFile =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        attach_perplexity(&mut cells, &file.model, &file.reports);
    }
    let mode = args.gain_mode.into();
    let mut gains = cloze_gains(&cells, mode)?;
    gains.extend(model_gains(&cells, &pairs, mode)?);

    ensure_dir(&args.out)?;
    let dataset = file_component(ds.name());
    let mut outputs = Vec::new();
    let mut by_model_method: BTreeMap<(String, String), Vec<AnalysisCell>> = BTreeMap::new();
    for c in &cells {
        by_model_method
            .entry((c.model.clone(), c.method.to_string()))
            .or_default()
            .push(c.clone());
    }
    for ((model, method), group) in &by_model_method {
        let path = args
            .out
            .join(format!("{dataset}.{}.{method}.cells.tsv", file_component(model)));
        fs::write(&path, emit(group, OutputFormat::Tsv))?;
        outputs.push(path);
    }
    if !gains.is_empty() {
        let path = args.out.join(format!("{dataset}.gains.tsv"));
        fs::write(&path, emit_gains(&gains, OutputFormat::Tsv))?;
        outputs.push(path);
    }
    let report = Report {
        metadata,
        cells,
        gains,
    };
    let md_path = args.out.join(format!("{dataset}.report.md"));
    fs::write(&md_path, render_markdown(&report))?;
    let json_path = args.out.join(format!("{dataset}.report.json"));
    fs::write(&json_path, serde_json::to_string_pretty(&report)? + "\n")?;
    outputs.push(md_path);
    outputs.push(json_path);

    write_manifest(
        &args.out.join(format!("{dataset}.correlate.manifest.json")),
        &Manifest {
            command: "correlate".into(),
            tool_version: surpnov_core::VERSION.into(),
            dataset: ds.name().into(),
            config: json!({
                "dataset": args.dataset,
                "records": record_files,
                "threshold": args.threshold,
                "genre": args.genre,
                "perplexity": args.perplexity,
                "pairs": args.pairs,
                "gain_mode": report.metadata.gain_mode,
            }),
            outputs: outputs.clone(),
            summary: json!({ "records": records.len(), "cells": report.cells.len(), "gains": report.gains.len() }),
        },
    )?;
    Ok(CorrelateOutcome { report, outputs })
}

fn render_markdown(report: &Report) -> String {
    let m = &report.metadata;
    let mut out = format!("# {}\n\n", m.dataset);
    let mut meta = vec![
        format!("- tool version: {}", m.tool_version),
        format!(
            "- corrections: {}",
            m.corrections.iter().map(|c| c.as_str()).collect::<Vec<_>>().join(", ")
        ),
        format!("- significance: {} (threshold {})", m.significance_procedures, m.significance_level),
    ];
    if let Some(t) = m.threshold {
        meta.push(format!("- novelty threshold: {t}"));
    }
    for t in &m.templates {
        meta.push(format!("- cloze template {:?}: {:?}", t.id, t.text));
    }
    for b in &m.backends {
        meta.push(format!(
            "- backend: {:?} model {} (bos: {})",
            b.kind, b.model_id, b.prepend_bos
        ));
    }
    out.push_str(&meta.join("\n"));
    out.push_str("\n\n## Correlations\n\n");
    out.push_str(&emit(&report.cells, OutputFormat::Markdown));
    if !report.gains.is_empty() {
        let unit = match m.gain_mode {
            surpnov_core::GainMode::AbsolutePoints => "percentage points",
            surpnov_core::GainMode::Relative => "relative %",
        };
        let (cloze, models): (Vec<_>, Vec<_>) = report.gains.iter().cloned().partition(|g| g.base == "direct");
        for (title, rows) in [("Cloze over direct", cloze), ("Variant over base model", models)] {
            if !rows.is_empty() {
                out.push_str(&format!("## {title} r_b gains ({unit})\n\n"));
                out.push_str(&emit_gains(&rows, OutputFormat::Markdown));
                out.push('\n');
            }
        }
    }
    out
}

pub fn cmd_perplexity(args: &PerplexityArgs) -> Result<PerplexityFile> {
    let ds = load_dataset(&args.dataset, DatasetFormat::Jsonl)?;
    let desc = config::descriptor(&args.backend)?;
    let backend = open_backend(
        desc.clone(),
        MockLM::default(),
        config::http_options(args.backend.max_in_flight, false)?,
    )?;
    let mut splits: Vec<(String, Vec<&SentenceItem>)> = Vec::new();
    if args.genre {
        for genre in Genre::ALL {
            let items = ds.split(genre);
            if !items.is_empty() {
                splits.push((genre.as_str().to_owned(), items));
            }
        }
    }
    splits.push((ALL_SPLIT.to_owned(), ds.items().iter().collect()));
    let mut reports = Vec::new();
    for (name, items) in &splits {
        reports.push(corpus_perplexity(name, items, backend.as_ref())?);
    }

    ensure_dir(&args.out)?;
    let stem = format!("{}.{}", file_component(ds.name()), file_component(&desc.model_id));
    let file = PerplexityFile {
        dataset: ds.name().into(),
        model: desc.model_id.clone(),
        backend: desc,
        reports,
    };
    let json_path = args.out.join(format!("{stem}.perplexity.json"));
    fs::write(&json_path, serde_json::to_string_pretty(&file)? + "\n")?;
    let tsv_path = args.out.join(format!("{stem}.perplexity.tsv"));
    let mut tsv =
        String::from("split\tsentences\ttokens\tmean_surprisal\tperplexity\tsentence_weighted_perplexity\n");
    for r in &file.reports {
        tsv.push_str(&format!(
            "{}\t{}\t{}\t{:.6}\t{:.3}\t{:.3}\n",
            r.split_name, r.sentence_count, r.token_count, r.mean_token_surprisal, r.perplexity,
            r.sentence_weighted_perplexity
        ));
    }
    fs::write(&tsv_path, tsv)?;
    write_manifest(
        &args.out.join(format!("{stem}.perplexity.manifest.json")),
        &Manifest {
            command: "perplexity".into(),
            tool_version: surpnov_core::VERSION.into(),
            dataset: ds.name().into(),
            config: json!({ "dataset": args.dataset, "backend": file.backend, "genre": args.genre }),
            outputs: vec![json_path, tsv_path],
            summary: json!({ "splits": file.reports.len() }),
        },
    )?;
    Ok(file)
}

pub fn cmd_synthesize(args: &SynthesizeArgs) -> Result<Dataset> {
    let ds = synthesize_corpus(args.seed, args.n)?;
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        ensure_dir(dir)?;
    }
    let mut f = File::create(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    f.write_all(ds.to_jsonl().as_bytes())?;
    Ok(ds)
}
