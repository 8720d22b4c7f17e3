//! Direct surprisal, cloze surprisal and corpus perplexity.
//!
//! All quantities are in nats. A word's surprisal is the sum of its subword
//! tokens' surprisals, i.e. the negative log-probability of the whole span.

use std::fmt;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::alignment::{find_minimal_span, AlignmentError, TokenScoring, TokenSpan};
use crate::backends::{BackendError, ScoringBackend};
use crate::dataset::SentenceItem;
use crate::numeric;
use crate::text::{char_len, char_slice, CharRange};

pub const MASKED_PLACEHOLDER: &str = "{masked}";
pub const COMPLETION_PLACEHOLDER: &str = "{completion}";
pub const DEFAULT_BLANK: &str = "____";
pub const DEFAULT_TEMPLATE_ID: &str = "fill-in-the-blank";
pub const DEFAULT_TEMPLATE: &str = "Fill in the blank:\n{masked}\n{completion}";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Direct,
    Cloze,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Direct => "direct",
            Method::Cloze => "cloze",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Correction {
    Raw,
    BoundaryCorrected,
}

impl Correction {
    pub fn as_str(&self) -> &'static str {
        match self {
            Correction::Raw => "raw",
            Correction::BoundaryCorrected => "boundary_corrected",
        }
    }
}

impl fmt::Display for Correction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error)]
pub enum ScoringError {
    #[error("item {item_id}: no target {target_index}")]
    NoSuchTarget { item_id: String, target_index: usize },
    #[error("item {item_id}, target {target_index}: {source}")]
    Alignment {
        item_id: String,
        target_index: usize,
        source: AlignmentError,
    },
    #[error("item {item_id}: {source}")]
    Backend { item_id: String, source: BackendError },
    #[error("boundary correction needs a boundary mass at token position {0}")]
    MissingBoundaryMass(usize),
    #[error("span {first}..={last} is invalid for a scoring of {tokens} tokens")]
    InvalidSpan { first: usize, last: usize, tokens: usize },
    #[error("surprisal {0} is negative or not finite")]
    InvalidSurprisal(f64),
    #[error("cloze template {0}")]
    Template(String),
    #[error("perplexity needs at least one scored token")]
    EmptyCorpus,
    #[error("records file: {0}")]
    Csv(#[from] csv::Error),
    #[error("records file: {0}")]
    Io(#[from] io::Error),
}

/// One (item, target, model, method) measurement; also one row of the records TSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurprisalRecord {
    pub item_id: String,
    pub target_index: usize,
    pub surface: String,
    pub method: Method,
    pub model: String,
    pub correction: Correction,
    pub surprisal_nats: f64,
    pub span_first: usize,
    pub span_last: usize,
    pub leakage: usize,
}

/// Resume/deduplication key of a record.
pub type RecordKey = (String, usize, Method, String, Correction);

impl SurprisalRecord {
    pub fn key(&self) -> RecordKey {
        (
            self.item_id.clone(),
            self.target_index,
            self.method,
            self.model.clone(),
            self.correction,
        )
    }
}

/// Surprisal of the tokens in `span`.
///
/// Raw mode sums `-logprob` over the span's non-special tokens. Boundary-corrected
/// mode adds `-ln(mass after the span)` and subtracts `-ln(mass at the span's
/// first token)`, where the masses are the probabilities of word-boundary-initial
/// tokens at those positions.
pub fn word_surprisal(scoring: &TokenScoring, span: &TokenSpan, correction: Correction) -> Result<f64, ScoringError> {
    if span.first > span.last || span.last >= scoring.tokens.len() {
        return Err(ScoringError::InvalidSpan {
            first: span.first,
            last: span.last,
            tokens: scoring.tokens.len(),
        });
    }
    let raw = numeric::sum(
        scoring.tokens[span.first..=span.last]
            .iter()
            .filter(|t| !t.special)
            .map(|t| -t.logprob),
    );
    let value = match correction {
        Correction::Raw => raw,
        Correction::BoundaryCorrected => {
            let at_first = scoring
                .boundary_mass_at(span.first)
                .ok_or(ScoringError::MissingBoundaryMass(span.first))?;
            let after = scoring
                .boundary_mass_at(span.last + 1)
                .ok_or(ScoringError::MissingBoundaryMass(span.last + 1))?;
            raw - after.ln() + at_first.ln()
        }
    };
    if !value.is_finite() || value < 0.0 {
        return Err(ScoringError::InvalidSurprisal(value));
    }
    Ok(value)
}

fn target_of(item: &SentenceItem, target_index: usize) -> Result<&crate::dataset::TargetAnnotation, ScoringError> {
    item.targets.get(target_index).ok_or_else(|| ScoringError::NoSuchTarget {
        item_id: item.id.clone(),
        target_index,
    })
}

fn record_for(
    item: &SentenceItem,
    target_index: usize,
    method: Method,
    model: &str,
    scoring: &TokenScoring,
    range: CharRange,
    correction: Correction,
) -> Result<SurprisalRecord, ScoringError> {
    let span = find_minimal_span(scoring, range).map_err(|source| ScoringError::Alignment {
        item_id: item.id.clone(),
        target_index,
        source,
    })?;
    if span.is_suspicious() {
        log::warn!(
            "item {}, target {target_index} ({method}): span {}..={} leaks {} characters",
            item.id,
            span.first,
            span.last,
            span.leakage
        );
    }
    let surprisal_nats = word_surprisal(scoring, &span, correction)?;
    Ok(SurprisalRecord {
        item_id: item.id.clone(),
        target_index,
        surface: item.targets[target_index].surface.clone(),
        method,
        model: model.to_owned(),
        correction,
        surprisal_nats,
        span_first: span.first,
        span_last: span.last,
        leakage: span.leakage,
    })
}

/// Direct-surprisal records for every target of `item`, from one scoring of the bare sentence.
pub fn direct_records_from_scoring(
    item: &SentenceItem,
    scoring: &TokenScoring,
    model: &str,
    correction: Correction,
) -> Result<Vec<SurprisalRecord>, ScoringError> {
    (0..item.targets.len())
        .map(|idx| {
            record_for(
                item,
                idx,
                Method::Direct,
                model,
                scoring,
                item.targets[idx].char_range(),
                correction,
            )
        })
        .collect()
}

/// Score the sentence once and return one direct record per target.
pub fn direct_surprisals(
    item: &SentenceItem,
    backend: &dyn ScoringBackend,
    correction: Correction,
) -> Result<Vec<SurprisalRecord>, ScoringError> {
    let scoring = backend.score_text(&item.sentence).map_err(|source| ScoringError::Backend {
        item_id: item.id.clone(),
        source,
    })?;
    direct_records_from_scoring(item, &scoring, &backend.descriptor().model_id, correction)
}

pub fn direct_surprisal(
    item: &SentenceItem,
    target_index: usize,
    backend: &dyn ScoringBackend,
    correction: Correction,
) -> Result<SurprisalRecord, ScoringError> {
    let range = target_of(item, target_index)?.char_range();
    let scoring = backend.score_text(&item.sentence).map_err(|source| ScoringError::Backend {
        item_id: item.id.clone(),
        source,
    })?;
    record_for(
        item,
        target_index,
        Method::Direct,
        &backend.descriptor().model_id,
        &scoring,
        range,
        correction,
    )
}

/// A cloze prompt template with one `{masked}` and one `{completion}` placeholder.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClozeTemplate {
    pub id: String,
    pub text: String,
    pub blank: String,
}

impl Default for ClozeTemplate {
    fn default() -> Self {
        Self {
            id: DEFAULT_TEMPLATE_ID.to_owned(),
            text: DEFAULT_TEMPLATE.to_owned(),
            blank: DEFAULT_BLANK.to_owned(),
        }
    }
}

impl ClozeTemplate {
    pub fn new(id: impl Into<String>, text: impl Into<String>, blank: impl Into<String>) -> Result<Self, ScoringError> {
        let template = Self {
            id: id.into(),
            text: text.into(),
            blank: blank.into(),
        };
        template.validate()?;
        Ok(template)
    }

    pub fn validate(&self) -> Result<(), ScoringError> {
        for placeholder in [MASKED_PLACEHOLDER, COMPLETION_PLACEHOLDER] {
            match self.text.matches(placeholder).count() {
                0 => return Err(ScoringError::Template(format!("{:?} is missing {placeholder}", self.id))),
                1 => {}
                _ => return Err(ScoringError::Template(format!("{:?} repeats {placeholder}", self.id))),
            }
        }
        Ok(())
    }
}

/// A rendered cloze prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClozeRendering {
    pub prompt: String,
    /// Character offset where the verbatim sentence copy begins.
    pub completion_start: usize,
    pub completion_target_range: CharRange,
    pub template_id: String,
}

/// Mask the addressed target in the first copy of the sentence and append the intact sentence.
pub fn render_cloze(
    item: &SentenceItem,
    target_index: usize,
    template: &ClozeTemplate,
) -> Result<ClozeRendering, ScoringError> {
    template.validate()?;
    let target = target_of(item, target_index)?;
    let range = target.char_range();
    let before = char_slice(&item.sentence, CharRange::new(0, range.start)).expect("validated offsets");
    let after = char_slice(&item.sentence, CharRange::new(range.end, char_len(&item.sentence))).expect("validated offsets");
    let masked = format!("{before}{}{after}", template.blank);

    let m = template.text.find(MASKED_PLACEHOLDER).expect("validated");
    let c = template.text.find(COMPLETION_PLACEHOLDER).expect("validated");
    let mut prompt = String::with_capacity(template.text.len() + masked.len() + item.sentence.len());
    let mut completion_start = 0;
    let mut rest = 0;
    let mut slots = [(m, MASKED_PLACEHOLDER), (c, COMPLETION_PLACEHOLDER)];
    slots.sort();
    for (pos, placeholder) in slots {
        prompt.push_str(&template.text[rest..pos]);
        if placeholder == MASKED_PLACEHOLDER {
            prompt.push_str(&masked);
        } else {
            completion_start = char_len(&prompt);
            prompt.push_str(&item.sentence);
        }
        rest = pos + placeholder.len();
    }
    prompt.push_str(&template.text[rest..]);

    Ok(ClozeRendering {
        prompt,
        completion_start,
        completion_target_range: range.shifted(completion_start),
        template_id: template.id.clone(),
    })
}

pub fn cloze_record_from_scoring(
    item: &SentenceItem,
    target_index: usize,
    rendering: &ClozeRendering,
    scoring: &TokenScoring,
    model: &str,
    correction: Correction,
) -> Result<SurprisalRecord, ScoringError> {
    target_of(item, target_index)?;
    record_for(
        item,
        target_index,
        Method::Cloze,
        model,
        scoring,
        rendering.completion_target_range,
        correction,
    )
}

/// Surprisal of the target at its position in the completion copy of a cloze prompt.
pub fn cloze_surprisal(
    item: &SentenceItem,
    target_index: usize,
    backend: &dyn ScoringBackend,
    template: &ClozeTemplate,
    correction: Correction,
) -> Result<SurprisalRecord, ScoringError> {
    let rendering = render_cloze(item, target_index, template)?;
    let scoring = backend.score_text(&rendering.prompt).map_err(|source| ScoringError::Backend {
        item_id: item.id.clone(),
        source,
    })?;
    cloze_record_from_scoring(
        item,
        target_index,
        &rendering,
        &scoring,
        &backend.descriptor().model_id,
        correction,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerplexityReport {
    pub split_name: String,
    pub sentence_count: usize,
    pub token_count: usize,
    pub mean_token_surprisal: f64,
    /// `exp` of the token-weighted mean surprisal.
    pub perplexity: f64,
    /// `exp` of the mean of per-sentence mean surprisals; for comparison only.
    pub sentence_weighted_perplexity: f64,
}

/// Token-weighted perplexity over scorings; special tokens are excluded.
pub fn perplexity_from_scorings<'a>(
    split_name: &str,
    scorings: impl IntoIterator<Item = &'a TokenScoring>,
) -> Result<PerplexityReport, ScoringError> {
    let mut surprisals = Vec::new();
    let mut sentence_means = Vec::new();
    let mut sentence_count = 0;
    for scoring in scorings {
        sentence_count += 1;
        let start = surprisals.len();
        surprisals.extend(scoring.content_tokens().map(|t| -t.logprob));
        sentence_means.extend(numeric::mean(&surprisals[start..]));
    }
    let mean = numeric::mean(&surprisals).ok_or(ScoringError::EmptyCorpus)?;
    let sentence_mean = numeric::mean(&sentence_means).ok_or(ScoringError::EmptyCorpus)?;
    Ok(PerplexityReport {
        split_name: split_name.to_owned(),
        sentence_count,
        token_count: surprisals.len(),
        mean_token_surprisal: mean,
        perplexity: mean.exp(),
        sentence_weighted_perplexity: sentence_mean.exp(),
    })
}

/// Score each sentence independently and pool all token surprisals.
pub fn corpus_perplexity(
    split_name: &str,
    items: &[&SentenceItem],
    backend: &dyn ScoringBackend,
) -> Result<PerplexityReport, ScoringError> {
    if items.is_empty() {
        return Err(ScoringError::EmptyCorpus);
    }
    let texts: Vec<String> = items.iter().map(|i| i.sentence.clone()).collect();
    let scorings = backend
        .batch_score(&texts)
        .into_iter()
        .zip(items)
        .map(|(r, item)| {
            r.map_err(|source| ScoringError::Backend {
                item_id: item.id.clone(),
                source,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    perplexity_from_scorings(split_name, &scorings)
}

/// A target (or a whole item, when `target_index` is `None`) that could not be scored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreFailure {
    pub item_id: String,
    pub target_index: Option<usize>,
    pub method: Method,
    pub error: String,
}

/// What [`score_items`] should compute.
#[derive(Debug, Clone)]
pub struct ScorePlan<'a> {
    pub methods: &'a [Method],
    pub corrections: &'a [Correction],
    pub template: &'a ClozeTemplate,
}

enum Request {
    Direct(usize),
    Cloze(usize, usize, ClozeRendering),
}

/// Score every (target, method, correction) of `items` not rejected by `skip`.
///
/// All texts go through one [`ScoringBackend::batch_score`] call, so backends
/// that parallelize do so across items. Output records are in input order.
pub fn score_items(
    items: &[&SentenceItem],
    backend: &dyn ScoringBackend,
    plan: &ScorePlan,
    skip: &dyn Fn(&RecordKey) -> bool,
) -> (Vec<SurprisalRecord>, Vec<ScoreFailure>) {
    let model = backend.descriptor().model_id.clone();
    let wanted = |item: &SentenceItem, idx: usize, method: Method| {
        plan.corrections
            .iter()
            .filter(|&&c| !skip(&(item.id.clone(), idx, method, model.clone(), c)))
            .copied()
            .collect::<Vec<_>>()
    };

    let mut failures = Vec::new();
    let mut requests = Vec::new();
    let mut texts = Vec::new();
    for (pos, item) in items.iter().enumerate() {
        for &method in plan.methods {
            match method {
                Method::Direct => {
                    if (0..item.targets.len()).any(|idx| !wanted(item, idx, method).is_empty()) {
                        requests.push(Request::Direct(pos));
                        texts.push(item.sentence.clone());
                    }
                }
                Method::Cloze => {
                    for idx in 0..item.targets.len() {
                        if wanted(item, idx, method).is_empty() {
                            continue;
                        }
                        match render_cloze(item, idx, plan.template) {
                            Ok(rendering) => {
                                texts.push(rendering.prompt.clone());
                                requests.push(Request::Cloze(pos, idx, rendering));
                            }
                            Err(e) => failures.push(ScoreFailure {
                                item_id: item.id.clone(),
                                target_index: Some(idx),
                                method,
                                error: e.to_string(),
                            }),
                        }
                    }
                }
            }
        }
    }

    let mut records = Vec::new();
    for (request, result) in requests.iter().zip(backend.batch_score(&texts)) {
        let (pos, target, method) = match request {
            Request::Direct(pos) => (*pos, None, Method::Direct),
            Request::Cloze(pos, idx, _) => (*pos, Some(*idx), Method::Cloze),
        };
        let item = items[pos];
        let scoring = match result {
            Ok(s) => s,
            Err(e) => {
                failures.push(ScoreFailure {
                    item_id: item.id.clone(),
                    target_index: target,
                    method,
                    error: e.to_string(),
                });
                continue;
            }
        };
        let indices: Vec<usize> = target.map_or_else(|| (0..item.targets.len()).collect(), |idx| vec![idx]);
        for idx in indices {
            for correction in wanted(item, idx, method) {
                let range = match request {
                    Request::Direct(_) => item.targets[idx].char_range(),
                    Request::Cloze(_, _, rendering) => rendering.completion_target_range,
                };
                match record_for(item, idx, method, &model, &scoring, range, correction) {
                    Ok(rec) => records.push(rec),
                    Err(e) => failures.push(ScoreFailure {
                        item_id: item.id.clone(),
                        target_index: Some(idx),
                        method,
                        error: e.to_string(),
                    }),
                }
            }
        }
    }
    (records, failures)
}

/// Sort by item id, target, method, model and correction.
pub fn sort_records(records: &mut [SurprisalRecord]) {
    records.sort_by_key(SurprisalRecord::key);
}

fn tsv_writer<W: io::Write>(out: W, header: bool) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .delimiter(b'\t')
        .has_headers(header)
        .from_writer(out)
}

/// Write records as TSV, with a header row when `header` is set.
pub fn write_records_tsv<W: io::Write>(out: W, records: &[SurprisalRecord], header: bool) -> Result<(), ScoringError> {
    let mut writer = tsv_writer(out, header);
    if header && records.is_empty() {
        writer.write_record(RECORD_COLUMNS)?;
    }
    for record in records {
        writer.serialize(record)?;
    }
    writer.flush()?;
    Ok(())
}

pub const RECORD_COLUMNS: [&str; 10] = [
    "item_id",
    "target_index",
    "surface",
    "method",
    "model",
    "correction",
    "surprisal_nats",
    "span_first",
    "span_last",
    "leakage",
];

pub fn records_to_tsv(records: &[SurprisalRecord]) -> String {
    let mut buf = Vec::new();
    write_records_tsv(&mut buf, records, true).expect("writing to memory");
    String::from_utf8(buf).expect("csv writes utf-8")
}

pub fn parse_records_tsv(text: &str) -> Result<Vec<SurprisalRecord>, ScoringError> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .has_headers(true)
        .from_reader(text.as_bytes());
    let records = reader.deserialize().collect::<Result<Vec<SurprisalRecord>, _>>()?;
    Ok(records)
}

pub fn read_records_tsv(path: &Path) -> Result<Vec<SurprisalRecord>, ScoringError> {
    parse_records_tsv(&std::fs::read_to_string(path)?)
}
