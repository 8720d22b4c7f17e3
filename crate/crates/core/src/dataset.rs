//! Metaphor-novelty datasets in the canonical JSONL interchange format.
//!
//! One [`SentenceItem`] per line:
//!
//! ```text
//! {"id": str, "sentence": str, "genre": str|null,
//!  "targets": [{"surface": str, "start": int, "end": int,
//!               "novelty_score": float|null,
//!               "novelty_label": "conventional"|"novel"|null,
//!               "pos": str|null}]}
//! ```
//!
//! `start`/`end` are character (Unicode scalar value) offsets and must select
//! `surface` exactly. Loading validates every item; a [`Dataset`] is immutable
//! once constructed.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::{char_len, char_slice, CharRange};

/// Default score threshold for deriving binary labels from continuous scores.
pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Genre {
    Fiction,
    News,
    Academic,
    Conversation,
    Other,
}

impl Genre {
    pub const ALL: [Genre; 5] = [
        Genre::Fiction,
        Genre::News,
        Genre::Academic,
        Genre::Conversation,
        Genre::Other,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Genre::Fiction => "fiction",
            Genre::News => "news",
            Genre::Academic => "academic",
            Genre::Conversation => "conversation",
            Genre::Other => "other",
        }
    }
}

impl fmt::Display for Genre {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoveltyLabel {
    Conventional,
    Novel,
}

/// Which novelty annotations every target in a dataset carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnnotationKind {
    Continuous,
    Binary,
    Both,
}

impl AnnotationKind {
    pub fn has_scores(&self) -> bool {
        matches!(self, AnnotationKind::Continuous | AnnotationKind::Both)
    }

    pub fn has_labels(&self) -> bool {
        matches!(self, AnnotationKind::Binary | AnnotationKind::Both)
    }
}

/// One annotated target word inside a sentence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetAnnotation {
    pub surface: String,
    pub start: usize,
    pub end: usize,
    pub novelty_score: Option<f64>,
    pub novelty_label: Option<NoveltyLabel>,
    pub pos: Option<String>,
}

impl TargetAnnotation {
    pub fn char_range(&self) -> CharRange {
        CharRange::new(self.start, self.end)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentenceItem {
    pub id: String,
    pub sentence: String,
    pub genre: Option<Genre>,
    pub targets: Vec<TargetAnnotation>,
}

/// Invariant violations within a single item.
#[derive(Debug, Error, PartialEq)]
pub enum ItemError {
    #[error("item {id}: no targets")]
    NoTargets { id: String },
    #[error("item {id}, target {target}: offsets {range} select {found:?}, expected {expected:?}")]
    OffsetMismatch {
        id: String,
        target: usize,
        range: CharRange,
        expected: String,
        /// `None` when the range is out of bounds.
        found: Option<String>,
    },
    #[error("item {id}: targets {first} and {second} overlap")]
    OverlappingTargets { id: String, first: usize, second: usize },
    #[error("item {id}, target {target}: neither novelty_score nor novelty_label present")]
    MissingAnnotation { id: String, target: usize },
    #[error("item {id}, target {target}: novelty_score {score} outside [-1, 1]")]
    ScoreOutOfRange { id: String, target: usize, score: f64 },
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("line {line}: malformed record: {source}")]
    Malformed { line: usize, source: serde_json::Error },
    #[error("line {line}: {source}")]
    InvalidItem { line: usize, source: ItemError },
    #[error("line {line}: duplicate id {id:?} (first seen on line {first_line})")]
    DuplicateId { id: String, line: usize, first_line: usize },
    #[error("dataset {0:?} has no items")]
    Empty(String),
    #[error("dataset {0:?} mixes targets with only scores and targets with only labels")]
    InconsistentAnnotations(String),
    #[error("dataset {0:?} has no continuous novelty scores")]
    NotContinuous(String),
    #[error("item {id}, target {target}: no novelty_score to binarize")]
    MissingScore { id: String, target: usize },
    #[error("synthetic corpus size must be even and positive, got {0}")]
    InvalidCorpusSize(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetFormat {
    Jsonl,
}

/// A validated collection of [`SentenceItem`]s.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    name: String,
    items: Vec<SentenceItem>,
    annotation_kind: AnnotationKind,
}

impl Dataset {
    /// Validate `items` and build a dataset. Line numbers in errors are 1-based item positions.
    pub fn from_items(name: impl Into<String>, items: Vec<SentenceItem>) -> Result<Self, DatasetError> {
        let name = name.into();
        let mut seen: HashMap<&str, usize> = HashMap::new();
        for (idx, item) in items.iter().enumerate() {
            let line = idx + 1;
            validate_item(item).map_err(|source| DatasetError::InvalidItem { line, source })?;
            if let Some(&first_line) = seen.get(item.id.as_str()) {
                return Err(DatasetError::DuplicateId {
                    id: item.id.clone(),
                    line,
                    first_line,
                });
            }
            seen.insert(&item.id, line);
        }
        let annotation_kind = infer_kind(&name, &items)?;
        Ok(Self {
            name,
            items,
            annotation_kind,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn items(&self) -> &[SentenceItem] {
        &self.items
    }

    pub fn annotation_kind(&self) -> AnnotationKind {
        self.annotation_kind
    }

    pub fn target_count(&self) -> usize {
        self.items.iter().map(|i| i.targets.len()).sum()
    }

    pub fn item(&self, id: &str) -> Option<&SentenceItem> {
        self.items.iter().find(|i| i.id == id)
    }

    /// Index from item id to item, for joins against scoring records.
    pub fn index(&self) -> HashMap<&str, &SentenceItem> {
        self.items.iter().map(|i| (i.id.as_str(), i)).collect()
    }

    /// Iterate `(item, target_index, target)` over every target.
    pub fn targets(&self) -> impl Iterator<Item = (&SentenceItem, usize, &TargetAnnotation)> {
        self.items
            .iter()
            .flat_map(|item| item.targets.iter().enumerate().map(move |(i, t)| (item, i, t)))
    }

    /// Items whose genre equals `genre`.
    pub fn split(&self, genre: Genre) -> Vec<&SentenceItem> {
        self.items.iter().filter(|i| i.genre == Some(genre)).collect()
    }

    /// Canonical JSONL: one item per line, every optional field written (as `null` when absent).
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for item in &self.items {
            out.push_str(&serde_json::to_string(item).expect("items always serialize"));
            out.push('\n');
        }
        out
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<(), DatasetError> {
        let io_err = |source| DatasetError::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut file = fs::File::create(path).map_err(io_err)?;
        file.write_all(self.to_jsonl().as_bytes()).map_err(io_err)
    }
}

fn validate_item(item: &SentenceItem) -> Result<(), ItemError> {
    if item.targets.is_empty() {
        return Err(ItemError::NoTargets { id: item.id.clone() });
    }
    for (idx, target) in item.targets.iter().enumerate() {
        let range = target.char_range();
        let found = if range.is_empty() {
            Some(String::new())
        } else {
            char_slice(&item.sentence, range).map(str::to_owned)
        };
        if found.as_deref() != Some(target.surface.as_str()) || target.surface.is_empty() {
            return Err(ItemError::OffsetMismatch {
                id: item.id.clone(),
                target: idx,
                range,
                expected: target.surface.clone(),
                found,
            });
        }
        if target.novelty_score.is_none() && target.novelty_label.is_none() {
            return Err(ItemError::MissingAnnotation {
                id: item.id.clone(),
                target: idx,
            });
        }
        if let Some(score) = target.novelty_score {
            if !score.is_finite() || !(-1.0..=1.0).contains(&score) {
                return Err(ItemError::ScoreOutOfRange {
                    id: item.id.clone(),
                    target: idx,
                    score,
                });
            }
        }
    }
    let mut order: Vec<usize> = (0..item.targets.len()).collect();
    order.sort_by_key(|&i| (item.targets[i].start, item.targets[i].end));
    for pair in order.windows(2) {
        let (a, b) = (&item.targets[pair[0]], &item.targets[pair[1]]);
        if a.char_range().intersects(&b.char_range()) {
            return Err(ItemError::OverlappingTargets {
                id: item.id.clone(),
                first: pair[0].min(pair[1]),
                second: pair[0].max(pair[1]),
            });
        }
    }
    Ok(())
}

fn infer_kind(name: &str, items: &[SentenceItem]) -> Result<AnnotationKind, DatasetError> {
    if items.is_empty() {
        return Err(DatasetError::Empty(name.to_owned()));
    }
    let targets = || items.iter().flat_map(|i| i.targets.iter());
    let all_scores = targets().all(|t| t.novelty_score.is_some());
    let all_labels = targets().all(|t| t.novelty_label.is_some());
    match (all_scores, all_labels) {
        (true, true) => Ok(AnnotationKind::Both),
        (true, false) => Ok(AnnotationKind::Continuous),
        (false, true) => Ok(AnnotationKind::Binary),
        (false, false) => Err(DatasetError::InconsistentAnnotations(name.to_owned())),
    }
}

/// Parse JSONL text. Blank lines are skipped but still counted for line numbers.
pub fn parse_jsonl(name: impl Into<String>, text: &str) -> Result<Dataset, DatasetError> {
    let name = name.into();
    let mut items = Vec::new();
    let mut lines = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let item: SentenceItem =
            serde_json::from_str(raw).map_err(|source| DatasetError::Malformed { line, source })?;
        items.push(item);
        lines.push(line);
    }
    // Re-map positional errors onto physical line numbers.
    Dataset::from_items(name, items).map_err(|err| match err {
        DatasetError::InvalidItem { line, source } => DatasetError::InvalidItem {
            line: lines[line - 1],
            source,
        },
        DatasetError::DuplicateId { id, line, first_line } => DatasetError::DuplicateId {
            id,
            line: lines[line - 1],
            first_line: lines[first_line - 1],
        },
        other => other,
    })
}

/// Load a dataset file. The dataset is named after the file stem.
pub fn load_dataset(path: &Path, format: DatasetFormat) -> Result<Dataset, DatasetError> {
    let text = fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".to_owned());
    match format {
        DatasetFormat::Jsonl => parse_jsonl(name, &text),
    }
}

/// Label every target `novel` iff its score is `>= threshold`. Scores are kept.
pub fn binarize(ds: &Dataset, threshold: f64) -> Result<Dataset, DatasetError> {
    if !ds.annotation_kind.has_scores() {
        return Err(DatasetError::NotContinuous(ds.name.clone()));
    }
    let mut items = ds.items.clone();
    for item in &mut items {
        for (idx, target) in item.targets.iter_mut().enumerate() {
            let score = target.novelty_score.ok_or_else(|| DatasetError::MissingScore {
                id: item.id.clone(),
                target: idx,
            })?;
            target.novelty_label = Some(if score >= threshold {
                NoveltyLabel::Novel
            } else {
                NoveltyLabel::Conventional
            });
        }
    }
    Ok(Dataset {
        name: ds.name.clone(),
        items,
        annotation_kind: AnnotationKind::Both,
    })
}

const DETERMINERS: &[&str] = &["The", "That", "This", "Her", "His", "Our", "Their", "Every"];
const ADJECTIVES: &[&str] = &["quiet", "old", "young", "restless", "careful", "distant", "tired", "proud"];
const SUBJECTS: &[&str] = &["writer", "team", "city", "mind", "market", "teacher", "garden", "voice"];
const ADVERBS: &[&str] = &["slowly", "suddenly", "barely", "softly", "gladly", "rarely"];
const VERBS: &[&str] = &["became", "resembled", "remained", "faced", "met", "found", "held"];

// Conventional targets are short on average, novel targets long: under a
// length-sensitive model the two classes overlap but separate partially.
const CONVENTIONAL_TARGETS: &[&str] = &[
    "battle", "sank", "fragile", "anchor", "bloom", "drift", "fog", "spark", "path", "storm",
    "root", "wave", "bridge", "mirror", "engine", "harvest",
];
const NOVEL_TARGETS: &[&str] = &[
    "navigate", "crystallize", "unravel", "orbit", "thunderstorm", "labyrinth", "constellation",
    "fermentation", "kaleidoscope", "avalanche", "echo", "tapestry", "scaffolding",
    "metamorphosis", "quicksand", "lighthouse",
];
const SYNTHETIC_GENRES: [Genre; 4] = [Genre::Fiction, Genre::News, Genre::Academic, Genre::Conversation];

/// Deterministic paired corpus: `n_items / 2` conventional/novel pairs, target as last word.
///
/// Novel sentences carry one extra frame word and draw their target from a
/// lexicon of longer words, so any length-sensitive scorer sees a confound.
/// Every item also gets a continuous score on the matching side of 0.5.
pub fn synthesize_corpus(seed: u64, n_items: usize) -> Result<Dataset, DatasetError> {
    if n_items == 0 || !n_items.is_multiple_of(2) {
        return Err(DatasetError::InvalidCorpusSize(n_items));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pick = |rng: &mut ChaCha8Rng, words: &[&'static str]| *words.choose(rng).expect("nonempty lexicon");
    let mut items = Vec::with_capacity(n_items);
    for pair in 0..n_items / 2 {
        let genre = SYNTHETIC_GENRES[rng.random_range(0..SYNTHETIC_GENRES.len())];
        let det = pick(&mut rng, DETERMINERS);
        let adj = pick(&mut rng, ADJECTIVES);
        let subject = pick(&mut rng, SUBJECTS);
        let verb = pick(&mut rng, VERBS);

        let conventional_target = pick(&mut rng, CONVENTIONAL_TARGETS);
        let conventional = format!("{det} {adj} {subject} {verb} {conventional_target}");
        let conventional_score = round3(rng.random_range(-0.9..0.45));

        let adverb = pick(&mut rng, ADVERBS);
        let novel_target = pick(&mut rng, NOVEL_TARGETS);
        let novel = format!("{det} {adj} {subject} {adverb} {verb} {novel_target}");
        let novel_score = round3(rng.random_range(0.5..0.95));

        for (suffix, sentence, target, score, label) in [
            ("c", conventional, conventional_target, conventional_score, NoveltyLabel::Conventional),
            ("n", novel, novel_target, novel_score, NoveltyLabel::Novel),
        ] {
            let end = char_len(&sentence);
            let start = end - char_len(target);
            items.push(SentenceItem {
                id: format!("syn{seed}-{pair:04}-{suffix}"),
                sentence,
                genre: Some(genre),
                targets: vec![TargetAnnotation {
                    surface: target.to_owned(),
                    start,
                    end,
                    novelty_score: Some(score),
                    novelty_label: Some(label),
                    pos: None,
                }],
            });
        }
    }
    Dataset::from_items(format!("synthetic-seed{seed}"), items)
}

fn round3(x: f64) -> f64 {
    (x * 1000.0).round() / 1000.0
}
