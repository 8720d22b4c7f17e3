//! Word-level surprisal from causal language models, correlated with metaphor novelty.
//!
//! The pipeline runs bottom-up:
//!
//! - [`dataset`] loads and validates annotated sentences.
//! - [`backends`] obtains per-token log-probabilities (precomputed files, an HTTP
//!   scoring service, or a deterministic mock).
//! - [`alignment`] maps character-offset targets to token spans.
//! - [`scoring`] turns spans into direct or cloze surprisal and corpus perplexity.
//! - [`stats`] and [`report`] compute correlations and render tables.

pub mod alignment;
pub mod backends;
pub mod dataset;
pub mod numeric;
pub mod report;
pub mod scoring;
pub mod stats;
pub mod text;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub use alignment::{find_minimal_span, locate_surface, AlignmentError, ScoredToken, TokenScoring, TokenSpan};
pub use backends::{
    open_backend, BackendDescriptor, BackendError, BackendKind, HttpBackend, HttpOptions, MockBackend, MockLM,
    PrecomputedBackend, ScoringBackend,
};
pub use dataset::{
    binarize, load_dataset, synthesize_corpus, AnnotationKind, Dataset, DatasetError, DatasetFormat, Genre,
    NoveltyLabel, SentenceItem, TargetAnnotation,
};
pub use report::{correlate, emit, AnalysisCell, CorrelateOptions, OutputFormat, Report, ReportError, ReportMetadata};
pub use scoring::{
    cloze_surprisal, corpus_perplexity, direct_surprisal, ClozeTemplate, Correction, Method, PerplexityReport,
    ScoringError, SurprisalRecord,
};
pub use stats::{mann_whitney, pearson, spearman, CorrelationReport, GainMode, MannWhitney, StatsError};
pub use text::CharRange;
