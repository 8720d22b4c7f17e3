use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use surpnov_core::dataset::DEFAULT_THRESHOLD;
use surpnov_core::scoring::{Correction, Method};
use surpnov_core::stats::GainMode;

#[derive(Debug, Parser)]
#[command(name = "surpnov", version, about = "Word surprisal from causal LMs vs. metaphor novelty")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Score targets and append surprisal records (resumable).
    Score(ScoreArgs),
    /// Correlate records with annotations and write report tables.
    Correlate(CorrelateArgs),
    /// Corpus perplexity, overall and per genre.
    Perplexity(PerplexityArgs),
    /// Write a deterministic synthetic dataset.
    Synthesize(SynthesizeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Direct,
    Cloze,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Direct => Method::Direct,
            MethodArg::Cloze => Method::Cloze,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CorrectionArg {
    Raw,
    #[value(name = "boundary_corrected", alias = "boundary")]
    BoundaryCorrected,
}

impl From<CorrectionArg> for Correction {
    fn from(c: CorrectionArg) -> Self {
        match c {
            CorrectionArg::Raw => Correction::Raw,
            CorrectionArg::BoundaryCorrected => Correction::BoundaryCorrected,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GainModeArg {
    Relative,
    #[value(name = "absolute_points")]
    AbsolutePoints,
}

impl From<GainModeArg> for GainMode {
    fn from(g: GainModeArg) -> Self {
        match g {
            GainModeArg::Relative => GainMode::Relative,
            GainModeArg::AbsolutePoints => GainMode::AbsolutePoints,
        }
    }
}

/// Backend selection shared by `score` and `perplexity`.
#[derive(Debug, Clone, Args)]
pub struct BackendArgs {
    /// mock | precomputed:PATH | http:URL
    #[arg(long, default_value = "mock")]
    pub backend: String,
    /// Model id sent to the backend and recorded in outputs.
    #[arg(long, default_value = "mock")]
    pub model: String,
    /// Prepend a beginning-of-sequence token (default).
    #[arg(long, overrides_with = "no_bos")]
    pub bos: bool,
    /// Score without a beginning-of-sequence token.
    #[arg(long = "no-bos", overrides_with = "bos")]
    pub no_bos: bool,
    /// Concurrent requests to an http backend.
    #[arg(long, default_value_t = surpnov_core::backends::DEFAULT_MAX_IN_FLIGHT)]
    pub max_in_flight: usize,
}

impl BackendArgs {
    pub fn prepend_bos(&self) -> bool {
        !self.no_bos
    }
}

#[derive(Debug, Clone, Args)]
pub struct ScoreArgs {
    /// Dataset JSONL; its file stem names the outputs.
    #[arg(long)]
    pub dataset: PathBuf,
    #[command(flatten)]
    pub backend: BackendArgs,
    /// Methods to score; repeat or comma-separate.
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [MethodArg::Direct, MethodArg::Cloze])]
    pub method: Vec<MethodArg>,
    /// Surprisal corrections; boundary_corrected needs boundary masses from the backend.
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [CorrectionArg::Raw])]
    pub correction: Vec<CorrectionArg>,
    /// Cloze template: a JSON template object, or a text file with {masked} and {completion}.
    #[arg(long)]
    pub template_file: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Items per batch; records are flushed after each batch.
    #[arg(long, default_value_t = 64)]
    pub chunk_size: usize,
    /// Recorded in the manifest.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct CorrelateArgs {
    /// Dataset JSONL the records were scored from.
    #[arg(long)]
    pub dataset: PathBuf,
    /// Records files; defaults to every {dataset}.*.records.tsv in --out.
    #[arg(long)]
    pub records: Vec<PathBuf>,
    /// Novelty threshold used to binarize continuous scores.
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    pub threshold: f64,
    /// Add per-genre cells.
    #[arg(long)]
    pub genre: bool,
    /// Perplexity reports to attach (output of `perplexity`).
    #[arg(long)]
    pub perplexity: Vec<PathBuf>,
    /// Base/variant model pair for gain tables, as BASE=VARIANT.
    #[arg(long = "pair")]
    pub pairs: Vec<String>,
    /// How gains are expressed: r_b difference x 100, or percent of the base.
    #[arg(long, value_enum, default_value_t = GainModeArg::AbsolutePoints)]
    pub gain_mode: GainModeArg,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct PerplexityArgs {
    /// Dataset JSONL; every sentence is scored once.
    #[arg(long)]
    pub dataset: PathBuf,
    #[command(flatten)]
    pub backend: BackendArgs,
    /// Also report each genre split.
    #[arg(long)]
    pub genre: bool,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct SynthesizeArgs {
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Number of items; must be even (half novel, half conventional).
    #[arg(long, default_value_t = 208)]
    pub n: usize,
    /// Output JSONL path.
    #[arg(long)]
    pub out: PathBuf,
}
