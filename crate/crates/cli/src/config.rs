use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use surpnov_core::backends::{parse_backend_spec, BackendDescriptor, HttpOptions, MockLM};
use surpnov_core::scoring::{ClozeTemplate, Correction, Method, DEFAULT_BLANK};

use crate::args::{BackendArgs, ScoreArgs};

/// Everything a scoring run depends on; serialized into its manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub dataset: PathBuf,
    pub backend: BackendDescriptor,
    pub methods: Vec<Method>,
    pub corrections: Vec<Correction>,
    pub template: ClozeTemplate,
    pub out: PathBuf,
    pub seed: u64,
    pub chunk_size: usize,
    pub max_in_flight: usize,
}

impl RunConfig {
    pub fn from_score_args(args: &ScoreArgs) -> Result<Self> {
        let mut methods: Vec<Method> = args.method.iter().map(|&m| m.into()).collect();
        methods.sort();
        methods.dedup();
        let mut corrections: Vec<Correction> = args.correction.iter().map(|&c| c.into()).collect();
        corrections.sort();
        corrections.dedup();
        if methods.is_empty() {
            bail!("at least one --method is required");
        }
        if args.chunk_size == 0 {
            bail!("--chunk-size must be positive");
        }
        let template = match &args.template_file {
            Some(path) => load_template(path)?,
            None => ClozeTemplate::default(),
        };
        let config = Self {
            dataset: args.dataset.clone(),
            backend: descriptor(&args.backend)?,
            methods,
            corrections,
            template,
            out: args.out.clone(),
            seed: args.seed,
            chunk_size: args.chunk_size,
            max_in_flight: args.backend.max_in_flight,
        };
        Ok(config)
    }

    pub fn needs_boundary_masses(&self) -> bool {
        self.corrections.contains(&Correction::BoundaryCorrected)
    }

    pub fn http_options(&self) -> Result<HttpOptions> {
        http_options(self.max_in_flight, self.needs_boundary_masses())
    }
}

pub fn descriptor(args: &BackendArgs) -> Result<BackendDescriptor> {
    let desc = parse_backend_spec(&args.backend, &args.model, MockLM::default())?;
    Ok(desc.with_bos(args.prepend_bos()))
}

pub fn http_options(max_in_flight: usize, boundary_masses: bool) -> Result<HttpOptions> {
    let mut opts = HttpOptions::from_env()?;
    opts.max_in_flight = max_in_flight;
    opts.boundary_masses = boundary_masses;
    Ok(opts)
}

/// A `.json` file holds a full template object; anything else is the template text.
pub fn load_template(path: &Path) -> Result<ClozeTemplate> {
    let raw = fs::read_to_string(path).with_context(|| format!("reading template {}", path.display()))?;
    let template = if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&raw).with_context(|| format!("parsing template {}", path.display()))?
    } else {
        let id = path.file_stem().map_or("template".into(), |s| s.to_string_lossy().into_owned());
        let text = raw.strip_suffix('\n').unwrap_or(&raw);
        ClozeTemplate::new(id, text, DEFAULT_BLANK)?
    };
    template.validate()?;
    Ok(template)
}

/// Model ids become file-name components; `/` and other separators are replaced.
pub fn file_component(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '.' | '-' | '_') { c } else { '_' })
        .collect()
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating output directory {}", dir.display()))
}

/// Written next to every command's outputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest<C> {
    pub command: String,
    pub tool_version: String,
    pub dataset: String,
    pub config: C,
    pub outputs: Vec<PathBuf>,
    pub summary: serde_json::Value,
}

pub fn write_manifest<C: Serialize>(path: &Path, manifest: &Manifest<C>) -> Result<()> {
    let mut text = serde_json::to_string_pretty(manifest)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing manifest {}", path.display()))
}
