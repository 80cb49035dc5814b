//! Run configuration: an optional TOML file merged with command-line flags.
//! A flag always wins over the file.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use msda::classifier::{LossKind, DEFAULT_C_GRID};
use msda::eval::{CvGrid, EvalOptions, DEFAULT_FOLDS, DEFAULT_LAYER_GRID, DEFAULT_P_GRID};
use msda::mda::DEFAULT_RIDGE;
use serde::Deserialize;

/// Above this many features the first layer must be blockwise; a dense
/// `(d+1)^2` scatter is about 512 MB at 8000.
pub const DENSE_BUDGET: usize = 8000;
pub const DEFAULT_R: usize = 5000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReprChoice {
    Raw,
    Msda,
    Both,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossChoice {
    Sqhinge,
    Logistic,
}

impl From<LossChoice> for LossKind {
    fn from(l: LossChoice) -> Self {
        match l {
            LossChoice::Sqhinge => LossKind::SquaredHinge,
            LossChoice::Logistic => LossKind::Logistic,
        }
    }
}

/// Flags shared by every subcommand. Each field mirrors a key of the config
/// file with `-` replaced by `_`.
#[derive(Args, Debug, Default, Clone)]
pub struct Flags {
    /// TOML file with any of the settings below.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Input file and its domain id, as `path=id`. Repeatable.
    #[arg(long = "input", value_name = "PATH=ID", global = true)]
    pub inputs: Vec<String>,
    /// Term dictionary (`term<TAB>raw_id` lines) naming raw feature ids.
    #[arg(long, global = true)]
    pub terms: Option<PathBuf>,
    /// Keep only the most frequent terms.
    #[arg(long, global = true)]
    pub max_features: Option<usize>,
    /// Corruption probability.
    #[arg(long, global = true)]
    pub p: Option<f64>,
    /// Number of layers.
    #[arg(long, global = true)]
    pub layers: Option<usize>,
    #[arg(long, global = true)]
    pub ridge: Option<f64>,
    /// Features reconstructed by a blockwise first layer.
    #[arg(long, global = true)]
    pub r: Option<usize>,
    /// Input features per block of a blockwise first layer.
    #[arg(long, global = true)]
    pub block_size: Option<usize>,
    /// Force a blockwise first layer even below the dense budget.
    #[arg(long, global = true)]
    pub blockwise: bool,
    #[arg(long, global = true)]
    pub seed_plan: Option<u64>,
    #[arg(long, global = true)]
    pub seed_folds: Option<u64>,
    #[arg(long, global = true)]
    pub seed_pad: Option<u64>,
    /// Comma-separated classifier C values.
    #[arg(long, value_delimiter = ',', global = true)]
    pub c_grid: Vec<f64>,
    /// Comma-separated corruption probabilities searched by cross-validation.
    #[arg(long, value_delimiter = ',', global = true)]
    pub p_grid: Vec<f64>,
    /// Comma-separated layer counts searched by cross-validation.
    #[arg(long, value_delimiter = ',', global = true)]
    pub layer_grid: Vec<usize>,
    #[arg(long, value_enum, global = true)]
    pub loss: Option<LossChoice>,
    /// Worker threads for parallel sections.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Main output path.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Trained stack model to load.
    #[arg(long, global = true)]
    pub model: Option<PathBuf>,
    /// Vocabulary sidecar to read or write.
    #[arg(long, global = true)]
    pub vocab: Option<PathBuf>,
    /// Write the report table here as well as to stdout.
    #[arg(long, global = true)]
    pub report: Option<PathBuf>,
    /// Source domain id.
    #[arg(long, global = true)]
    pub source: Option<String>,
    /// Target domain id.
    #[arg(long, global = true)]
    pub target: Option<String>,
    #[arg(long, value_enum, global = true)]
    pub representation: Option<ReprChoice>,
    /// Seed of generated data (`synth`).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    #[serde(default)]
    inputs: Vec<String>,
    terms: Option<PathBuf>,
    max_features: Option<usize>,
    p: Option<f64>,
    layers: Option<usize>,
    ridge: Option<f64>,
    r: Option<usize>,
    block_size: Option<usize>,
    #[serde(default)]
    blockwise: bool,
    seed_plan: Option<u64>,
    seed_folds: Option<u64>,
    seed_pad: Option<u64>,
    #[serde(default)]
    c_grid: Vec<f64>,
    #[serde(default)]
    p_grid: Vec<f64>,
    #[serde(default)]
    layer_grid: Vec<usize>,
    loss: Option<LossChoice>,
    threads: Option<usize>,
    out: Option<PathBuf>,
    model: Option<PathBuf>,
    vocab: Option<PathBuf>,
    report: Option<PathBuf>,
    source: Option<String>,
    target: Option<String>,
    representation: Option<ReprChoice>,
    seed: Option<u64>,
}

/// Settings after merging; unset optional values keep their defaults at the
/// point of use.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub inputs: Vec<(PathBuf, String)>,
    pub terms: Option<PathBuf>,
    pub max_features: Option<usize>,
    pub p: Option<f64>,
    pub layers: Option<usize>,
    pub ridge: f64,
    pub r: Option<usize>,
    pub block_size: Option<usize>,
    pub blockwise: bool,
    pub seed_plan: u64,
    pub seed_folds: u64,
    pub seed_pad: u64,
    pub c_grid: Vec<f64>,
    pub grid: CvGrid,
    pub loss: LossKind,
    pub threads: Option<usize>,
    pub out: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub vocab: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub source: Option<String>,
    pub target: Option<String>,
    pub representation: Option<ReprChoice>,
    pub seed: u64,
}

fn parse_input(spec: &str) -> Result<(PathBuf, String)> {
    match spec.rsplit_once('=') {
        Some((path, id)) if !path.is_empty() && !id.is_empty() => {
            Ok((PathBuf::from(path), id.to_owned()))
        }
        _ => bail!("--input expects PATH=ID, got {spec:?}"),
    }
}

fn or_vec<T>(flag: Vec<T>, file: Vec<T>) -> Vec<T> {
    if flag.is_empty() {
        file
    } else {
        flag
    }
}

fn load_file(path: &Path) -> Result<FileConfig> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

impl RunConfig {
    pub fn from_flags(flags: Flags) -> Result<Self> {
        let file = match &flags.config {
            Some(path) => load_file(path)?,
            None => FileConfig::default(),
        };
        let inputs = or_vec(flags.inputs, file.inputs)
            .iter()
            .map(|s| parse_input(s))
            .collect::<Result<Vec<_>>>()?;
        let config = RunConfig {
            inputs,
            terms: flags.terms.or(file.terms),
            max_features: flags.max_features.or(file.max_features),
            p: flags.p.or(file.p),
            layers: flags.layers.or(file.layers),
            ridge: flags.ridge.or(file.ridge).unwrap_or(DEFAULT_RIDGE),
            r: flags.r.or(file.r),
            block_size: flags.block_size.or(file.block_size),
            blockwise: flags.blockwise || file.blockwise,
            seed_plan: flags.seed_plan.or(file.seed_plan).unwrap_or(0),
            seed_folds: flags.seed_folds.or(file.seed_folds).unwrap_or(0),
            seed_pad: flags.seed_pad.or(file.seed_pad).unwrap_or(0),
            c_grid: Some(or_vec(flags.c_grid, file.c_grid))
                .filter(|g| !g.is_empty())
                .unwrap_or_else(|| DEFAULT_C_GRID.to_vec()),
            grid: CvGrid {
                p: Some(or_vec(flags.p_grid, file.p_grid))
                    .filter(|g| !g.is_empty())
                    .unwrap_or_else(|| DEFAULT_P_GRID.to_vec()),
                layers: Some(or_vec(flags.layer_grid, file.layer_grid))
                    .filter(|g| !g.is_empty())
                    .unwrap_or_else(|| DEFAULT_LAYER_GRID.to_vec()),
            },
            loss: flags
                .loss
                .or(file.loss)
                .unwrap_or(LossChoice::Sqhinge)
                .into(),
            threads: flags.threads.or(file.threads),
            out: flags.out.or(file.out),
            model: flags.model.or(file.model),
            vocab: flags.vocab.or(file.vocab),
            report: flags.report.or(file.report),
            source: flags.source.or(file.source),
            target: flags.target.or(file.target),
            representation: flags.representation.or(file.representation),
            seed: flags.seed.or(file.seed).unwrap_or(2012),
        };
        config.validate()?;
        Ok(config)
    }

    fn validate(&self) -> Result<()> {
        let probabilities = self.p.iter().chain(&self.grid.p);
        if let Some(bad) = probabilities
            .into_iter()
            .find(|p| !(0.0..=1.0).contains(*p))
        {
            bail!("corruption probability {bad} is outside [0, 1]");
        }
        if self.layers == Some(0) || self.grid.layers.contains(&0) {
            bail!("layer counts must be at least 1");
        }
        if !(self.ridge >= 0.0 && self.ridge.is_finite()) {
            bail!("ridge must be finite and non-negative");
        }
        if let (Some(r), Some(m)) = (self.r, self.max_features) {
            if r > m {
                bail!("r = {r} exceeds max_features = {m}");
            }
        }
        if self.r == Some(0) || self.block_size == Some(0) {
            bail!("r and block_size must be positive");
        }
        if self.c_grid.iter().any(|&c| !(c > 0.0 && c.is_finite())) {
            bail!("C values must be positive and finite");
        }
        Ok(())
    }

    pub fn eval_options(&self) -> EvalOptions {
        EvalOptions {
            c_grid: self.c_grid.clone(),
            folds: DEFAULT_FOLDS,
            fold_seed: self.seed_folds,
            pad_seed: self.seed_pad,
            loss: self.loss,
            compute_pad: true,
        }
    }

    pub fn require_inputs(&self) -> Result<()> {
        if self.inputs.is_empty() {
            bail!("at least one --input PATH=ID is required");
        }
        Ok(())
    }

    pub fn require_out(&self) -> Result<&Path> {
        self.out.as_deref().context("--out is required")
    }
}
