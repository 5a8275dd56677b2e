use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use convbss::{Mode, Nonlinearity, SeparationConfig, SimulationSpec};
use serde::{Deserialize, Serialize};

use crate::io::Format;

/// Everything a run needs; loaded from TOML and then overridden by flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub separation: SeparationConfig,
    pub simulation: SimulationSpec,
    /// Sources to extract; defaults to the number of observation channels.
    pub sources: Option<usize>,
    /// Observation channels to use, by index after stacking the inputs.
    pub channels: Option<Vec<usize>>,
    pub inputs: Vec<PathBuf>,
    pub out: Option<PathBuf>,
    pub format: Format,
    /// Warn when more sources than channels are requested.
    pub guard_underdetermined: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            separation: SeparationConfig::default(),
            simulation: SimulationSpec::default(),
            sources: None,
            channels: None,
            inputs: Vec::new(),
            out: None,
            format: Format::default(),
            guard_underdetermined: true,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("."))
    }
}

#[derive(Debug, Parser)]
#[command(name = "convbss", version, about = "Blind separation of convolutive mixtures")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate innovations, colored sources, random mixing filters and observations.
    Simulate(SimulateArgs),
    /// Separate observations into source estimates.
    Separate(SeparateArgs),
    /// Regress each observation onto shifts of each extracted source.
    Reconstruct(ReconstructArgs),
    /// Score outputs against known sources.
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// TOML run configuration; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct SeparationArgs {
    #[arg(long)]
    pub mode: Option<Mode>,
    /// Demixing filter order Q.
    #[arg(long)]
    pub embed_order: Option<usize>,
    /// Lag half-width L (default 2Q).
    #[arg(long)]
    pub lag_window: Option<usize>,
    /// Effective-rank threshold on the cumulative singular-value ratio.
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    #[arg(long)]
    pub nonlinearity: Option<Nonlinearity>,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Samples per channel.
    #[arg(long)]
    pub len: Option<usize>,
    /// Observation channels.
    #[arg(long)]
    pub channels: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct SeparateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub separation: SeparationArgs,
    /// Observation files; their channels are stacked in order.
    #[arg(long = "input", num_args = 1..)]
    pub inputs: Vec<PathBuf>,
    /// Number of sources to extract.
    #[arg(long)]
    pub sources: Option<usize>,
    /// Observation channels to keep, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub channels: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Args)]
pub struct ReconstructArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub separation: SeparationArgs,
    /// Extracted signals written by `separate`.
    #[arg(long)]
    pub outputs: PathBuf,
    /// Observation files, full length or already aligned to the outputs.
    #[arg(long = "observations", num_args = 1..)]
    pub observations: Vec<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub separation: SeparationArgs,
    #[arg(long)]
    pub outputs: PathBuf,
    /// Reference signals, full length or already aligned to the outputs.
    #[arg(long)]
    pub truths: PathBuf,
    /// Largest lag searched when matching (default: the lag window).
    #[arg(long)]
    pub max_lag: Option<usize>,
}

fn base(common: &CommonArgs) -> Result<RunConfig> {
    let mut config = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(out) = &common.out {
        config.out = Some(out.clone());
    }
    if let Some(format) = common.format {
        config.format = format;
    }
    if let Some(seed) = common.seed {
        config.separation.seed = seed;
        config.simulation.seed = seed;
    }
    Ok(config)
}

fn apply_separation(config: &mut RunConfig, args: &SeparationArgs) {
    let s = &mut config.separation;
    if let Some(v) = args.mode {
        s.mode = v;
    }
    if let Some(v) = args.embed_order {
        s.embed_order = v;
    }
    if args.lag_window.is_some() {
        s.lag_window = args.lag_window;
    }
    if let Some(v) = args.alpha {
        s.rank_threshold = v;
    }
    if let Some(v) = args.tol {
        s.tol = v;
    }
    if let Some(v) = args.max_iter {
        s.max_iter = v;
    }
    if let Some(v) = args.nonlinearity {
        s.nonlinearity = v;
    }
}

impl SimulateArgs {
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut config = base(&self.common)?;
        if let Some(len) = self.len {
            config.simulation.len = len;
        }
        if let Some(channels) = self.channels {
            config.simulation.channels = channels;
        }
        Ok(config)
    }
}

impl SeparateArgs {
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut config = base(&self.common)?;
        apply_separation(&mut config, &self.separation);
        if !self.inputs.is_empty() {
            config.inputs = self.inputs.clone();
        }
        if self.sources.is_some() {
            config.sources = self.sources;
        }
        if self.channels.is_some() {
            config.channels = self.channels.clone();
        }
        Ok(config)
    }
}

impl ReconstructArgs {
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut config = base(&self.common)?;
        apply_separation(&mut config, &self.separation);
        Ok(config)
    }
}

impl EvaluateArgs {
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut config = base(&self.common)?;
        apply_separation(&mut config, &self.separation);
        Ok(config)
    }
}
