//! Config-file driven pipeline. One TOML file (plus dotted `--set`
//! overrides) fully determines a run; every artifact lands under
//! `out/<fingerprint>/` where the fingerprint hashes the resolved config
//! with the output root blanked. Re-running any subcommand with the same
//! config and seed rewrites byte-identical files, so runs are cheap to
//! audit and safe to resume.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::{KalmanConfig, KalmanGrid, WaveletConfig, WaveletGrid};
use crate::error::{Result, RydError};
use crate::models::{LinearConfig, ModelConfig, TransformerConfig, UNetConfig};
use crate::synth::{HeterodyneConfig, NoiseSpec, SpectrumSpec};
use crate::training::{OptimizerConfig, TrainConfig};

mod commands;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SignalDomain {
    Time,
    Frequency,
}

/// What the synthesizer produces and how it is corrupted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub domain: SignalDomain,
    pub heterodyne: HeterodyneConfig,
    pub spectrum: SpectrumSpec,
    pub noise: NoiseSpec,
}

impl Default for SynthSection {
    fn default() -> Self {
        Self {
            domain: SignalDomain::Time,
            heterodyne: HeterodyneConfig::default(),
            spectrum: SpectrumSpec::default(),
            noise: NoiseSpec::default(),
        }
    }
}

impl SynthSection {
    /// Points per trace for the active domain.
    pub fn n_points(&self) -> usize {
        match self.domain {
            SignalDomain::Time => self.heterodyne.n_points,
            SignalDomain::Frequency => self.spectrum.n_points(),
        }
    }

    fn validate(&self) -> Result<()> {
        match self.domain {
            SignalDomain::Time => self.heterodyne.validate()?,
            SignalDomain::Frequency => self.spectrum.validate()?,
        }
        self.noise.validate()
    }
}

/// How many noisy copies of the clean trace to draw. `n_shots` is an
/// optional extra pile of independent shots for the averaging reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    pub n_train: usize,
    pub n_test: usize,
    pub n_shots: usize,
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self { n_train: 2000, n_test: 1000, n_shots: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Transformer,
    Unet,
    Linear,
}

/// Architecture choice plus per-architecture hyperparameters. Only the
/// section matching `kind` is used; the others ride along untouched so a
/// single file can flip between models with one override.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub kind: ModelKind,
    pub transformer: TransformerConfig,
    pub unet: UNetConfig,
    pub linear: LinearConfig,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            kind: ModelKind::Transformer,
            transformer: TransformerConfig::default(),
            unet: UNetConfig::default(),
            linear: LinearConfig::default(),
        }
    }
}

impl ModelSection {
    pub fn resolve(&self) -> ModelConfig {
        match self.kind {
            ModelKind::Transformer => ModelConfig::Transformer(self.transformer.clone()),
            ModelKind::Unet => ModelConfig::UNet(self.unet.clone()),
            ModelKind::Linear => ModelConfig::Linear(self.linear.clone()),
        }
    }
}

/// Mirrors [`TrainConfig`] minus the model and seed, which are global.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs_max: usize,
    pub batch_size: usize,
    pub window: usize,
    pub tolerance: f64,
    pub optimizer: OptimizerConfig,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainConfig::new(ModelConfig::Linear(LinearConfig::default()), 0);
        Self {
            epochs_max: d.epochs_max,
            batch_size: d.batch_size,
            window: d.window,
            tolerance: d.tolerance,
            optimizer: d.optimizer,
        }
    }
}

impl TrainSection {
    pub fn to_train_config(&self, model: ModelConfig, seed: u64) -> TrainConfig {
        TrainConfig {
            model,
            epochs_max: self.epochs_max,
            batch_size: self.batch_size,
            window: self.window,
            tolerance: self.tolerance,
            optimizer: self.optimizer.clone(),
            seed,
        }
    }
}

/// Classical-filter settings. With `tune` on, `baseline` and `eval` replace
/// the fixed configs with the grid-search winners and emit the full tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselinesSection {
    pub tune: bool,
    pub kalman: KalmanConfig,
    pub wavelet: WaveletConfig,
    pub kalman_grid: KalmanGrid,
    pub wavelet_grid: WaveletGrid,
}

impl Default for BaselinesSection {
    fn default() -> Self {
        Self {
            tune: true,
            kalman: KalmanConfig::default(),
            wavelet: WaveletConfig::default(),
            kalman_grid: KalmanGrid::default(),
            wavelet_grid: WaveletGrid::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReferenceKind {
    /// The synthesizer's exact clean trace.
    Clean,
    /// Mean of the `n_shots` extra noisy shots.
    Average,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub reference: ReferenceKind,
    /// Training-set sizes for the data-efficiency sweep; empty skips it.
    pub sweep_sizes: Vec<usize>,
    pub bench_runs: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self { reference: ReferenceKind::Clean, sweep_sizes: Vec::new(), bench_runs: 5 }
    }
}

/// The whole resolved run. Unknown keys anywhere are rejected at load time,
/// before any computation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: String,
    pub synth: SynthSection,
    pub dataset: DatasetSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub baselines: BaselinesSection,
    pub eval: EvalSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            out_dir: "out".to_string(),
            synth: SynthSection::default(),
            dataset: DatasetSection::default(),
            model: ModelSection::default(),
            train: TrainSection::default(),
            baselines: BaselinesSection::default(),
            eval: EvalSection::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        if self.dataset.n_train == 0 || self.dataset.n_test == 0 {
            return Err(RydError::Config(format!(
                "dataset needs n_train >= 1 and n_test >= 1, got {} and {}",
                self.dataset.n_train, self.dataset.n_test
            )));
        }
        let model = self.model.resolve();
        model.validate()?;
        let n_points = self.synth.n_points();
        if model.seq_len() != n_points {
            return Err(RydError::Config(format!(
                "model.{}.seq_len is {} but the synthesizer produces {} points per trace",
                self.model_kind_key(),
                model.seq_len(),
                n_points
            )));
        }
        self.train.to_train_config(model, self.seed).validate()?;
        self.baselines.kalman.validate()?;
        self.baselines.wavelet.validate()?;
        if self.eval.bench_runs == 0 {
            return Err(RydError::Config("eval.bench_runs must be at least 1".into()));
        }
        if self.eval.reference == ReferenceKind::Average && self.dataset.n_shots == 0 {
            return Err(RydError::Config(
                "eval.reference = \"average\" needs dataset.n_shots >= 1".into(),
            ));
        }
        if let Some(&top) = self.eval.sweep_sizes.iter().max() {
            if top > self.dataset.n_train {
                return Err(RydError::Config(format!(
                    "eval.sweep_sizes reaches {top} but only {} training pairs are synthesized",
                    self.dataset.n_train
                )));
            }
        }
        Ok(())
    }

    fn model_kind_key(&self) -> &'static str {
        match self.model.kind {
            ModelKind::Transformer => "transformer",
            ModelKind::Unet => "unet",
            ModelKind::Linear => "linear",
        }
    }

    /// The config with `out_dir` blanked: where a run lands is not part of
    /// its identity.
    fn canonical(&self) -> RunConfig {
        let mut canon = self.clone();
        canon.out_dir = String::new();
        canon
    }

    /// First 12 hex chars of the SHA-256 of the canonical config text, so
    /// moving the output root never forks a run.
    pub fn fingerprint(&self) -> Result<String> {
        let text = toml::to_string(&self.canonical())
            .map_err(|e| RydError::Config(format!("cannot canonicalize config: {e}")))?;
        let digest = Sha256::digest(text.as_bytes());
        let mut hex = String::with_capacity(12);
        for b in &digest[..6] {
            hex.push_str(&format!("{b:02x}"));
        }
        Ok(hex)
    }
}

/// Everything the subcommands write, rooted at `out_dir/<fingerprint>`.
pub struct RunPaths {
    pub root: PathBuf,
}

impl RunPaths {
    pub fn new(cfg: &RunConfig) -> Result<Self> {
        Ok(Self { root: Path::new(&cfg.out_dir).join(cfg.fingerprint()?) })
    }

    pub fn ensure_dirs(&self) -> Result<()> {
        for sub in ["traces", "checkpoints", "logs", "reports"] {
            std::fs::create_dir_all(self.root.join(sub))?;
        }
        Ok(())
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.toml")
    }

    pub fn trace(&self, name: &str) -> PathBuf {
        self.root.join("traces").join(name)
    }

    pub fn checkpoint(&self, name: &str) -> PathBuf {
        self.root.join("checkpoints").join(name)
    }

    pub fn log(&self, name: &str) -> PathBuf {
        self.root.join("logs").join(name)
    }

    pub fn report(&self, name: &str) -> PathBuf {
        self.root.join("reports").join(name)
    }
}

#[derive(Serialize)]
struct Manifest {
    fingerprint: String,
    config: RunConfig,
}

/// The manifest pins (config, seed) for the run in canonical form: no
/// timestamps and no out_dir, so repeat runs rewrite it byte-identically
/// wherever they land.
pub fn write_manifest(cfg: &RunConfig, paths: &RunPaths) -> Result<()> {
    let manifest = Manifest { fingerprint: cfg.fingerprint()?, config: cfg.canonical() };
    let text = toml::to_string(&manifest)
        .map_err(|e| RydError::Config(format!("cannot serialize manifest: {e}")))?;
    std::fs::write(paths.manifest(), text)?;
    Ok(())
}

/// Walk a dotted path, creating intermediate tables, and set the leaf. The
/// value is parsed as a TOML literal first (numbers, bools, arrays) and
/// falls back to a bare string, so `--set model.kind=unet` needs no quotes.
fn apply_override(table: &mut toml::Table, key: &str, raw: &str) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(RydError::Config(format!("malformed override key '{key}'")));
    }
    let mut cursor = table;
    for part in &parts[..parts.len() - 1] {
        cursor = cursor
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| {
                RydError::Config(format!("cannot override '{key}': '{part}' is not a table"))
            })?;
    }
    let value = match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap(),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    cursor.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// Load the config file (or start from defaults), apply `--set` overrides,
/// then the `--seed` and `--out` flags, and validate the result.
pub fn load_run_config(
    config_path: Option<&Path>,
    sets: &[String],
    seed: Option<u64>,
    out: Option<&Path>,
) -> Result<RunConfig> {
    let mut table = match config_path {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| {
                RydError::Io(std::io::Error::new(
                    e.kind(),
                    format!("cannot read config {}: {e}", path.display()),
                ))
            })?;
            text.parse::<toml::Table>()
                .map_err(|e| RydError::Config(format!("{}: {e}", path.display())))?
        }
        None => toml::Table::new(),
    };
    for entry in sets {
        let (key, value) = entry.split_once('=').ok_or_else(|| {
            RydError::Config(format!("override '{entry}' is not of the form key=value"))
        })?;
        apply_override(&mut table, key.trim(), value.trim())?;
    }
    let mut cfg = RunConfig::deserialize(toml::Value::Table(table))
        .map_err(|e| RydError::Config(e.to_string()))?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    if let Some(out) = out {
        cfg.out_dir = out.display().to_string();
    }
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Parser)]
#[command(
    name = "rydnoise",
    version,
    about = "Self-supervised denoising pipeline for 1D sensor traces"
)]
struct Cli {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Override the global seed.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Override the output root directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Dotted config override, e.g. --set train.epochs_max=5 (repeatable).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the clean trace and all noisy copies.
    Synth,
    /// Train the configured model on the synthesized pairs.
    Train {
        /// Continue from the saved training state instead of starting over.
        #[arg(long)]
        resume: bool,
        /// Stop after this many total epochs; resume later with --resume.
        #[arg(long, value_name = "N")]
        stop_after: Option<usize>,
    },
    /// Run a trained checkpoint over a trace file.
    Denoise {
        /// Parameter checkpoint; defaults to this run's model.ckpt.
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
        /// Input trace file; defaults to this run's test_x.rtr.
        #[arg(long, value_name = "PATH")]
        input: Option<PathBuf>,
        /// Output trace file; defaults to this run's denoised.rtr.
        #[arg(long, value_name = "PATH")]
        output: Option<PathBuf>,
    },
    /// Score the classical baselines (tuning them first when enabled).
    Baseline,
    /// Produce the full method-comparison report and plot data.
    Eval,
    /// Time single-trace model inference.
    Bench,
}

pub fn main_entry() {
    let cli = Cli::parse();
    if let Err(e) = dispatch(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    let cfg = load_run_config(cli.config.as_deref(), &cli.set, cli.seed, cli.out.as_deref())?;
    let paths = RunPaths::new(&cfg)?;
    match cli.command {
        Command::Synth => commands::cmd_synth(&cfg, &paths),
        Command::Train { resume, stop_after } => {
            commands::cmd_train(&cfg, &paths, resume, stop_after)
        }
        Command::Denoise { checkpoint, input, output } => commands::cmd_denoise(
            &cfg,
            &paths,
            checkpoint.as_deref(),
            input.as_deref(),
            output.as_deref(),
        ),
        Command::Baseline => commands::cmd_baseline(&cfg, &paths),
        Command::Eval => commands::cmd_eval(&cfg, &paths),
        Command::Bench => commands::cmd_bench(&cfg, &paths),
    }
}
