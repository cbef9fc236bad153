//! `afe`: corpus synthesis, feature extraction, training, editing, scoring
//! and evaluation from the command line.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use afe_core::adaptive::OracleKind;
use afe_core::config::RunConfig;
use afe_core::flow::Scheme;
use afe_core::Error;
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "afe", version, about = "Video-guided audio editing with hierarchical loudness conditioning")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML run configuration; missing keys take their defaults.
    #[arg(long, global = true, env = "AFE_CONFIG")]
    pub config: Option<PathBuf>,
    /// Root seed; overrides the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: available cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
}

/// Sampler and guidance overrides shared by `edit` and `eval`.
#[derive(Debug, Args)]
pub struct SamplingArgs {
    /// Number of ODE integration steps.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Weight of the target-condition guidance term.
    #[arg(long)]
    pub w1: Option<f64>,
    /// Weight of the acoustic-feature guidance term.
    #[arg(long)]
    pub w2: Option<f64>,
    /// Integration scheme.
    #[arg(long, value_enum)]
    pub scheme: Option<SchemeArg>,
}

/// Editability oracle selection shared by `edit` and `score`.
#[derive(Debug, Args)]
pub struct OracleArgs {
    /// Embedding oracle for the editability score.
    #[arg(long, value_enum)]
    pub oracle: Option<OracleArg>,
    /// Precomputed `{audio, visual}` window embeddings, required by `--oracle external`.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SchemeArg {
    Euler,
    Midpoint,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum OracleArg {
    Fingerprint,
    External,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum DumpFormat {
    Json,
    Bin,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render the synthetic scene corpus and its manifest.
    Synth {
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Number of scenes; overrides `corpus.n`.
        #[arg(long)]
        n: Option<usize>,
    },
    /// Dump the loudness hierarchy of a WAV file.
    Features {
        /// Input WAV; resampled to 16 kHz if needed.
        #[arg(long)]
        input: PathBuf,
        /// Dump path; provenance goes to the same path with `.json` appended.
        #[arg(long)]
        out: PathBuf,
        /// Dump encoding.
        #[arg(long, value_enum, default_value = "json")]
        format: DumpFormat,
        /// Deepest exposed level (default: all levels).
        #[arg(long)]
        level: Option<usize>,
    },
    /// Train the velocity model on the training split of a corpus.
    Train {
        /// Corpus manifest written by `synth`.
        #[arg(long)]
        manifest: PathBuf,
        /// Checkpoint path.
        #[arg(long)]
        out: PathBuf,
        /// Optimizer steps; overrides `train.total_steps`.
        #[arg(long)]
        total_steps: Option<usize>,
    },
    /// Edit a source clip toward a target control track and class.
    Edit {
        /// Checkpoint written by `train`.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Source WAV.
        #[arg(long)]
        source: PathBuf,
        /// Target control-track JSON.
        #[arg(long)]
        control: PathBuf,
        /// Target class id.
        #[arg(long)]
        class: usize,
        /// Edited WAV; the sidecar goes to the same path with `.json` appended.
        #[arg(long)]
        out: PathBuf,
        /// Use this level of detail instead of choosing it from the editability score.
        #[arg(long, conflicts_with = "full_mask")]
        level: Option<usize>,
        /// Mask every acoustic feature (plain generation from the target).
        #[arg(long)]
        full_mask: bool,
        #[command(flatten)]
        sampling: SamplingArgs,
        #[command(flatten)]
        oracle: OracleArgs,
    },
    /// Print the editability score and chosen level as JSON.
    Score {
        /// Source WAV (not needed with `--oracle external`).
        #[arg(long)]
        source: Option<PathBuf>,
        /// Target control-track JSON (not needed with `--oracle external`).
        #[arg(long)]
        control: Option<PathBuf>,
        #[command(flatten)]
        oracle: OracleArgs,
    },
    /// Run the level-of-detail sweep over a generated edit set.
    Eval {
        /// Checkpoint written by `train`.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Report JSON.
        #[arg(long)]
        out: PathBuf,
        /// Also write the tradeoff table as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Number of edits; overrides `eval.n_edits`.
        #[arg(long)]
        n_edits: Option<usize>,
        #[command(flatten)]
        sampling: SamplingArgs,
    },
}

impl SamplingArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        if let Some(s) = self.steps {
            cfg.sampler.n_steps = s;
        }
        if let Some(w) = self.w1 {
            cfg.guidance.w1 = w;
        }
        if let Some(w) = self.w2 {
            cfg.guidance.w2 = w;
        }
        if let Some(s) = self.scheme {
            cfg.sampler.scheme = match s {
                SchemeArg::Euler => Scheme::Euler,
                SchemeArg::Midpoint => Scheme::Midpoint,
            };
        }
    }
}

impl OracleArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        if let Some(o) = self.oracle {
            cfg.adaptive.oracle = match o {
                OracleArg::Fingerprint => OracleKind::Fingerprint,
                OracleArg::External => OracleKind::External,
            };
        }
    }
}

/// Config file, then flag overrides, then validation.
fn resolve_config(cli: &Cli) -> afe_core::Result<RunConfig> {
    let mut cfg = match &cli.global.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.global.seed {
        cfg.seed = seed;
    }
    match &cli.command {
        Command::Synth { n: Some(n), .. } => cfg.corpus.n = *n,
        Command::Train {
            total_steps: Some(s), ..
        } => cfg.train.total_steps = *s,
        Command::Edit { sampling, oracle, .. } => {
            sampling.apply(&mut cfg);
            oracle.apply(&mut cfg);
        }
        Command::Score { oracle, .. } => oracle.apply(&mut cfg),
        Command::Eval {
            sampling, n_edits, ..
        } => {
            sampling.apply(&mut cfg);
            if let Some(n) = n_edits {
                cfg.eval.n_edits = *n;
            }
        }
        _ => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::InvalidConfig(_) | Error::InvalidInput(_) | Error::IncompatibleCheckpoint(_) => 2,
        Error::Io { .. } | Error::Format(_) | Error::Unsupported(_) | Error::Json(_) => 3,
        Error::TrainingDivergence { .. } | Error::SamplingDivergence { .. } => 4,
    }
}

fn run(cli: &Cli) -> afe_core::Result<()> {
    let cfg = resolve_config(cli)?;
    if let Some(jobs) = cli.global.jobs {
        if jobs == 0 {
            return Err(Error::InvalidConfig("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| Error::InvalidConfig(e.to_string()))?;
    }
    commands::dispatch(&cli.command, &cfg)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        // Usage errors exit with 2, help and version with 0.
        Err(e) => e.exit(),
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("afe: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
