//! The `pimc` command line: synthetic data, extraction, training,
//! evaluation, embedding and reports over one output directory.

pub mod commands;
pub mod config;
pub mod svg;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use pimc_core::eval::AttachMode;
use pimc_core::pipeline::SamplingMode;
use thiserror::Error;

pub use config::{RunConfig, Task};

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] pimc_core::Error),
    #[error("usage: {0}")]
    Usage(String),
}

impl From<pimc_tensor::TensorError> for CliError {
    fn from(e: pimc_tensor::TensorError) -> Self {
        CliError::Core(e.into())
    }
}

impl CliError {
    /// 2 usage, 3 data/format/IO, 4 numerical.
    pub fn exit_code(&self) -> i32 {
        use pimc_core::Error as E;
        match self {
            CliError::Usage(_) => 2,
            CliError::Core(e) => match e {
                E::Config(_) | E::Domain(_) => 2,
                E::Io { .. } | E::Format(_) | E::Corruption(_) | E::Validation(_) => 3,
                E::Numerical(_) | E::Tensor(_) => 4,
            },
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "pimc", version, about = "Pixel/image contrastive pretraining on satellite image time series")]
pub struct Cli {
    #[command(flatten)]
    pub flags: Flags,
    #[command(subcommand)]
    pub command: Command,
}

/// Flags shared by every command; unset flags leave the configuration alone.
#[derive(Debug, Default, Args)]
pub struct Flags {
    /// TOML file overlaid on the defaults and on `<out>/resolved_config.toml`.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Run directory.
    #[arg(long, global = true, default_value = "run")]
    pub out: PathBuf,
    /// Patch size in pixels.
    #[arg(long, global = true)]
    pub ps: Option<usize>,
    /// Pixels sampled per patch.
    #[arg(long, global = true)]
    pub pixels: Option<usize>,
    /// Leading timestamps kept per series.
    #[arg(long, global = true)]
    pub series_len: Option<usize>,
    /// Training epochs (probe epochs under `eval`).
    #[arg(long, global = true)]
    pub epochs: Option<usize>,
    /// Batch size (probe batch under `eval`).
    #[arg(long, global = true)]
    pub batch: Option<usize>,
    #[arg(long, global = true)]
    pub lr: Option<f32>,
    #[arg(long, global = true)]
    pub weight_decay: Option<f32>,
    #[arg(long, global = true)]
    pub temp_init: Option<f32>,
    #[arg(long, global = true, value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long, global = true, value_enum)]
    pub task: Option<Task>,
    /// Worker threads; computation is sequential, so any value gives the same bytes.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ModeArg {
    Hilbert,
    Random,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum AttachArg {
    Frozen,
    Finetune,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum EncoderKind {
    Series,
    Image,
}

impl EncoderKind {
    pub fn name(self) -> &'static str {
        match self {
            EncoderKind::Series => "series",
            EncoderKind::Image => "image",
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic cubes, label rasters and a manifest under `<out>/data`.
    Synthdata,
    /// Sample pixels, build index series and recurrence plots under `<out>/extract`.
    Extract,
    /// Contrastive training of both encoders; writes `<out>/train`.
    Train,
    /// Probe a trained encoder on one task; writes `<out>/eval`.
    Eval {
        #[arg(long, value_enum)]
        attach: Option<AttachArg>,
        /// Checkpoint tag: final, best or epochNNNN.
        #[arg(long)]
        checkpoint: Option<String>,
    },
    /// Embed a cube file, a folder of image tensors, or every region.
    Embed {
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "series")]
        encoder: EncoderKind,
        #[arg(long)]
        checkpoint: Option<String>,
    },
    /// Rank evaluation reports and draw plots under `<out>/report`.
    Report {
        /// Further run directories whose reports join the ranking.
        #[arg(long)]
        compare: Vec<PathBuf>,
    },
}

impl Flags {
    fn apply(&self, cfg: &mut RunConfig, command: &Command) {
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.workers {
            cfg.workers = v;
        }
        if let Some(v) = self.ps {
            cfg.extract.ps = v;
        }
        if let Some(v) = self.pixels {
            cfg.extract.pixels = v;
        }
        if let Some(v) = self.series_len {
            cfg.extract.series_len = Some(v);
        }
        if let Some(v) = self.mode {
            cfg.extract.mode = match v {
                ModeArg::Hilbert => SamplingMode::Hilbert,
                ModeArg::Random => SamplingMode::Random,
            };
        }
        if let Some(v) = self.temp_init {
            cfg.train.temp_init = v;
        }
        if let Some(v) = self.task {
            cfg.eval.task = v;
        }
        let probe = matches!(command, Command::Eval { .. });
        if let Some(v) = self.epochs {
            if probe {
                cfg.eval.epochs = v;
            } else {
                cfg.train.epochs = v;
            }
        }
        if let Some(v) = self.batch {
            if probe {
                cfg.eval.batch = v;
            } else {
                cfg.train.batch = v;
            }
        }
        if let Some(v) = self.lr {
            if probe {
                cfg.eval.lr = v;
            } else {
                cfg.train.lr = v;
            }
        }
        if let Some(v) = self.weight_decay {
            if probe {
                cfg.eval.weight_decay = v;
            } else {
                cfg.train.weight_decay = v;
            }
        }
        match command {
            Command::Eval { attach, checkpoint } => {
                if let Some(a) = attach {
                    cfg.eval.attach = match a {
                        AttachArg::Frozen => AttachMode::Frozen,
                        AttachArg::Finetune => AttachMode::Finetune,
                    };
                }
                if let Some(c) = checkpoint {
                    cfg.eval.checkpoint = c.clone();
                }
            }
            Command::Embed {
                checkpoint: Some(c), ..
            } => cfg.eval.checkpoint = c.clone(),
            _ => {}
        }
    }
}

/// Resolve the configuration, record it in the run directory, and run the
/// command.
pub fn run(cli: &Cli) -> Result<(), CliError> {
    let mut cfg = RunConfig::layered(&cli.flags.out, cli.flags.config.as_deref())?;
    cli.flags.apply(&mut cfg, &cli.command);
    cfg.validate()?;
    if cfg.workers > 1 {
        log::info!("--workers {} requested; stages run sequentially", cfg.workers);
    }
    let out = &cli.flags.out;
    commands::write(&out.join(config::RESOLVED_NAME), cfg.to_toml().as_bytes())?;
    match &cli.command {
        Command::Synthdata => commands::synthdata(&cfg, out),
        Command::Extract => commands::extract(&cfg, out),
        Command::Train => commands::train(&cfg, out),
        Command::Eval { .. } => commands::eval(&cfg, out),
        Command::Embed { input, encoder, .. } => commands::embed(&cfg, out, input.as_deref(), *encoder),
        Command::Report { compare } => commands::report(out, compare),
    }
}

/// Parse `args`, run, and map the outcome to a process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
