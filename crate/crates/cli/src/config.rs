//! Run configuration: defaults, the previous run's resolved file, an optional
//! `--config` file and command-line flags, merged in that order.

use std::path::Path;

use pimc_core::dataset::ExtractConfig;
use pimc_core::encoder::EncoderConfig;
use pimc_core::eval::{AttachMode, ProbeConfig};
use pimc_core::ingest::SynthConfig;
use pimc_core::pipeline::SamplingMode;
use pimc_core::trainer::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const RESOLVED_NAME: &str = "resolved_config.toml";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    PixelCls,
    Forecast,
    Landcover,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::PixelCls => "pixel-cls",
            Task::Forecast => "forecast",
            Task::Landcover => "landcover",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub workers: usize,
    pub synth: SynthSection,
    pub extract: ExtractSection,
    pub encoder: EncoderSection,
    pub train: TrainSection,
    pub eval: EvalSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub train_regions: usize,
    pub val_regions: usize,
    pub test_regions: usize,
    pub classes: usize,
    pub timesteps: usize,
    pub height: usize,
    pub width: usize,
    pub noise: f32,
    pub jitter: f32,
    pub distractor: f32,
    pub field_size: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractSection {
    pub ps: usize,
    pub pixels: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub series_len: Option<usize>,
    pub plot_size: usize,
    pub mode: SamplingMode,
    /// Random pixels per patch kept aside for evaluation.
    pub eval_pixels: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderSection {
    pub widths: Vec<usize>,
    pub blocks: usize,
    pub embed_dim: usize,
    pub image_size: usize,
    pub zero_init_residual: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f32,
    pub weight_decay: f32,
    pub temp_init: f32,
    pub checkpoint_every: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub task: Task,
    pub attach: AttachMode,
    /// Checkpoint tag to probe: `final`, `best` or `epochNNNN`.
    pub checkpoint: String,
    pub epochs: usize,
    pub lr: f32,
    pub weight_decay: f32,
    pub batch: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hidden: Option<usize>,
    pub finetune_epochs: usize,
    pub finetune_lr: f32,
    pub context: usize,
    pub horizon: usize,
    pub stride: usize,
    /// Timestamp stride when cutting land-cover images from cubes.
    pub landcover_stride: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            workers: 1,
            synth: SynthSection::default(),
            extract: ExtractSection::default(),
            encoder: EncoderSection::default(),
            train: TrainSection::default(),
            eval: EvalSection::default(),
        }
    }
}

impl Default for SynthSection {
    fn default() -> Self {
        let s = SynthConfig::default();
        Self {
            train_regions: 12,
            val_regions: 0,
            test_regions: 4,
            classes: s.classes,
            timesteps: s.timesteps,
            height: s.height,
            width: s.width,
            noise: s.noise,
            jitter: s.jitter,
            distractor: s.distractor,
            field_size: s.field_size,
        }
    }
}

impl Default for ExtractSection {
    fn default() -> Self {
        Self {
            ps: 16,
            pixels: 16,
            series_len: None,
            plot_size: 16,
            mode: SamplingMode::Hilbert,
            eval_pixels: 2,
        }
    }
}

impl Default for EncoderSection {
    fn default() -> Self {
        Self {
            widths: vec![16, 32, 64],
            blocks: 1,
            embed_dim: 64,
            image_size: 16,
            zero_init_residual: false,
        }
    }
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::desk();
        Self {
            epochs: t.epochs,
            batch: 128,
            lr: t.lr,
            weight_decay: t.weight_decay,
            temp_init: t.temp_init,
            checkpoint_every: 0,
        }
    }
}

impl Default for EvalSection {
    fn default() -> Self {
        let p = ProbeConfig::default();
        Self {
            task: Task::PixelCls,
            attach: AttachMode::Frozen,
            checkpoint: "final".into(),
            epochs: p.epochs,
            lr: p.lr,
            weight_decay: p.weight_decay,
            batch: p.batch_size,
            hidden: p.hidden,
            finetune_epochs: p.finetune_epochs,
            finetune_lr: p.finetune_lr,
            context: 32,
            horizon: 10,
            stride: 2,
            landcover_stride: 8,
        }
    }
}

/// Overlay `top` onto `base`, recursing into tables.
fn merge(base: &mut toml::Table, top: toml::Table) {
    for (k, v) in top {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(t)) => merge(b, t),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn read_table(path: &Path) -> Result<toml::Table, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| pimc_core::Error::io(path, e))?;
    text.parse::<toml::Table>()
        .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

impl RunConfig {
    /// Defaults overlaid with `<out>/resolved_config.toml` (when present)
    /// and then the user's config file.
    pub fn layered(out: &Path, user: Option<&Path>) -> Result<Self, CliError> {
        let mut table = toml::Table::try_from(RunConfig::default())
            .map_err(|e| CliError::Usage(format!("default config: {e}")))?;
        let previous = out.join(RESOLVED_NAME);
        if previous.exists() {
            merge(&mut table, read_table(&previous)?);
        }
        if let Some(p) = user {
            merge(&mut table, read_table(p)?);
        }
        let cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e| CliError::Usage(format!("config: {e}")))?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.workers == 0 {
            return Err(CliError::Usage("--workers must be at least 1".into()));
        }
        if self.synth.train_regions == 0 {
            return Err(CliError::Usage("synth.train_regions must be at least 1".into()));
        }
        if self.extract.ps == 0 || self.extract.pixels == 0 || self.extract.eval_pixels == 0 {
            return Err(CliError::Usage("patch size and pixel counts must be positive".into()));
        }
        if self.extract.pixels + self.extract.eval_pixels > self.extract.ps * self.extract.ps {
            return Err(CliError::Usage(format!(
                "{} + {} pixels do not fit a {}x{} patch",
                self.extract.pixels, self.extract.eval_pixels, self.extract.ps, self.extract.ps
            )));
        }
        self.train_config().validate()?;
        self.series_encoder().validate()?;
        Ok(())
    }

    pub fn synth_config(&self) -> SynthConfig {
        let s = &self.synth;
        SynthConfig {
            classes: s.classes,
            timesteps: s.timesteps,
            height: s.height,
            width: s.width,
            noise: s.noise,
            jitter: s.jitter,
            distractor: s.distractor,
            field_size: s.field_size,
            ..SynthConfig::default()
        }
    }

    pub fn extract_config(&self) -> ExtractConfig {
        let e = &self.extract;
        ExtractConfig {
            ps: e.ps,
            pixels: e.pixels,
            series_len: e.series_len,
            plot_size: e.plot_size,
            mode: e.mode,
        }
    }

    fn encoder(&self, input_size: usize) -> EncoderConfig {
        let e = &self.encoder;
        EncoderConfig {
            widths: e.widths.clone(),
            blocks: e.blocks,
            in_channels: 3,
            embed_dim: e.embed_dim,
            input_size,
            zero_init_residual: e.zero_init_residual,
        }
    }

    pub fn image_encoder(&self) -> EncoderConfig {
        self.encoder(self.encoder.image_size)
    }

    pub fn series_encoder(&self) -> EncoderConfig {
        self.encoder(self.extract.plot_size)
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            epochs: t.epochs,
            lr: t.lr,
            weight_decay: t.weight_decay,
            batch_size: t.batch,
            temp_init: t.temp_init,
            seed: self.seed,
            checkpoint_every: t.checkpoint_every,
        }
    }

    pub fn probe_config(&self) -> ProbeConfig {
        let e = &self.eval;
        ProbeConfig {
            epochs: e.epochs,
            lr: e.lr,
            weight_decay: e.weight_decay,
            batch_size: e.batch,
            hidden: e.hidden,
            mode: e.attach,
            finetune_epochs: e.finetune_epochs,
            finetune_lr: e.finetune_lr,
            seed: self.seed,
            ignore_labels: Vec::new(),
        }
    }
}
