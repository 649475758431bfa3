//! Symmetric image/plot contrastive training.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use log::{info, warn};
use pimc_tensor::{adam_step, AdamConfig, AdamState, Tape, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::dataset::{make_pair_batches, PairDataset};
use crate::encoder::{init_encoder, EncoderConfig, EncoderParams};
use crate::error::{write_file, write_json, Error, Result};

/// Guard for feature rows with vanishing norm.
pub const NORM_EPS: f32 = 1e-8;
pub const TAU_MIN: f32 = 1e-3;
pub const TAU_MAX: f32 = 100.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f32,
    pub weight_decay: f32,
    pub batch_size: usize,
    pub temp_init: f32,
    pub seed: u64,
    /// Save numbered checkpoints every this many epochs (0 = only best/final).
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 400,
            lr: 1e-3,
            weight_decay: 1e-4,
            batch_size: 64,
            temp_init: 0.07,
            seed: 0,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    /// Short schedule for workstation runs.
    pub fn desk() -> Self {
        Self {
            epochs: 40,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) || !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config(format!("lr {} / weight decay {} invalid", self.lr, self.weight_decay)));
        }
        if !(TAU_MIN..=TAU_MAX).contains(&self.temp_init) {
            return Err(Error::Config(format!(
                "temperature {} outside [{TAU_MIN}, {TAU_MAX}]",
                self.temp_init
            )));
        }
        if self.batch_size < 2 {
            return Err(Error::Config("batch size must be >= 2".into()));
        }
        Ok(())
    }
}

/// `normalize_rows(I) · normalize_rows(T)ᵀ / τ` on the tape; `tau` holds one value.
pub fn similarity_matrix(tape: &mut Tape, image: Var, series: Var, tau: Var) -> Result<Var> {
    let (si, st) = (tape.value(image).shape().to_vec(), tape.value(series).shape().to_vec());
    if si.len() != 2 || si != st {
        return Err(pimc_tensor::TensorError::Dimension(format!("feature shapes {si:?} and {st:?} differ")).into());
    }
    let ni = tape.l2_normalize_rows(image, NORM_EPS)?;
    let nt = tape.l2_normalize_rows(series, NORM_EPS)?;
    let ntt = tape.transpose(nt)?;
    let cos = tape.matmul(ni, ntt)?;
    Ok(tape.div_by(cos, tau)?)
}

/// Rows whose norm falls below [`NORM_EPS`] (and are therefore not unit length).
pub fn degenerate_rows(features: &Tensor) -> Vec<usize> {
    let d = features.shape().get(1).copied().unwrap_or(1).max(1);
    features
        .data()
        .chunks(d)
        .enumerate()
        .filter(|(_, r)| r.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt() < NORM_EPS as f64)
        .map(|(i, _)| i)
        .collect()
}

/// `½ (CE(S, diag) + CE(Sᵀ, diag))` on the tape.
pub fn pimc_loss(tape: &mut Tape, s: Var) -> Result<Var> {
    let shape = tape.value(s).shape().to_vec();
    if shape.len() != 2 || shape[0] != shape[1] {
        return Err(pimc_tensor::TensorError::Dimension(format!("similarity matrix must be square, got {shape:?}")).into());
    }
    let targets: Vec<usize> = (0..shape[0]).collect();
    let rows = tape.softmax_cross_entropy_rows(s, &targets)?;
    let st = tape.transpose(s)?;
    let cols = tape.softmax_cross_entropy_rows(st, &targets)?;
    let sum = tape.add(rows, cols)?;
    Ok(tape.scale(sum, 0.5)?)
}

/// Value-only [`pimc_loss`].
pub fn pimc_loss_value(s: &Tensor) -> Result<f32> {
    let mut tape = Tape::new();
    let v = tape.constant(s.clone());
    let l = pimc_loss(&mut tape, v)?;
    Ok(tape.value(l).item())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: u64,
    pub epoch: usize,
    pub loss: f32,
    pub tau: f32,
}

#[derive(Clone, Debug)]
pub struct TrainState {
    pub image_opt: AdamState,
    pub series_opt: AdamState,
    pub tau_opt: AdamState,
    pub tau: f32,
    pub epoch: usize,
    pub step: u64,
    pub history: Vec<LossRecord>,
    pub wall_ms: Vec<u64>,
    /// Lowest epoch-mean loss and the epoch it occurred in.
    pub best: Option<(f32, usize)>,
}

impl TrainState {
    pub fn new(image: &EncoderParams, series: &EncoderParams, cfg: &TrainConfig) -> Self {
        let adam = AdamConfig {
            lr: cfg.lr,
            weight_decay: cfg.weight_decay,
            ..AdamConfig::default()
        };
        let tau = Tensor::scalar(cfg.temp_init);
        Self {
            image_opt: AdamState::new(adam, image.params.values()),
            series_opt: AdamState::new(adam, series.params.values()),
            // temperature shares the lr but is not decayed
            tau_opt: AdamState::new(
                AdamConfig {
                    weight_decay: 0.0,
                    ..adam
                },
                [&tau],
            ),
            tau: cfg.temp_init,
            epoch: 0,
            step: 0,
            history: Vec::new(),
            wall_ms: Vec::new(),
            best: None,
        }
    }

    /// `step,epoch,loss,tau` lines; values are printed with full round-trip
    /// precision so equal runs give equal bytes.
    pub fn loss_csv(&self) -> String {
        let mut s = String::from("step,epoch,loss,tau\n");
        for r in &self.history {
            let _ = writeln!(s, "{},{},{:?},{:?}", r.step, r.epoch, r.loss, r.tau);
        }
        s
    }

    /// Same rows with wall-clock milliseconds, kept apart from the loss log.
    pub fn timing_csv(&self) -> String {
        let mut s = String::from("step,epoch,loss,tau,wall_ms\n");
        for (r, ms) in self.history.iter().zip(&self.wall_ms) {
            let _ = writeln!(s, "{},{},{:?},{:?},{ms}", r.step, r.epoch, r.loss, r.tau);
        }
        s
    }
}

pub struct TrainOutcome {
    pub image: EncoderParams,
    pub series: EncoderParams,
    pub state: TrainState,
}

/// Run one optimization step on a batch; returns the loss before the update.
pub fn train_step(
    image: &mut EncoderParams,
    series: &mut EncoderParams,
    state: &mut TrainState,
    images: &Tensor,
    plots: &Tensor,
) -> Result<f32> {
    let mut tape = Tape::new();
    let xi = tape.constant(images.clone());
    let xt = tape.constant(plots.clone());
    let (fi, vi) = image.forward(&mut tape, xi, true, true)?;
    let (ft, vt) = series.forward(&mut tape, xt, true, true)?;
    let tau = tape.param(Tensor::scalar(state.tau));
    let s = similarity_matrix(&mut tape, fi, ft, tau)?;
    let loss = pimc_loss(&mut tape, s)?;
    let value = tape.value(loss).item();
    if !value.is_finite() {
        return Err(Error::Numerical(format!("loss is {value} at step {}", state.step)));
    }
    let mut grads = tape.backward(loss)?;
    let mut update = |params: &mut EncoderParams, vars: &[Var], opt: &mut AdamState| -> Result<()> {
        let gs: Vec<Tensor> = params
            .params
            .values()
            .zip(vars)
            .map(|(p, &v)| grads.take(v).unwrap_or_else(|| Tensor::zeros(p.shape().to_vec())))
            .collect();
        let mut ps: Vec<&mut Tensor> = params.params.values_mut().collect();
        let grefs: Vec<&Tensor> = gs.iter().collect();
        adam_step(&mut ps, &grefs, opt).map_err(|e| Error::Numerical(e.to_string()))
    };
    update(image, &vi, &mut state.image_opt)?;
    update(series, &vt, &mut state.series_opt)?;
    let g_tau = grads.take(tau).unwrap_or_else(|| Tensor::scalar(0.0));
    let mut t = Tensor::scalar(state.tau);
    adam_step(&mut [&mut t], &[&g_tau], &mut state.tau_opt).map_err(|e| Error::Numerical(e.to_string()))?;
    state.tau = t.item().clamp(TAU_MIN, TAU_MAX);
    state.step += 1;
    Ok(value)
}

/// Where a run writes its artifacts.
#[derive(Clone, Debug)]
pub struct RunPaths {
    pub dir: PathBuf,
}

impl RunPaths {
    pub fn checkpoint(&self, encoder: &str, tag: &str) -> PathBuf {
        self.dir.join("checkpoints").join(format!("{encoder}_{tag}.json"))
    }

    pub fn loss_csv(&self) -> PathBuf {
        self.dir.join("loss.csv")
    }

    pub fn timing_csv(&self) -> PathBuf {
        self.dir.join("timing.csv")
    }

    pub fn state_json(&self) -> PathBuf {
        self.dir.join("train_state.json")
    }
}

#[derive(Serialize)]
struct StateSummary<'a> {
    config: &'a TrainConfig,
    epoch: usize,
    step: u64,
    tau: f32,
    best_loss: Option<f32>,
    best_epoch: Option<usize>,
}

fn save_pair(out: &RunPaths, tag: &str, image: &EncoderParams, series: &EncoderParams, step: u64) -> Result<()> {
    image.save(&out.checkpoint("image", tag), step)?;
    series.save(&out.checkpoint("series", tag), step)
}

/// Train both encoders from scratch on `dataset`.
pub fn train(
    dataset: &PairDataset,
    image_cfg: &EncoderConfig,
    series_cfg: &EncoderConfig,
    cfg: &TrainConfig,
    out: Option<&RunPaths>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if dataset.len() < 2 {
        return Err(Error::Validation("training needs at least two patches".into()));
    }
    if image_cfg.input_size != dataset.image_size() || series_cfg.input_size != dataset.plot_size() {
        return Err(Error::Config(format!(
            "encoder input sizes {}/{} do not match dataset image/plot sizes {}/{}",
            image_cfg.input_size,
            series_cfg.input_size,
            dataset.image_size(),
            dataset.plot_size()
        )));
    }
    let mut image = init_encoder(image_cfg, crate::rng::derive_seed(cfg.seed, "image-encoder", 0))?;
    let mut series = init_encoder(series_cfg, crate::rng::derive_seed(cfg.seed, "series-encoder", 0))?;
    let mut state = TrainState::new(&image, &series, cfg);
    let start = Instant::now();
    let mut last_good: Option<PathBuf> = None;
    for epoch in 0..cfg.epochs {
        let batches = make_pair_batches(dataset, cfg.batch_size, cfg.seed, epoch as u64)?;
        let mut total = 0.0f64;
        for batch in &batches {
            let loss = train_step(&mut image, &mut series, &mut state, &batch.images, &batch.plots).map_err(|e| match e {
                Error::Numerical(m) => Error::Numerical(match &last_good {
                    Some(p) => format!("{m}; last good checkpoint: {}", p.display()),
                    None => format!("{m}; no checkpoint written yet"),
                }),
                other => other,
            })?;
            total += loss as f64;
            state.history.push(LossRecord {
                step: state.step,
                epoch,
                loss,
                tau: state.tau,
            });
            state.wall_ms.push(start.elapsed().as_millis() as u64);
        }
        state.epoch = epoch + 1;
        let mean = (total / batches.len().max(1) as f64) as f32;
        info!("epoch {} loss {mean:.4} tau {:.4}", epoch + 1, state.tau);
        if let Some(out) = out {
            if state.best.is_none_or(|(b, _)| mean < b) {
                state.best = Some((mean, epoch));
                save_pair(out, "best", &image, &series, state.step)?;
                last_good = Some(out.checkpoint("series", "best"));
            }
            if cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0 {
                let tag = format!("epoch{:04}", epoch + 1);
                save_pair(out, &tag, &image, &series, state.step)?;
                last_good = Some(out.checkpoint("series", &tag));
            }
        } else if state.best.is_none_or(|(b, _)| mean < b) {
            state.best = Some((mean, epoch));
        }
    }
    if let Some(out) = out {
        save_pair(out, "final", &image, &series, state.step)?;
        write_file(&out.loss_csv(), state.loss_csv().as_bytes())?;
        write_file(&out.timing_csv(), state.timing_csv().as_bytes())?;
        write_json(
            &out.state_json(),
            &StateSummary {
                config: cfg,
                epoch: state.epoch,
                step: state.step,
                tau: state.tau,
                best_loss: state.best.map(|b| b.0),
                best_epoch: state.best.map(|b| b.1),
            },
        )?;
    }
    if !image.is_finite() || !series.is_finite() {
        warn!("non-finite parameters after training");
        return Err(Error::Numerical("parameters became non-finite".into()));
    }
    Ok(TrainOutcome { image, series, state })
}

/// Cross-modal top-1 retrieval accuracy over paired rows, in both directions
/// (image → plot, plot → image). Ties resolve to the lower index.
pub fn retrieval_top1(image_feats: &Tensor, series_feats: &Tensor) -> Result<(f64, f64)> {
    let mut tape = Tape::new();
    let i = tape.constant(image_feats.clone());
    let t = tape.constant(series_feats.clone());
    let one = tape.constant(Tensor::scalar(1.0));
    let s = similarity_matrix(&mut tape, i, t, one)?;
    let s = tape.value(s);
    let b = s.shape()[0];
    if b == 0 {
        return Err(Error::Domain("retrieval over an empty set".into()));
    }
    let d = s.data();
    let argmax = |vals: &mut dyn Iterator<Item = f32>| {
        let mut best = (0, f32::NEG_INFINITY);
        for (j, v) in vals.enumerate() {
            if v > best.1 {
                best = (j, v);
            }
        }
        best.0
    };
    let mut i2t = 0usize;
    let mut t2i = 0usize;
    for r in 0..b {
        i2t += (argmax(&mut d[r * b..(r + 1) * b].iter().copied()) == r) as usize;
        t2i += (argmax(&mut (0..b).map(|q| d[q * b + r])) == r) as usize;
    }
    Ok((i2t as f64 / b as f64, t2i as f64 / b as f64))
}

/// Contrastive loss of the current encoders on fixed pairs, in eval mode.
pub fn eval_loss(image: &EncoderParams, series: &EncoderParams, tau: f32, images: &Tensor, plots: &Tensor) -> Result<f32> {
    let fi = image.encode_chunked(images, 64)?;
    let ft = series.encode_chunked(plots, 64)?;
    let mut tape = Tape::new();
    let (a, b) = (tape.constant(fi), tape.constant(ft));
    let t = tape.constant(Tensor::scalar(tau));
    let s = similarity_matrix(&mut tape, a, b, t)?;
    let l = pimc_loss(&mut tape, s)?;
    Ok(tape.value(l).item())
}
