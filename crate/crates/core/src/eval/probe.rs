//! Linear (or one-hidden-layer) heads on encoder features, trained frozen or
//! with the encoder fine-tuned after the head has converged.

use std::collections::BTreeSet;

use log::warn;
use pimc_tensor::{adam_step, AdamConfig, AdamState, Tape, Tensor, Var};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::metrics::{classification_metrics, regression_metrics};
use super::report::{ForecastMetrics, IndexMetrics, MetricsReport};
use crate::encoder::EncoderParams;
use crate::error::{Error, Result};
use crate::pipeline::{IndexSeriesSet, VegetationIndex};
use crate::representation::{resize_rp, stack_series};
use crate::rng::stream_rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttachMode {
    Frozen,
    Finetune,
}

impl std::fmt::Display for AttachMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            AttachMode::Frozen => "frozen",
            AttachMode::Finetune => "finetune",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub epochs: usize,
    pub lr: f32,
    pub weight_decay: f32,
    pub batch_size: usize,
    /// Width of an optional hidden layer.
    pub hidden: Option<usize>,
    pub mode: AttachMode,
    /// Joint encoder + head epochs after the head-only phase.
    pub finetune_epochs: usize,
    pub finetune_lr: f32,
    pub seed: u64,
    /// Labels dropped from both splits (background, uncertain).
    pub ignore_labels: Vec<u16>,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            lr: 1e-3,
            weight_decay: 0.0,
            batch_size: 64,
            hidden: None,
            mode: AttachMode::Frozen,
            finetune_epochs: 10,
            finetune_lr: 1e-4,
            seed: 0,
            ignore_labels: Vec::new(),
        }
    }
}

/// Encoder inputs with one class label each.
#[derive(Clone, Debug)]
pub struct LabeledInputs {
    pub inputs: Tensor,
    pub labels: Vec<u16>,
}

impl LabeledInputs {
    fn filter(&self, keep: impl Fn(u16) -> bool) -> Result<Self> {
        let rows: Vec<usize> = (0..self.labels.len()).filter(|&i| keep(self.labels[i])).collect();
        Ok(Self {
            inputs: self.inputs.select_rows(&rows)?,
            labels: rows.iter().map(|&i| self.labels[i]).collect(),
        })
    }
}

/// Plots of `context`-step windows paired with the following `horizon`
/// values of each index, flattened index-major.
#[derive(Clone, Debug)]
pub struct ForecastSet {
    pub inputs: Tensor,
    pub targets: Tensor,
    pub horizon: usize,
    /// Pixels whose series was too short for one window.
    pub skipped: usize,
}

impl ForecastSet {
    pub fn from_series(
        sets: &[IndexSeriesSet],
        context: usize,
        horizon: usize,
        stride: usize,
        plot_size: usize,
    ) -> Result<Self> {
        if context < 2 || horizon == 0 || stride == 0 {
            return Err(Error::Config(format!(
                "forecast context {context}, horizon {horizon}, stride {stride} invalid"
            )));
        }
        let (mut inputs, mut targets) = (Vec::new(), Vec::new());
        let mut skipped = 0;
        let mut count = 0;
        for set in sets {
            let n = set.n;
            for i in 0..set.m() {
                if n < context + horizon {
                    skipped += 1;
                    continue;
                }
                let px = set.pixel(i);
                for start in (0..=n - context - horizon).step_by(stride) {
                    let mut ctx = Vec::with_capacity(3 * context);
                    for c in 0..3 {
                        ctx.extend_from_slice(&px[c * n + start..c * n + start + context]);
                        targets.extend_from_slice(&px[c * n + start + context..c * n + start + context + horizon]);
                    }
                    let rp = resize_rp(&stack_series(&ctx, context, set.coords[i])?, plot_size)?;
                    inputs.extend(rp.data);
                    count += 1;
                }
            }
        }
        if skipped > 0 {
            warn!("{skipped} series shorter than context + horizon = {}", context + horizon);
        }
        Ok(Self {
            inputs: Tensor::new(vec![count, 3, plot_size, plot_size], inputs)?,
            targets: Tensor::new(vec![count, 3 * horizon], targets)?,
            horizon,
            skipped,
        })
    }

    pub fn len(&self) -> usize {
        self.targets.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

enum Target<'a> {
    Classes(&'a [usize]),
    Values(&'a Tensor),
}

impl Target<'_> {
    fn loss(&self, tape: &mut Tape, out: Var, rows: &[usize]) -> Result<Var> {
        Ok(match self {
            Target::Classes(y) => {
                let t: Vec<usize> = rows.iter().map(|&r| y[r]).collect();
                tape.softmax_cross_entropy_rows(out, &t)?
            }
            Target::Values(v) => tape.mse(out, &v.select_rows(rows)?)?,
        })
    }
}

/// Feature standardization plus dense layers.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbeHead {
    pub mean: Vec<f32>,
    pub inv_std: Vec<f32>,
    /// `(weight[out × in], bias[out])` per layer; ReLU between layers.
    pub layers: Vec<(Tensor, Tensor)>,
}

impl ProbeHead {
    fn init(features: &Tensor, hidden: Option<usize>, out: usize, seed: u64) -> Self {
        let [n, d] = features.shape()[..] else { unreachable!("features are 2-D") };
        let mut mean = vec![0.0f64; d];
        let mut sq = vec![0.0f64; d];
        for row in features.data().chunks(d) {
            for (j, &v) in row.iter().enumerate() {
                mean[j] += v as f64;
                sq[j] += (v as f64).powi(2);
            }
        }
        let inv_std = (0..d)
            .map(|j| {
                let m = mean[j] / n as f64;
                let var = (sq[j] / n as f64 - m * m).max(0.0);
                (1.0 / (var.sqrt() + 1e-6)) as f32
            })
            .collect();
        let mean = mean.iter().map(|&m| (m / n as f64) as f32).collect();
        let mut rng = stream_rng(seed, "probe-head", 0);
        let mut dense = |i: usize, o: usize| {
            let b = 1.0 / (i as f32).sqrt();
            (
                Tensor::from_fn(vec![o, i], |_| rng.random_range(-b..b)),
                Tensor::from_fn(vec![o], |_| rng.random_range(-b..b)),
            )
        };
        let layers = match hidden {
            Some(h) => vec![dense(d, h), dense(h, out)],
            None => vec![dense(d, out)],
        };
        Self { mean, inv_std, layers }
    }

    fn params(&self) -> impl Iterator<Item = &Tensor> {
        self.layers.iter().flat_map(|(w, b)| [w, b])
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(|(w, b)| [w, b]).collect()
    }

    /// Record the head on `features[b × d]`; returns the output and the
    /// parameter vars in [`ProbeHead::params`] order.
    fn forward(&self, tape: &mut Tape, features: Var, grads: bool) -> Result<(Var, Vec<Var>)> {
        let b = tape.value(features).shape()[0];
        let neg_mean = tape.constant(Tensor::new(vec![self.mean.len()], self.mean.iter().map(|m| -m).collect())?);
        let scale = tape.constant(Tensor::from_fn(vec![b, self.inv_std.len()], |k| {
            self.inv_std[k % self.inv_std.len()]
        }));
        let centered = tape.add_bias(features, neg_mean)?;
        let mut h = tape.mul(centered, scale)?;
        let mut vars = Vec::new();
        for (i, (w, bias)) in self.layers.iter().enumerate() {
            let (wv, bv) = (tape.leaf(w.clone(), grads), tape.leaf(bias.clone(), grads));
            vars.extend([wv, bv]);
            if i > 0 {
                h = tape.relu(h)?;
            }
            h = tape.linear(h, wv, Some(bv))?;
        }
        Ok((h, vars))
    }

    /// Head outputs for precomputed features.
    pub fn apply(&self, features: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let f = tape.constant(features.clone());
        let (out, _) = self.forward(&mut tape, f, false)?;
        Ok(tape.value(out).clone())
    }
}

fn batches(n: usize, batch: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut stream_rng(seed, "probe-epoch", epoch as u64));
    idx.chunks(batch.max(1)).map(<[usize]>::to_vec).collect()
}

fn apply_grads(params: Vec<&mut Tensor>, vars: &[Var], grads: &mut pimc_tensor::Gradients, opt: &mut AdamState) -> Result<()> {
    let gs: Vec<Tensor> = params
        .iter()
        .zip(vars)
        .map(|(p, &v)| grads.take(v).unwrap_or_else(|| Tensor::zeros(p.shape().to_vec())))
        .collect();
    let mut params = params;
    let grefs: Vec<&Tensor> = gs.iter().collect();
    adam_step(&mut params, &grefs, opt).map_err(|e| Error::Numerical(e.to_string()))
}

fn fit_head(features: &Tensor, target: &Target, out: usize, cfg: &ProbeConfig) -> Result<ProbeHead> {
    let mut head = ProbeHead::init(features, cfg.hidden, out, cfg.seed);
    let mut opt = AdamState::new(
        AdamConfig {
            lr: cfg.lr,
            weight_decay: cfg.weight_decay,
            ..AdamConfig::default()
        },
        head.params(),
    );
    let n = features.shape()[0];
    for epoch in 0..cfg.epochs {
        for rows in batches(n, cfg.batch_size, cfg.seed, epoch) {
            let mut tape = Tape::new();
            let x = tape.constant(features.select_rows(&rows)?);
            let (y, vars) = head.forward(&mut tape, x, true)?;
            let loss = target.loss(&mut tape, y, &rows)?;
            if !tape.value(loss).item().is_finite() {
                return Err(Error::Numerical(format!("probe loss diverged in epoch {epoch}")));
            }
            let mut grads = tape.backward(loss)?;
            apply_grads(head.params_mut(), &vars, &mut grads, &mut opt)?;
        }
    }
    Ok(head)
}

/// Joint updates of a copy of `encoder` and `head`. Batch-norm layers stay in
/// inference mode so the head sees the statistics it was fitted on.
fn finetune(
    encoder: &EncoderParams,
    mut head: ProbeHead,
    inputs: &Tensor,
    target: &Target,
    cfg: &ProbeConfig,
) -> Result<(EncoderParams, ProbeHead)> {
    let mut enc = encoder.clone();
    let adam = AdamConfig {
        lr: cfg.finetune_lr,
        weight_decay: cfg.weight_decay,
        ..AdamConfig::default()
    };
    let mut enc_opt = AdamState::new(adam, enc.params.values());
    let mut head_opt = AdamState::new(adam, head.params());
    let n = inputs.shape()[0];
    for epoch in 0..cfg.finetune_epochs {
        for rows in batches(n, cfg.batch_size, cfg.seed ^ 0x5eed, epoch) {
            let mut tape = Tape::new();
            let x = tape.constant(inputs.select_rows(&rows)?);
            let (f, enc_vars) = enc.forward(&mut tape, x, false, true)?;
            let (y, head_vars) = head.forward(&mut tape, f, true)?;
            let loss = target.loss(&mut tape, y, &rows)?;
            if !tape.value(loss).item().is_finite() {
                return Err(Error::Numerical(format!("fine-tuning loss diverged in epoch {epoch}")));
            }
            let mut grads = tape.backward(loss)?;
            apply_grads(enc.params.values_mut().collect(), &enc_vars, &mut grads, &mut enc_opt)?;
            apply_grads(head.params_mut(), &head_vars, &mut grads, &mut head_opt)?;
        }
    }
    Ok((enc, head))
}

/// Head trained on `train` features, with the encoder fine-tuned in
/// `Finetune` mode; returns the encoder actually used.
fn fit(
    encoder: &EncoderParams,
    inputs: &Tensor,
    target: &Target,
    out: usize,
    cfg: &ProbeConfig,
) -> Result<(Option<EncoderParams>, ProbeHead)> {
    let features = encoder.encode_chunked(inputs, 128)?;
    let head = fit_head(&features, target, out, cfg)?;
    match cfg.mode {
        AttachMode::Frozen => Ok((None, head)),
        AttachMode::Finetune => {
            let (enc, head) = finetune(encoder, head, inputs, target, cfg)?;
            Ok((Some(enc), head))
        }
    }
}

fn predict(encoder: &EncoderParams, head: &ProbeHead, inputs: &Tensor) -> Result<Tensor> {
    head.apply(&encoder.encode_chunked(inputs, 128)?)
}

/// Probe classification of encoder inputs; `task` names the report.
pub fn classify(
    encoder: &EncoderParams,
    train: &LabeledInputs,
    test: &LabeledInputs,
    cfg: &ProbeConfig,
    task: &str,
) -> Result<MetricsReport> {
    let ignore: BTreeSet<u16> = cfg.ignore_labels.iter().copied().collect();
    let train = train.filter(|l| !ignore.contains(&l))?;
    let classes: Vec<u16> = train.labels.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    if classes.len() < 2 {
        return Err(Error::Validation(format!("{task}: training split has {} class(es)", classes.len())));
    }
    let excluded: Vec<u16> = test
        .labels
        .iter()
        .copied()
        .filter(|l| !ignore.contains(l) && classes.binary_search(l).is_err())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if !excluded.is_empty() {
        warn!("{task}: classes {excluded:?} absent from the training split are excluded");
    }
    let test = test.filter(|l| !ignore.contains(&l) && classes.binary_search(&l).is_ok())?;
    if test.labels.is_empty() {
        return Err(Error::Validation(format!("{task}: no test samples left to score")));
    }
    let y: Vec<usize> = train.labels.iter().map(|l| classes.binary_search(l).expect("train class")).collect();
    let (tuned, head) = fit(encoder, &train.inputs, &Target::Classes(&y), classes.len(), cfg)?;
    let logits = predict(tuned.as_ref().unwrap_or(encoder), &head, &test.inputs)?;
    let k = classes.len();
    let pred: Vec<u16> = logits
        .data()
        .chunks(k)
        .map(|row| {
            let best = row
                .iter()
                .enumerate()
                .fold((0, f32::NEG_INFINITY), |b, (i, &v)| if v > b.1 { (i, v) } else { b });
            classes[best.0]
        })
        .collect();
    Ok(MetricsReport {
        task: task.to_string(),
        mode: cfg.mode,
        seed: cfg.seed,
        train_samples: train.labels.len(),
        test_samples: test.labels.len(),
        classification: Some(classification_metrics(&test.labels, &pred)?),
        forecast: None,
        excluded_classes: excluded,
        skipped: 0,
    })
}

/// Pixel classification from series-encoder features of recurrence plots.
pub fn classify_pixels(
    series_encoder: &EncoderParams,
    train: &LabeledInputs,
    test: &LabeledInputs,
    cfg: &ProbeConfig,
) -> Result<MetricsReport> {
    classify(series_encoder, train, test, cfg, "pixel-cls")
}

/// Land-cover classification from image-encoder features of RGB patches.
pub fn classify_landcover(
    image_encoder: &EncoderParams,
    train: &LabeledInputs,
    test: &LabeledInputs,
    cfg: &ProbeConfig,
) -> Result<MetricsReport> {
    classify(image_encoder, train, test, cfg, "landcover")
}

/// Scores of given forecasts against `targets[n × 3·horizon]`.
pub fn forecast_metrics(targets: &Tensor, pred: &Tensor, horizon: usize) -> Result<ForecastMetrics> {
    let n = targets.shape()[0];
    let width = 3 * horizon;
    let column = |t: &Tensor, c: usize| -> Vec<f32> {
        t.data()
            .chunks(width)
            .flat_map(|row| row[c * horizon..(c + 1) * horizon].to_vec())
            .collect()
    };
    let per_index = VegetationIndex::ALL
        .iter()
        .enumerate()
        .map(|(c, vi)| {
            let m = regression_metrics(&column(targets, c), &column(pred, c))?;
            Ok(IndexMetrics {
                index: vi.name().to_string(),
                mae: m.mae,
                mse: m.mse,
                rmse: m.rmse,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    debug_assert_eq!(targets.data().len(), n * width);
    Ok(ForecastMetrics {
        horizon,
        per_index,
        overall: regression_metrics(targets.data(), pred.data())?,
    })
}

/// Forecast the next `horizon` values of all three indices from the plot of
/// the context window.
pub fn forecast_index(
    series_encoder: &EncoderParams,
    train: &ForecastSet,
    test: &ForecastSet,
    cfg: &ProbeConfig,
) -> Result<MetricsReport> {
    if train.is_empty() || test.is_empty() {
        return Err(Error::Validation("forecast needs non-empty train and test windows".into()));
    }
    if train.horizon != test.horizon {
        return Err(Error::Config("train and test horizons differ".into()));
    }
    let (tuned, head) = fit(
        series_encoder,
        &train.inputs,
        &Target::Values(&train.targets),
        3 * train.horizon,
        cfg,
    )?;
    let pred = predict(tuned.as_ref().unwrap_or(series_encoder), &head, &test.inputs)?;
    Ok(MetricsReport {
        task: "forecast".into(),
        mode: cfg.mode,
        seed: cfg.seed,
        train_samples: train.len(),
        test_samples: test.len(),
        classification: None,
        forecast: Some(forecast_metrics(&test.targets, &pred, test.horizon)?),
        excluded_classes: Vec::new(),
        skipped: train.skipped + test.skipped,
    })
}
