//! Compact residual encoder: 3×3 stem, stages of basic blocks with stride-2
//! transitions, global average pooling and a linear projection.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use pimc_tensor::{BatchNormConfig, Tape, Tensor, TensorError, Var};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{read_file, read_json, write_file, write_json, Error, Result};
use crate::ingest::PimcRecord;
use crate::rng::stream_rng;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub widths: Vec<usize>,
    pub blocks: usize,
    pub in_channels: usize,
    pub embed_dim: usize,
    pub input_size: usize,
    #[serde(default)]
    pub zero_init_residual: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            widths: vec![16, 32, 64, 128],
            blocks: 2,
            in_channels: 3,
            embed_dim: 128,
            input_size: 64,
            zero_init_residual: false,
        }
    }
}

impl EncoderConfig {
    /// ResNet-18 stage widths and depth.
    pub fn full_width(input_size: usize) -> Self {
        Self {
            widths: vec![64, 128, 256, 512],
            embed_dim: 128,
            input_size,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.is_empty() || self.widths.contains(&0) {
            return Err(Error::Config(format!("stage widths must be positive: {:?}", self.widths)));
        }
        if self.blocks == 0 || self.in_channels == 0 {
            return Err(Error::Config("blocks and input channels must be positive".into()));
        }
        if self.embed_dim < 8 {
            return Err(Error::Config(format!("embedding dim must be >= 8, got {}", self.embed_dim)));
        }
        if self.input_size == 0 {
            return Err(Error::Config("input size must be positive".into()));
        }
        Ok(())
    }

    /// Parameter count derived from the layer shapes alone.
    pub fn param_count(&self) -> usize {
        let conv = |cin: usize, cout: usize, k: usize| cin * cout * k * k;
        let bn = |c: usize| 2 * c;
        let mut total = conv(self.in_channels, self.widths[0], 3) + bn(self.widths[0]);
        let mut cin = self.widths[0];
        for (stage, &w) in self.widths.iter().enumerate() {
            for block in 0..self.blocks {
                let stride = if stage > 0 && block == 0 { 2 } else { 1 };
                total += conv(cin, w, 3) + bn(w) + conv(w, w, 3) + bn(w);
                if stride != 1 || cin != w {
                    total += conv(cin, w, 1) + bn(w);
                }
                cin = w;
            }
        }
        total + cin * self.embed_dim + self.embed_dim
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BnStats {
    pub mean: Vec<f32>,
    pub var: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    pub config: EncoderConfig,
    pub seed: u64,
    /// Trainable tensors keyed by layer path.
    pub params: BTreeMap<String, Tensor>,
    /// Batch-norm running statistics keyed by layer prefix.
    pub stats: BTreeMap<String, BnStats>,
}

struct Block {
    prefix: String,
    stride: usize,
    downsample: bool,
}

fn blocks(config: &EncoderConfig) -> Vec<Block> {
    let mut out = Vec::new();
    let mut cin = config.widths[0];
    for (stage, &w) in config.widths.iter().enumerate() {
        for block in 0..config.blocks {
            let stride = if stage > 0 && block == 0 { 2 } else { 1 };
            out.push(Block {
                prefix: format!("stage{stage}.block{block}"),
                stride,
                downsample: stride != 1 || cin != w,
            });
            cin = w;
        }
    }
    out
}

pub fn init_encoder(config: &EncoderConfig, seed: u64) -> Result<EncoderParams> {
    config.validate()?;
    let mut params = BTreeMap::new();
    let mut stats = BTreeMap::new();
    let mut conv = |name: &str, cin: usize, cout: usize, k: usize| {
        let fan_in = cin * k * k;
        let normal = Normal::new(0.0f32, (2.0 / fan_in as f32).sqrt()).expect("positive std");
        let mut rng = stream_rng(seed, name, 0);
        params.insert(
            name.to_string(),
            Tensor::from_fn(vec![cout, cin, k, k], |_| normal.sample(&mut rng)),
        );
    };
    let mut bn_names = Vec::new();
    conv("stem.conv.weight", config.in_channels, config.widths[0], 3);
    bn_names.push(("stem.bn".to_string(), config.widths[0], false));
    let mut cin = config.widths[0];
    let widths: Vec<usize> = config
        .widths
        .iter()
        .flat_map(|&w| std::iter::repeat_n(w, config.blocks))
        .collect();
    for (b, w) in blocks(config).iter().zip(widths) {
        conv(&format!("{}.conv1.weight", b.prefix), cin, w, 3);
        conv(&format!("{}.conv2.weight", b.prefix), w, w, 3);
        bn_names.push((format!("{}.bn1", b.prefix), w, false));
        bn_names.push((format!("{}.bn2", b.prefix), w, config.zero_init_residual));
        if b.downsample {
            conv(&format!("{}.down.conv.weight", b.prefix), cin, w, 1);
            bn_names.push((format!("{}.down.bn", b.prefix), w, false));
        }
        cin = w;
    }
    for (name, c, zero) in bn_names {
        params.insert(format!("{name}.gamma"), Tensor::full(vec![c], if zero { 0.0 } else { 1.0 }));
        params.insert(format!("{name}.beta"), Tensor::zeros(vec![c]));
        stats.insert(
            name,
            BnStats {
                mean: vec![0.0; c],
                var: vec![1.0; c],
            },
        );
    }
    let bound = 1.0 / (cin as f32).sqrt();
    let mut rng = stream_rng(seed, "head", 0);
    params.insert(
        "head.weight".into(),
        Tensor::from_fn(vec![config.embed_dim, cin], |_| rng.random_range(-bound..bound)),
    );
    params.insert(
        "head.bias".into(),
        Tensor::from_fn(vec![config.embed_dim], |_| rng.random_range(-bound..bound)),
    );
    Ok(EncoderParams {
        config: config.clone(),
        seed,
        params,
        stats,
    })
}

struct Forward<'a> {
    tape: &'a mut Tape,
    vars: BTreeMap<String, Var>,
    stats: &'a mut BTreeMap<String, BnStats>,
    training: bool,
}

impl Forward<'_> {
    fn var(&self, name: &str) -> Var {
        self.vars[name]
    }

    fn conv(&mut self, x: Var, name: &str, stride: usize, pad: usize) -> Result<Var> {
        let w = self.var(&format!("{name}.weight"));
        Ok(self.tape.conv2d(x, w, stride, pad)?)
    }

    fn bn(&mut self, x: Var, name: &str) -> Result<Var> {
        let (g, b) = (self.var(&format!("{name}.gamma")), self.var(&format!("{name}.beta")));
        let s = self
            .stats
            .get_mut(name)
            .ok_or_else(|| Error::Corruption(format!("missing batch-norm statistics for {name}")))?;
        Ok(self
            .tape
            .batch_norm2d(x, g, b, &mut s.mean, &mut s.var, BatchNormConfig::default(), self.training)?)
    }
}

impl EncoderParams {
    pub fn param_count(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.params.values().all(Tensor::is_finite)
    }

    /// Order-stable hash of all parameters and statistics.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut feed = |v: f32| {
            for b in v.to_bits().to_le_bytes() {
                h = (h ^ b as u64).wrapping_mul(0x0100_0000_01b3);
            }
        };
        for t in self.params.values() {
            t.data().iter().for_each(|&v| feed(v));
        }
        for s in self.stats.values() {
            s.mean.iter().chain(&s.var).for_each(|&v| feed(v));
        }
        h
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        let c = &self.config;
        if shape.len() != 4 || shape[1] != c.in_channels || shape[2] != c.input_size || shape[3] != c.input_size {
            return Err(TensorError::Dimension(format!(
                "encoder expects b x {} x {} x {}, got {shape:?}",
                c.in_channels, c.input_size, c.input_size
            ))
            .into());
        }
        Ok(())
    }

    /// Record the forward pass on `tape`. Parameters enter as leaves that
    /// require gradients when `param_grads` is set; their vars come back in
    /// `self.params` key order. Training mode uses batch statistics and
    /// updates the running buffers.
    pub fn forward(&mut self, tape: &mut Tape, x: Var, training: bool, param_grads: bool) -> Result<(Var, Vec<Var>)> {
        self.check_input(tape.value(x).shape())?;
        let vars: BTreeMap<String, Var> = self
            .params
            .iter()
            .map(|(k, t)| (k.clone(), tape.leaf(t.clone(), param_grads)))
            .collect();
        let order: Vec<Var> = vars.values().copied().collect();
        let plan = blocks(&self.config);
        let mut f = Forward {
            tape,
            vars,
            stats: &mut self.stats,
            training,
        };
        let mut h = f.conv(x, "stem.conv", 1, 1)?;
        h = f.bn(h, "stem.bn")?;
        h = f.tape.relu(h)?;
        for b in &plan {
            let p = &b.prefix;
            let mut r = f.conv(h, &format!("{p}.conv1"), b.stride, 1)?;
            r = f.bn(r, &format!("{p}.bn1"))?;
            r = f.tape.relu(r)?;
            r = f.conv(r, &format!("{p}.conv2"), 1, 1)?;
            r = f.bn(r, &format!("{p}.bn2"))?;
            let skip = if b.downsample {
                let s = f.conv(h, &format!("{p}.down.conv"), b.stride, 0)?;
                f.bn(s, &format!("{p}.down.bn"))?
            } else {
                h
            };
            let sum = f.tape.add(r, skip)?;
            h = f.tape.relu(sum)?;
        }
        let pooled = f.tape.adaptive_avg_pool2d(h, 1, 1)?;
        let shape = f.tape.value(pooled).shape().to_vec();
        let flat = f.tape.reshape(pooled, &[shape[0], shape[1]])?;
        let (w, bias) = (f.var("head.weight"), f.var("head.bias"));
        let out = f.tape.linear(flat, w, Some(bias))?;
        Ok((out, order))
    }

    /// Eval-mode embedding of a `b × c × s × s` batch; never mutates `self`.
    pub fn encode(&self, batch: &Tensor) -> Result<Tensor> {
        let mut scratch = self.clone();
        let mut tape = Tape::new();
        let x = tape.constant(batch.clone());
        let (out, _) = scratch.forward(&mut tape, x, false, false)?;
        Ok(tape.value(out).clone())
    }

    /// Eval-mode embeddings in chunks of `chunk` rows.
    pub fn encode_chunked(&self, batch: &Tensor, chunk: usize) -> Result<Tensor> {
        let b = batch.shape().first().copied().unwrap_or(0);
        let mut parts = Vec::new();
        let mut start = 0;
        while start < b {
            let end = (start + chunk.max(1)).min(b);
            parts.push(self.encode(&batch.slice_rows(start, end)?)?);
            start = end;
        }
        if parts.is_empty() {
            return Ok(Tensor::zeros(vec![0, self.config.embed_dim]));
        }
        let d = self.config.embed_dim;
        let data: Vec<f32> = parts.into_iter().flat_map(Tensor::into_data).collect();
        Ok(Tensor::new(vec![b, d], data)?)
    }

    /// Write `<path>` (JSON index) and `<path>.bin` (concatenated containers).
    pub fn save(&self, path: &Path, step: u64) -> Result<()> {
        let mut bin = Vec::new();
        let mut entries = Vec::new();
        let mut push = |name: String, t: &Tensor| -> Result<()> {
            let bytes = PimcRecord::from_tensor(t, None)?.encode()?;
            entries.push(IndexEntry {
                path: name,
                offset: bin.len() as u64,
                len: bytes.len() as u64,
                shape: t.shape().to_vec(),
            });
            bin.extend_from_slice(&bytes);
            Ok(())
        };
        for (k, t) in &self.params {
            push(k.clone(), t)?;
        }
        for (k, s) in &self.stats {
            push(format!("{k}.running_mean"), &Tensor::new(vec![s.mean.len()], s.mean.clone())?)?;
            push(format!("{k}.running_var"), &Tensor::new(vec![s.var.len()], s.var.clone())?)?;
        }
        let bin_path = bin_path(path);
        write_file(&bin_path, &bin)?;
        write_json(
            path,
            &CheckpointIndex {
                format_version: 1,
                config: self.config.clone(),
                seed: self.seed,
                step,
                tensors: bin_path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
                entries,
            },
        )
    }

    /// Inverse of [`EncoderParams::save`]; returns the recorded step.
    pub fn load(path: &Path) -> Result<(Self, u64)> {
        if !path.exists() {
            return Err(Error::io(
                path,
                std::io::Error::new(std::io::ErrorKind::NotFound, "checkpoint not found; run `pimc train` first"),
            ));
        }
        let index: CheckpointIndex = read_json(path)?;
        index.config.validate()?;
        let bin = read_file(&path.with_file_name(&index.tensors))?;
        let mut tensors = BTreeMap::new();
        for e in &index.entries {
            let end = e.offset.checked_add(e.len).filter(|&end| end as usize <= bin.len()).ok_or_else(|| {
                Error::Corruption(format!("{}: tensor {} runs past the end of the data file", path.display(), e.path))
            })?;
            let (rec, used) = PimcRecord::decode(&bin[e.offset as usize..end as usize])?;
            if used as u64 != e.len {
                return Err(Error::Corruption(format!("{}: tensor {} length mismatch", path.display(), e.path)));
            }
            tensors.insert(e.path.clone(), rec.into_tensor(Some(&e.shape))?);
        }
        let reference = init_encoder(&index.config, index.seed)?;
        let mut params = BTreeMap::new();
        for (k, t) in &reference.params {
            let got = tensors
                .remove(k)
                .ok_or_else(|| Error::Corruption(format!("{}: missing tensor {k}", path.display())))?;
            if got.shape() != t.shape() {
                return Err(Error::Corruption(format!(
                    "{}: tensor {k} has shape {:?}, config implies {:?}",
                    path.display(),
                    got.shape(),
                    t.shape()
                )));
            }
            params.insert(k.clone(), got);
        }
        let mut stats = BTreeMap::new();
        for k in reference.stats.keys() {
            let mut take = |suffix: &str| {
                tensors
                    .remove(&format!("{k}.{suffix}"))
                    .map(Tensor::into_data)
                    .ok_or_else(|| Error::Corruption(format!("{}: missing {k}.{suffix}", path.display())))
            };
            let (mean, var) = (take("running_mean")?, take("running_var")?);
            stats.insert(k.clone(), BnStats { mean, var });
        }
        if let Some(extra) = tensors.keys().next() {
            return Err(Error::Corruption(format!("{}: unexpected tensor {extra}", path.display())));
        }
        Ok((
            EncoderParams {
                config: index.config,
                seed: index.seed,
                params,
                stats,
            },
            index.step,
        ))
    }
}

fn bin_path(index: &Path) -> PathBuf {
    let mut name = index.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".bin");
    index.with_file_name(name)
}

#[derive(Serialize, Deserialize)]
struct IndexEntry {
    path: String,
    offset: u64,
    len: u64,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointIndex {
    format_version: u32,
    config: EncoderConfig,
    seed: u64,
    step: u64,
    tensors: String,
    entries: Vec<IndexEntry>,
}
