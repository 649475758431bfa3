//! Synthetic SITS generator used as the test substrate.
//!
//! The raster is tiled into square fields. Each field draws a class and three
//! latent values. The class fixes the base frequency and phase of a
//! vegetation cycle (NIR up, red down) and the orientation of a static grating
//! in the green band. The latents, scaled by `jitter`, shift the cycle's phase
//! and frequency and the blue-band phase on the series side, and the green
//! mean, grating contrast and grating frequency on the image side, so a field
//! is identifiable from either modality. An optional distractor mixes a
//! second cycle with per-pixel frequency and phase into the vegetation signal.
//! With `jitter = 0`, `noise = 0` and no distractor, every pixel of a class
//! carries the same exact sinusoids.

use std::f32::consts::PI;
use std::path::Path;

use chrono::NaiveDate;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::container::{read_tensor, write_tensor};
use super::cube::{SitsCube, BLUE, GREEN, NIR, RED};
use crate::error::{Error, Result};
use crate::rng::stream_rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub classes: usize,
    pub timesteps: usize,
    pub height: usize,
    pub width: usize,
    /// Standard deviation of per-sample reflectance noise, clipped at ±3σ.
    pub noise: f32,
    /// Scale of the per-field latent variation in [0, 1].
    pub jitter: f32,
    /// Amplitude of a per-pixel vegetation cycle with random frequency and
    /// phase, added on top of the field cycle.
    pub distractor: f32,
    pub field_size: usize,
    pub start: NaiveDate,
    pub cadence_days: u32,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            classes: 4,
            timesteps: 32,
            height: 64,
            width: 64,
            noise: 0.02,
            jitter: 1.0,
            distractor: 0.0,
            field_size: 16,
            start: NaiveDate::from_ymd_opt(2019, 1, 1).expect("valid date"),
            cadence_days: 5,
        }
    }
}

/// Per-pixel class ids.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelRaster {
    pub height: usize,
    pub width: usize,
    pub labels: Vec<u16>,
}

impl LabelRaster {
    pub fn get(&self, y: usize, x: usize) -> u16 {
        self.labels[y * self.width + x]
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let t = pimc_tensor::Tensor::new(
            vec![1, 1, self.height, self.width],
            self.labels.iter().map(|&l| l as f32).collect(),
        )?;
        write_tensor(path, &t, Some(vec!["label".into()]))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let t = read_tensor(path, None)?;
        let [_, _, h, w] = t.shape()[..] else {
            return Err(Error::Corruption(format!("{}: label raster is not 4-D", path.display())));
        };
        let labels = t
            .data()
            .iter()
            .map(|&v| {
                if v >= 0.0 && v <= u16::MAX as f32 && v.fract() == 0.0 {
                    Ok(v as u16)
                } else {
                    Err(Error::Corruption(format!("{}: label value {v}", path.display())))
                }
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            height: h,
            width: w,
            labels,
        })
    }

    /// Majority label inside a square window (ties go to the lower id).
    pub fn majority(&self, row: usize, col: usize, size: usize) -> u16 {
        let mut counts = std::collections::BTreeMap::new();
        for y in row..(row + size).min(self.height) {
            for x in col..(col + size).min(self.width) {
                *counts.entry(self.get(y, x)).or_insert(0usize) += 1;
            }
        }
        counts
            .into_iter()
            .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
            .map_or(0, |(l, _)| l)
    }
}

#[derive(Clone, Copy, Debug)]
struct Field {
    class: usize,
    latent: [f32; 3],
    grating_offset: f32,
}

/// Class-frequency spacing; keeps the highest class below ~6 cycles per series.
fn spacing(classes: usize) -> f32 {
    (5.0 / (classes.saturating_sub(1)).max(1) as f32).min(1.0)
}

/// Noise-free vegetation cycle value in [-1, 1] at step `i` of `t`.
fn vegetation_cycle(classes: usize, f: &Field, i: usize, t: usize) -> f32 {
    let sp = spacing(classes);
    let freq = 1.0 + f.class as f32 * sp + 0.6 * sp * f.latent[2];
    let phase = 2.0 * PI * f.class as f32 / classes as f32 + 0.8 * PI * f.latent[0];
    (2.0 * PI * freq * i as f32 / t as f32 + phase).sin()
}

fn blue_cycle(f: &Field, i: usize, t: usize) -> f32 {
    (2.0 * PI * 1.5 * i as f32 / t as f32 + 2.0 * PI * f.latent[1]).sin()
}

fn green_texture(classes: usize, f: &Field, y: usize, x: usize) -> f32 {
    let theta = PI * f.class as f32 / classes as f32;
    let proj = x as f32 * theta.cos() + y as f32 * theta.sin();
    let freq = 0.12 + 0.2 * f.latent[2];
    let contrast = 0.05 + 0.2 * f.latent[1];
    0.15 + 0.35 * f.latent[0] + contrast * (2.0 * PI * freq * proj + f.grating_offset).sin()
}

/// Generate a cube and its label raster, deterministic under `seed`.
pub fn synth_cube(seed: u64, region_id: &str, config: &SynthConfig) -> Result<(SitsCube, LabelRaster)> {
    let SynthConfig {
        classes: k,
        timesteps: t,
        height: h,
        width: w,
        noise,
        jitter,
        distractor,
        field_size,
        ..
    } = *config;
    if k < 2 {
        return Err(Error::Domain(format!("need at least 2 classes, got {k}")));
    }
    if t < 8 {
        return Err(Error::Domain(format!("need at least 8 timesteps, got {t}")));
    }
    if h == 0 || w == 0 || field_size == 0 {
        return Err(Error::Domain("height, width and field size must be positive".into()));
    }
    if !(0.0..=4.0).contains(&distractor) {
        return Err(Error::Domain(format!("distractor amplitude {distractor} out of range")));
    }
    if !(0.0..=1.0).contains(&jitter) || !(noise >= 0.0 && noise.is_finite()) {
        return Err(Error::Domain(format!("jitter {jitter} or noise {noise} out of range")));
    }
    let fields_y = h.div_ceil(field_size);
    let fields_x = w.div_ceil(field_size);
    let mut rng = stream_rng(seed, "synth-fields", 0);
    let fields: Vec<Field> = (0..fields_y * fields_x)
        .map(|_| Field {
            class: rng.random_range(0..k),
            latent: [
                jitter * rng.random::<f32>(),
                jitter * rng.random::<f32>(),
                jitter * rng.random::<f32>(),
            ],
            grating_offset: rng.random_range(0.0..2.0 * PI),
        })
        .collect();
    let field_at = |y: usize, x: usize| &fields[(y / field_size) * fields_x + x / field_size];

    let bands = [BLUE, GREEN, RED, NIR];
    let c = bands.len();
    let mut data = vec![0.0f32; t * c * h * w];
    let normal = Normal::new(0.0f32, noise.max(f32::MIN_POSITIVE)).map_err(|e| Error::Domain(e.to_string()))?;
    let mut noise_rng = stream_rng(seed, "synth-noise", 0);
    let mut jitter_sample = || {
        if noise == 0.0 {
            0.0
        } else {
            normal.sample(&mut noise_rng).clamp(-3.0 * noise, 3.0 * noise)
        }
    };
    let top = 1.0 + (k - 1) as f32 * spacing(k) + 0.6 * spacing(k);
    let mut pixel_rng = stream_rng(seed, "synth-distractor", 0);
    let pixel_cycles: Vec<(f32, f32)> = (0..if distractor > 0.0 { h * w } else { 0 })
        .map(|_| (pixel_rng.random_range(1.0..top), pixel_rng.random_range(0.0..2.0 * PI)))
        .collect();
    for ti in 0..t {
        for y in 0..h {
            for x in 0..w {
                let f = field_at(y, x);
                let mut veg = vegetation_cycle(k, f, ti, t);
                if distractor > 0.0 {
                    let (pf, pp) = pixel_cycles[y * w + x];
                    veg = (veg + distractor * (2.0 * PI * pf * ti as f32 / t as f32 + pp).sin()) / (1.0 + distractor);
                }
                let values = [
                    0.06 + 0.03 * blue_cycle(f, ti, t),
                    green_texture(k, f, y, x),
                    0.12 - 0.06 * veg,
                    0.35 + 0.2 * veg,
                ];
                for (ci, v) in values.into_iter().enumerate() {
                    data[((ti * c + ci) * h + y) * w + x] = (v + jitter_sample()).clamp(0.0, 1.0);
                }
            }
        }
    }
    let timestamps = (0..t)
        .map(|i| config.start + chrono::Days::new(i as u64 * config.cadence_days as u64))
        .collect();
    let cube = SitsCube::new(
        region_id,
        timestamps,
        bands.iter().map(|s| s.to_string()).collect(),
        h,
        w,
        data,
    )?;
    let labels = LabelRaster {
        height: h,
        width: w,
        labels: (0..h * w).map(|i| field_at(i / w, i % w).class as u16).collect(),
    };
    Ok((cube, labels))
}
