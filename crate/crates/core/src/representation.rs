//! Recurrence plots of index series and their fixed-size resampling.

use std::path::Path;

use pimc_tensor::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{read_json, write_json, Error, Result};
use crate::ingest::{read_tensor, write_tensor};
use crate::pipeline::{Coord, IndexSeriesSet, VegetationIndex};

/// `RP[i, j] = |x_i − x_j|`, row-major `n × n`.
pub fn recurrence_plot(series: &[f32]) -> Result<Vec<f32>> {
    let n = series.len();
    if n < 2 {
        return Err(Error::Domain(format!("recurrence plot needs n >= 2, got {n}")));
    }
    if series.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("recurrence plot input is not finite".into()));
    }
    let mut out = vec![0.0f32; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let d = (series[i] - series[j]).abs();
            out[i * n + j] = d;
            out[j * n + i] = d;
        }
    }
    Ok(out)
}

/// Three stacked, per-channel min-max normalized plots of one pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct RpImage {
    pub size: usize,
    pub data: Vec<f32>,
    pub coord: Coord,
    /// Per-channel `(min, max)` of the raw plot.
    pub ranges: [(f32, f32); 3],
}

impl RpImage {
    pub fn channel(&self, c: usize) -> &[f32] {
        let len = self.size * self.size;
        &self.data[c * len..(c + 1) * len]
    }
}

/// Plot pixel `i` of `set`, normalizing each channel to [0, 1]; a constant
/// channel becomes all zeros.
pub fn stack_channels(set: &IndexSeriesSet, i: usize) -> Result<RpImage> {
    stack_series(set.pixel(i), set.n, set.coords[i])
}

/// As [`stack_channels`] for a bare `3 × n` block.
pub fn stack_series(block: &[f32], n: usize, coord: Coord) -> Result<RpImage> {
    if block.len() != 3 * n {
        return Err(Error::Domain(format!("expected 3 x {n} series values, got {}", block.len())));
    }
    let mut data = Vec::with_capacity(3 * n * n);
    let mut ranges = [(0.0, 0.0); 3];
    for (c, range) in ranges.iter_mut().enumerate() {
        let mut plane = recurrence_plot(&block[c * n..(c + 1) * n])?;
        let (lo, hi) = plane
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        *range = (lo, hi);
        let span = hi - lo;
        if span > 0.0 {
            plane.iter_mut().for_each(|v| *v = (*v - lo) / span);
        } else {
            plane.fill(0.0);
        }
        data.extend(plane);
    }
    Ok(RpImage {
        size: n,
        data,
        coord,
        ranges,
    })
}

/// Bilinear resampling of a `c × h × w` image to `c × oh × ow` with
/// half-pixel centers (edge samples clamp).
pub fn resize_bilinear(src: &[f32], c: usize, h: usize, w: usize, oh: usize, ow: usize) -> Vec<f32> {
    assert_eq!(src.len(), c * h * w, "resize input length");
    if (h, w) == (oh, ow) {
        return src.to_vec();
    }
    let taps = |inp: usize, out: usize| -> Vec<(usize, usize, f32)> {
        let scale = inp as f32 / out as f32;
        (0..out)
            .map(|o| {
                let pos = ((o as f32 + 0.5) * scale - 0.5).max(0.0);
                let lo = (pos.floor() as usize).min(inp - 1);
                let hi = (lo + 1).min(inp - 1);
                (lo, hi, pos - lo as f32)
            })
            .collect()
    };
    let ys = taps(h, oh);
    let xs = taps(w, ow);
    let mut out = Vec::with_capacity(c * oh * ow);
    for plane in src.chunks_exact(h * w) {
        for &(y0, y1, fy) in &ys {
            for &(x0, x1, fx) in &xs {
                let top = plane[y0 * w + x0] * (1.0 - fx) + plane[y0 * w + x1] * fx;
                let bot = plane[y1 * w + x0] * (1.0 - fx) + plane[y1 * w + x1] * fx;
                out.push(top * (1.0 - fy) + bot * fy);
            }
        }
    }
    out
}

pub fn resize_rp(rp: &RpImage, s: usize) -> Result<RpImage> {
    if s < 8 {
        return Err(Error::Domain(format!("resize target must be >= 8, got {s}")));
    }
    Ok(RpImage {
        size: s,
        data: resize_bilinear(&rp.data, 3, rp.size, rp.size, s, s),
        coord: rp.coord,
        ranges: rp.ranges,
    })
}

/// Where one stored plot came from.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RpSource {
    pub region_id: String,
    pub row: usize,
    pub col: usize,
    pub coord: Coord,
}

/// A batch of equally sized plots, stored as one `b × 3 × s × s` container
/// (channels ndvi, evi, savi) plus a JSON sidecar of sources.
#[derive(Clone, Debug, PartialEq)]
pub struct RpBatch {
    pub size: usize,
    pub data: Vec<f32>,
    pub sources: Vec<RpSource>,
}

impl RpBatch {
    pub fn new(size: usize) -> Self {
        Self {
            size,
            data: Vec::new(),
            sources: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.sources.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sources.is_empty()
    }

    pub fn push(&mut self, rp: &RpImage, source: RpSource) -> Result<()> {
        if rp.size != self.size {
            return Err(Error::Domain(format!("plot size {} in batch of size {}", rp.size, self.size)));
        }
        self.data.extend_from_slice(&rp.data);
        self.sources.push(source);
        Ok(())
    }

    pub fn image(&self, i: usize) -> &[f32] {
        let len = 3 * self.size * self.size;
        &self.data[i * len..(i + 1) * len]
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let t = Tensor::new(vec![self.len(), 3, self.size, self.size], self.data.clone())?;
        let names = VegetationIndex::ALL.iter().map(|v| v.name().to_string()).collect();
        write_tensor(path, &t, Some(names))?;
        write_json(&path.with_extension("json"), &self.sources)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let sources: Vec<RpSource> = read_json(&path.with_extension("json"))?;
        let t = read_tensor(path, None)?;
        let &[b, 3, s, s2] = t.shape() else {
            return Err(Error::Corruption(format!("{}: plot batch shape {:?}", path.display(), t.shape())));
        };
        if s != s2 || b != sources.len() {
            return Err(Error::Corruption(format!(
                "{}: plot batch shape {:?} with {} sources",
                path.display(),
                t.shape(),
                sources.len()
            )));
        }
        Ok(Self {
            size: s,
            data: t.into_data(),
            sources,
        })
    }
}
