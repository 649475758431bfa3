//! Extraction of plots from cubes and assembly of image/plot pairs.

use log::warn;
use pimc_tensor::Tensor;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{LabelRaster, SitsCube};
use crate::pipeline::{
    build_series, sample_pixels, sample_random_excluding, slice_patches, IndexSeriesSet, PatchRef, SamplingMode,
};
use crate::representation::{resize_bilinear, resize_rp, stack_channels, RpBatch, RpSource};
use crate::rng::{derive_seed, stream_rng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtractConfig {
    pub ps: usize,
    /// Pixels sampled per patch.
    pub pixels: usize,
    /// Leading timestamps kept per series; `None` keeps the whole cube.
    pub series_len: Option<usize>,
    /// Side of the stored plots.
    pub plot_size: usize,
    pub mode: SamplingMode,
}

impl Default for ExtractConfig {
    fn default() -> Self {
        Self {
            ps: 32,
            pixels: 150,
            series_len: None,
            plot_size: 64,
            mode: SamplingMode::Hilbert,
        }
    }
}

/// Keep the first `n` timestamps of a cube.
pub fn truncate_cube(cube: &SitsCube, n: usize) -> Result<SitsCube> {
    if n < 2 || n > cube.t() {
        return Err(Error::Config(format!("series length {n} outside [2, {}]", cube.t())));
    }
    let plane = cube.c() * cube.height * cube.width;
    SitsCube::new(
        cube.region_id.clone(),
        cube.timestamps[..n].to_vec(),
        cube.bands.clone(),
        cube.height,
        cube.width,
        cube.data[..n * plane].to_vec(),
    )
}

/// Sample pixels in every patch of `cube`, build their index series, and
/// plot them at `plot_size`. Per-patch sampling seeds derive from `seed` and
/// the patch position.
pub fn extract_region(cube: &SitsCube, cfg: &ExtractConfig, seed: u64) -> Result<(Vec<IndexSeriesSet>, RpBatch)> {
    let cube = match cfg.series_len {
        Some(n) if n != cube.t() => truncate_cube(cube, n)?,
        _ => cube.clone(),
    };
    let grid = slice_patches(&cube, cfg.ps)?;
    let mut sets = Vec::with_capacity(grid.patches.len());
    let mut plots = RpBatch::new(cfg.plot_size);
    for (i, patch) in grid.patches.iter().enumerate() {
        let pseed = derive_seed(seed, &cube.region_id, i as u64);
        let coords = sample_pixels(cfg.ps, cfg.mode, cfg.pixels, pseed)?;
        let set = build_series(&cube, patch, cfg.ps, &coords, cfg.mode, pseed)?;
        push_plots(&set, &mut plots)?;
        sets.push(set);
    }
    Ok((sets, plots))
}

/// Random pixels per patch that avoid the Hilbert cells `hilbert_pixels`
/// would pick, for evaluation on pixels unseen in pretraining.
pub fn extract_eval_region(
    cube: &SitsCube,
    cfg: &ExtractConfig,
    hilbert_pixels: usize,
    eval_pixels: usize,
    seed: u64,
) -> Result<(Vec<IndexSeriesSet>, RpBatch)> {
    let cube = match cfg.series_len {
        Some(n) if n != cube.t() => truncate_cube(cube, n)?,
        _ => cube.clone(),
    };
    let grid = slice_patches(&cube, cfg.ps)?;
    let exclude = sample_pixels(cfg.ps, SamplingMode::Hilbert, hilbert_pixels, 0)?;
    let mut sets = Vec::with_capacity(grid.patches.len());
    let mut plots = RpBatch::new(cfg.plot_size);
    for (i, patch) in grid.patches.iter().enumerate() {
        let pseed = derive_seed(seed, &format!("eval-{}", cube.region_id), i as u64);
        let coords = sample_random_excluding(cfg.ps, eval_pixels, pseed, &exclude)?;
        let set = build_series(&cube, patch, cfg.ps, &coords, SamplingMode::Random, pseed)?;
        push_plots(&set, &mut plots)?;
        sets.push(set);
    }
    Ok((sets, plots))
}

fn push_plots(set: &IndexSeriesSet, plots: &mut RpBatch) -> Result<()> {
    for j in 0..set.m() {
        let rp = resize_rp(&stack_channels(set, j)?, plots.size)?;
        plots.push(
            &rp,
            RpSource {
                region_id: set.patch.region_id.clone(),
                row: set.patch.row,
                col: set.patch.col,
                coord: set.coords[j],
            },
        )?;
    }
    Ok(())
}

/// Label of each stored plot's pixel.
pub fn plot_labels(plots: &RpBatch, labels: &LabelRaster) -> Vec<u16> {
    plots
        .sources
        .iter()
        .map(|s| labels.get(s.row + s.coord.y as usize, s.col + s.coord.x as usize))
        .collect()
}

#[derive(Clone, Debug)]
struct PatchEntry {
    cube: usize,
    row: usize,
    col: usize,
    plots: Vec<usize>,
}

/// Patches of one or more cubes, each with the plots of its sampled pixels.
#[derive(Clone, Debug)]
pub struct PairDataset {
    cubes: Vec<SitsCube>,
    patches: Vec<PatchEntry>,
    plots: RpBatch,
    ps: usize,
    image_size: usize,
}

/// Aligned image and plot batches; row `i` of both comes from patch `patch_ids[i]`.
#[derive(Clone, Debug)]
pub struct PairBatch {
    pub images: Tensor,
    pub plots: Tensor,
    pub patch_ids: Vec<usize>,
    pub timestamps: Vec<usize>,
}

impl PairDataset {
    /// Group `plots` by source patch. `image_size` is the side RGB crops are
    /// resized to.
    pub fn new(cubes: Vec<SitsCube>, plots: RpBatch, ps: usize, image_size: usize) -> Result<Self> {
        let mut patches: Vec<PatchEntry> = Vec::new();
        let mut index = std::collections::BTreeMap::new();
        for (i, src) in plots.sources.iter().enumerate() {
            let cube = cubes
                .iter()
                .position(|c| c.region_id == src.region_id)
                .ok_or_else(|| Error::Validation(format!("plot refers to unknown region {:?}", src.region_id)))?;
            if src.row + ps > cubes[cube].height || src.col + ps > cubes[cube].width {
                return Err(Error::Validation(format!(
                    "patch ({}, {}) of size {ps} outside region {:?}",
                    src.row, src.col, src.region_id
                )));
            }
            let key = (cube, src.row, src.col);
            let at = *index.entry(key).or_insert_with(|| {
                patches.push(PatchEntry {
                    cube,
                    row: src.row,
                    col: src.col,
                    plots: Vec::new(),
                });
                patches.len() - 1
            });
            patches[at].plots.push(i);
        }
        if patches.is_empty() {
            return Err(Error::Validation("pair dataset has no patches".into()));
        }
        Ok(Self {
            cubes,
            patches,
            plots,
            ps,
            image_size,
        })
    }

    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    pub fn plot_size(&self) -> usize {
        self.plots.size
    }

    pub fn image_size(&self) -> usize {
        self.image_size
    }

    pub fn patch_ref(&self, id: usize) -> PatchRef {
        let p = &self.patches[id];
        PatchRef {
            region_id: self.cubes[p.cube].region_id.clone(),
            row: p.row,
            col: p.col,
        }
    }

    /// RGB crop of patch `id` at timestamp `t`, resized to the image size.
    pub fn image(&self, id: usize, t: usize) -> Result<Vec<f32>> {
        let p = &self.patches[id];
        let crop = self.cubes[p.cube].rgb_patch(t, p.row, p.col, self.ps)?;
        Ok(resize_bilinear(&crop, 3, self.ps, self.ps, self.image_size, self.image_size))
    }

    fn assemble(&self, picks: &[(usize, usize, usize)]) -> Result<PairBatch> {
        let (s, ps) = (self.image_size, self.plots.size);
        let mut images = Vec::with_capacity(picks.len() * 3 * s * s);
        let mut plots = Vec::with_capacity(picks.len() * 3 * ps * ps);
        for &(id, plot, t) in picks {
            images.extend(self.image(id, t)?);
            plots.extend_from_slice(self.plots.image(plot));
        }
        Ok(PairBatch {
            images: Tensor::new(vec![picks.len(), 3, s, s], images)?,
            plots: Tensor::new(vec![picks.len(), 3, ps, ps], plots)?,
            patch_ids: picks.iter().map(|p| p.0).collect(),
            timestamps: picks.iter().map(|p| p.2).collect(),
        })
    }

    /// One `(patch, plot, timestamp)` draw per patch, in shuffled order.
    fn draw(&self, rng: &mut impl Rng, ids: &mut [usize]) -> Vec<(usize, usize, usize)> {
        ids.shuffle(rng);
        ids.iter()
            .map(|&id| {
                let p = &self.patches[id];
                let plot = p.plots[rng.random_range(0..p.plots.len())];
                let t = rng.random_range(0..self.cubes[p.cube].t());
                (id, plot, t)
            })
            .collect()
    }

    /// `limit` pairs from distinct patches, fixed by `seed`.
    pub fn fixed_pairs(&self, seed: u64, limit: usize) -> Result<PairBatch> {
        let mut rng = stream_rng(seed, "fixed-pairs", 0);
        let mut ids: Vec<usize> = (0..self.len()).collect();
        let mut picks = self.draw(&mut rng, &mut ids);
        if picks.len() < limit {
            warn!("requested {limit} pairs but only {} patches exist", picks.len());
        }
        picks.truncate(limit);
        self.assemble(&picks)
    }
}

/// All batches of one epoch: patches shuffled under `(seed, epoch)`, one
/// random pixel plot and one random timestamp per patch, so no patch repeats
/// within a batch. A trailing batch with fewer than two pairs has no
/// negatives and is dropped.
pub fn make_pair_batches(dataset: &PairDataset, batch_size: usize, seed: u64, epoch: u64) -> Result<Vec<PairBatch>> {
    if batch_size < 2 {
        return Err(Error::Config(format!("batch size must be >= 2, got {batch_size}")));
    }
    let mut rng = stream_rng(seed, "epoch", epoch);
    let mut ids: Vec<usize> = (0..dataset.len()).collect();
    let picks = dataset.draw(&mut rng, &mut ids);
    if dataset.len() < batch_size {
        warn!("{} patches is fewer than the batch size {batch_size}", dataset.len());
    }
    let mut out = Vec::new();
    for chunk in picks.chunks(batch_size) {
        if chunk.len() < 2 {
            warn!("dropping a final batch of {} pair", chunk.len());
            continue;
        }
        out.push(dataset.assemble(chunk)?);
    }
    Ok(out)
}
