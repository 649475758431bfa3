use std::path::{Path, PathBuf};

use pimc_tensor::Tensor;
use serde::{Deserialize, Serialize};

use super::hilbert::Coord;
use super::indices::VegetationIndex;
use super::patches::PatchRef;
use super::sampling::SamplingMode;
use crate::error::{read_json, write_json, Error, Result};
use crate::ingest::{read_tensor, write_tensor, SitsCube, BLUE, NIR, RED};

/// Per-pixel index series for one patch: `m × 3 × n`, channels in
/// [`VegetationIndex::ALL`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct IndexSeriesSet {
    pub patch: PatchRef,
    pub ps: usize,
    pub coords: Vec<Coord>,
    pub n: usize,
    pub series: Vec<f32>,
    pub mode: SamplingMode,
    pub seed: u64,
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    patch: PatchRef,
    ps: usize,
    coords: Vec<Coord>,
    mode: SamplingMode,
    seed: u64,
}

impl IndexSeriesSet {
    pub fn m(&self) -> usize {
        self.coords.len()
    }

    /// `3 × n` block of pixel `i`.
    pub fn pixel(&self, i: usize) -> &[f32] {
        let len = 3 * self.n;
        &self.series[i * len..(i + 1) * len]
    }

    pub fn sidecar_path(path: &Path) -> PathBuf {
        path.with_extension("json")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let t = Tensor::new(vec![self.m(), 3, 1, self.n], self.series.clone())?;
        let names = VegetationIndex::ALL.iter().map(|v| v.name().to_string()).collect();
        write_tensor(path, &t, Some(names))?;
        write_json(
            &Self::sidecar_path(path),
            &Sidecar {
                patch: self.patch.clone(),
                ps: self.ps,
                coords: self.coords.clone(),
                mode: self.mode,
                seed: self.seed,
            },
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        let side: Sidecar = read_json(&Self::sidecar_path(path))?;
        let t = read_tensor(path, None)?;
        let &[m, c, 1, n] = t.shape() else {
            return Err(Error::Corruption(format!("{}: unexpected series rank", path.display())));
        };
        if c != 3 || m != side.coords.len() {
            return Err(Error::Corruption(format!(
                "{}: series shape {:?} disagrees with {} sidecar coords",
                path.display(),
                t.shape(),
                side.coords.len()
            )));
        }
        Ok(Self {
            patch: side.patch,
            ps: side.ps,
            coords: side.coords,
            n,
            series: t.into_data(),
            mode: side.mode,
            seed: side.seed,
        })
    }
}

/// Compute NDVI/EVI/SAVI over time for each patch-relative coordinate.
pub fn build_series(
    cube: &SitsCube,
    patch: &PatchRef,
    ps: usize,
    coords: &[Coord],
    mode: SamplingMode,
    seed: u64,
) -> Result<IndexSeriesSet> {
    let (red, nir, blue) = (cube.band_index(RED)?, cube.band_index(NIR)?, cube.band_index(BLUE)?);
    let n = cube.t();
    let mut series = Vec::with_capacity(coords.len() * 3 * n);
    for c in coords {
        let (y, x) = (patch.row + c.y as usize, patch.col + c.x as usize);
        if c.x as usize >= ps || c.y as usize >= ps || y >= cube.height || x >= cube.width {
            return Err(Error::Domain(format!(
                "pixel ({}, {}) outside patch at ({}, {}) of size {ps}",
                c.x, c.y, patch.row, patch.col
            )));
        }
        for vi in VegetationIndex::ALL {
            series.extend((0..n).map(|t| vi.compute(cube.get(t, nir, y, x), cube.get(t, red, y, x), cube.get(t, blue, y, x))));
        }
    }
    Ok(IndexSeriesSet {
        patch: patch.clone(),
        ps,
        coords: coords.to_vec(),
        n,
        series,
        mode,
        seed,
    })
}
