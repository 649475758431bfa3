use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::SitsCube;

/// Origin of one patch; `row`/`col` are multiples of the grid's `ps`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PatchRef {
    pub region_id: String,
    pub row: usize,
    pub col: usize,
}

/// Non-overlapping `ps × ps` tiling; remainder rows and columns are dropped.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatchGrid {
    pub ps: usize,
    pub patches: Vec<PatchRef>,
}

pub fn slice_patches(cube: &SitsCube, ps: usize) -> Result<PatchGrid> {
    if ps < 2 {
        return Err(Error::Domain(format!("patch size must be >= 2, got {ps}")));
    }
    if ps > cube.height.min(cube.width) {
        return Err(Error::Domain(format!(
            "empty patch grid: ps {ps} exceeds cube extent {}x{}",
            cube.height, cube.width
        )));
    }
    let mut patches = Vec::with_capacity((cube.height / ps) * (cube.width / ps));
    for r in 0..cube.height / ps {
        for c in 0..cube.width / ps {
            patches.push(PatchRef {
                region_id: cube.region_id.clone(),
                row: r * ps,
                col: c * ps,
            });
        }
    }
    Ok(PatchGrid { ps, patches })
}
