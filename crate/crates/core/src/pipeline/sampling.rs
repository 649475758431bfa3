use std::collections::BTreeSet;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use super::hilbert::{hilbert_order, Coord};
use crate::error::{Error, Result};
use crate::rng::stream_rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplingMode {
    Hilbert,
    Random,
}

impl std::str::FromStr for SamplingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hilbert" => Ok(Self::Hilbert),
            "random" => Ok(Self::Random),
            other => Err(Error::Config(format!("unknown sampling mode {other:?}"))),
        }
    }
}

fn check_count(ps: usize, m: usize, available: usize) -> Result<()> {
    if m == 0 {
        return Err(Error::Domain("pixel count must be positive".into()));
    }
    if m > available {
        return Err(Error::Domain(format!(
            "cannot sample {m} pixels from a {ps}x{ps} patch with {available} eligible cells"
        )));
    }
    Ok(())
}

/// `m` patch-relative pixels. Hilbert mode walks the curve with stride
/// `⌊ps²/m⌋`; random mode draws `m` distinct cells under `seed`.
pub fn sample_pixels(ps: usize, mode: SamplingMode, m: usize, seed: u64) -> Result<Vec<Coord>> {
    let order = hilbert_order(ps)?;
    check_count(ps, m, order.len())?;
    Ok(match mode {
        SamplingMode::Hilbert => {
            let stride = order.len() / m;
            order.into_iter().step_by(stride).take(m).collect()
        }
        SamplingMode::Random => {
            let mut rng = stream_rng(seed, "sample-pixels", 0);
            index::sample(&mut rng, order.len(), m)
                .into_iter()
                .map(|i| Coord::new(i % ps, i / ps))
                .collect()
        }
    })
}

/// Random-mode sampling restricted to cells outside `exclude`, used to keep
/// evaluation pixels disjoint from pretraining pixels.
pub fn sample_random_excluding(ps: usize, m: usize, seed: u64, exclude: &[Coord]) -> Result<Vec<Coord>> {
    if ps < 2 {
        return Err(Error::Domain(format!("patch size must be >= 2, got {ps}")));
    }
    let taken: BTreeSet<Coord> = exclude.iter().copied().collect();
    let eligible: Vec<Coord> = (0..ps * ps)
        .map(|i| Coord::new(i % ps, i / ps))
        .filter(|c| !taken.contains(c))
        .collect();
    check_count(ps, m, eligible.len())?;
    let mut rng = stream_rng(seed, "sample-pixels-excluding", 0);
    Ok(index::sample(&mut rng, eligible.len(), m)
        .into_iter()
        .map(|i| eligible[i])
        .collect())
}
