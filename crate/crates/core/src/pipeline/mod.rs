mod hilbert;
mod indices;
mod patches;
mod sampling;
mod series;

pub use hilbert::{d2xy, hilbert_order, Coord};
pub use indices::{evi, ndvi, savi, VegetationIndex, INDEX_EPS};
pub use patches::{slice_patches, PatchGrid, PatchRef};
pub use sampling::{sample_pixels, sample_random_excluding, SamplingMode};
pub use series::{build_series, IndexSeriesSet};
