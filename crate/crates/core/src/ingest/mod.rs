mod container;
mod cube;
mod manifest;
mod synth;

pub use container::{decode_header, read_tensor, write_tensor, DType, Payload, PimcHeader, PimcRecord, HEADER_LEN, MAGIC, VERSION};
pub use cube::{
    cube_from_record, date_to_days, days_to_date, read_cube, write_cube, write_cube_u16, SitsCube, BLUE,
    DEFAULT_SCALE, GREEN, NIR, RED,
};
pub use manifest::{DatasetManifest, RegionEntry, Split, MANIFEST_VERSION};
pub use synth::{synth_cube, LabelRaster, SynthConfig};
