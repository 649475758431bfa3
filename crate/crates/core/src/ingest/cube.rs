use std::path::Path;

use chrono::NaiveDate;

use super::container::{with_path, Payload, PimcRecord};
use crate::error::{read_file, write_file, Error, Result};

/// Default divisor for integer reflectance payloads.
pub const DEFAULT_SCALE: f32 = 10_000.0;

pub const RED: &str = "red";
pub const GREEN: &str = "green";
pub const BLUE: &str = "blue";
pub const NIR: &str = "nir";

fn epoch() -> NaiveDate {
    NaiveDate::from_ymd_opt(1970, 1, 1).expect("valid epoch")
}

pub fn date_to_days(d: NaiveDate) -> Result<u32> {
    u32::try_from((d - epoch()).num_days())
        .map_err(|_| Error::Validation(format!("date {d} precedes 1970-01-01")))
}

pub fn days_to_date(days: u32) -> NaiveDate {
    epoch() + chrono::Days::new(days as u64)
}

/// One region's multiband time series, `t × c × h × w`, reflectance in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct SitsCube {
    pub region_id: String,
    pub timestamps: Vec<NaiveDate>,
    pub bands: Vec<String>,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl SitsCube {
    pub fn new(
        region_id: impl Into<String>,
        timestamps: Vec<NaiveDate>,
        bands: Vec<String>,
        height: usize,
        width: usize,
        data: Vec<f32>,
    ) -> Result<Self> {
        let cube = Self {
            region_id: region_id.into(),
            timestamps,
            bands,
            height,
            width,
            data,
        };
        cube.validate()?;
        Ok(cube)
    }

    pub fn t(&self) -> usize {
        self.timestamps.len()
    }

    pub fn c(&self) -> usize {
        self.bands.len()
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.t(), self.c(), self.height, self.width]
    }

    pub fn validate(&self) -> Result<()> {
        if self.t() == 0 {
            return Err(Error::Validation("cube has no timestamps (t = 0)".into()));
        }
        if self.c() == 0 || self.height == 0 || self.width == 0 {
            return Err(Error::Validation(format!("degenerate cube dims {:?}", self.dims())));
        }
        if self.data.len() != self.dims().iter().product::<usize>() {
            return Err(Error::Validation(format!(
                "payload has {} values for dims {:?}",
                self.data.len(),
                self.dims()
            )));
        }
        if let Some(w) = self.timestamps.windows(2).find(|w| w[0] >= w[1]) {
            return Err(Error::Validation(format!(
                "timestamps not strictly increasing: {} then {}",
                w[0], w[1]
            )));
        }
        Ok(())
    }

    pub fn band_index(&self, name: &str) -> Result<usize> {
        self.bands
            .iter()
            .position(|b| b.eq_ignore_ascii_case(name))
            .ok_or_else(|| {
                Error::Config(format!(
                    "cube {} lacks required band {name:?} (has {:?})",
                    self.region_id, self.bands
                ))
            })
    }

    #[inline]
    pub fn offset(&self, t: usize, c: usize, y: usize, x: usize) -> usize {
        ((t * self.c() + c) * self.height + y) * self.width + x
    }

    #[inline]
    pub fn get(&self, t: usize, c: usize, y: usize, x: usize) -> f32 {
        self.data[self.offset(t, c, y, x)]
    }

    /// `3 × ps × ps` RGB crop at timestamp `t`, channel order (red, green, blue).
    pub fn rgb_patch(&self, t: usize, row: usize, col: usize, ps: usize) -> Result<Vec<f32>> {
        if row + ps > self.height || col + ps > self.width || t >= self.t() {
            return Err(Error::Domain(format!(
                "patch ({row}, {col}) size {ps} at t={t} outside cube {:?}",
                self.dims()
            )));
        }
        let idx = [self.band_index(RED)?, self.band_index(GREEN)?, self.band_index(BLUE)?];
        let mut out = Vec::with_capacity(3 * ps * ps);
        for b in idx {
            for y in row..row + ps {
                let start = self.offset(t, b, y, col);
                out.extend_from_slice(&self.data[start..start + ps]);
            }
        }
        Ok(out)
    }
}

/// Read a cube, dividing by the header scale, filling sentinel/NaN gaps by
/// linear interpolation along time, and clamping to [0, 1]. The region id is
/// the file stem.
pub fn read_cube(path: &Path) -> Result<SitsCube> {
    let bytes = read_file(path)?;
    let (rec, used) = PimcRecord::decode(&bytes).map_err(|e| with_path(e, path))?;
    if used != bytes.len() {
        return Err(Error::Corruption(format!(
            "{}: {} trailing bytes after payload",
            path.display(),
            bytes.len() - used
        )));
    }
    let region = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    cube_from_record(region, rec).map_err(|e| with_path(e, path))
}

pub fn cube_from_record(region_id: String, rec: PimcRecord) -> Result<SitsCube> {
    let [t, c, h, w] = rec.dims;
    if t == 0 {
        return Err(Error::Validation("header declares t = 0".into()));
    }
    let scale = rec.scale;
    let nodata = rec.nodata;
    let missing = |raw: f32| raw.is_nan() || (!nodata.is_nan() && raw == nodata);
    let mut data: Vec<f32> = match rec.payload {
        Payload::F32(v) => v
            .into_iter()
            .map(|raw| if missing(raw) { f32::NAN } else { raw / scale })
            .collect(),
        Payload::U16(v) => v
            .into_iter()
            .map(|raw| {
                let raw = raw as f32;
                if missing(raw) {
                    f32::NAN
                } else {
                    raw / scale
                }
            })
            .collect(),
    };
    fill_gaps(&mut data, t, c * h * w);
    for v in &mut data {
        *v = v.clamp(0.0, 1.0);
    }
    let timestamps = rec.days.iter().map(|&d| days_to_date(d)).collect();
    SitsCube::new(region_id, timestamps, rec.names, h, w, data)
}

/// Linear interpolation of NaN gaps along the leading (time) axis for each of
/// `series` interleaved series; leading/trailing gaps copy the nearest valid
/// value, all-missing series become 0.
fn fill_gaps(data: &mut [f32], t: usize, series: usize) {
    for s in 0..series {
        let at = |i: usize| i * series + s;
        let valid: Vec<usize> = (0..t).filter(|&i| !data[at(i)].is_nan()).collect();
        let (Some(&first), Some(&last)) = (valid.first(), valid.last()) else {
            for i in 0..t {
                data[at(i)] = 0.0;
            }
            continue;
        };
        for i in 0..first {
            data[at(i)] = data[at(first)];
        }
        for i in last + 1..t {
            data[at(i)] = data[at(last)];
        }
        for pair in valid.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            let (va, vb) = (data[at(a)], data[at(b)]);
            for i in a + 1..b {
                let f = (i - a) as f32 / (b - a) as f32;
                data[at(i)] = va + f * (vb - va);
            }
        }
    }
}

fn cube_record(cube: &SitsCube, payload: Payload, scale: f32, nodata: f32) -> Result<PimcRecord> {
    cube.validate()?;
    Ok(PimcRecord {
        scale,
        nodata,
        dims: cube.dims(),
        names: cube.bands.clone(),
        days: cube
            .timestamps
            .iter()
            .map(|&d| date_to_days(d))
            .collect::<Result<_>>()?,
        payload,
    })
}

/// Write a cube with an f32 payload (scale 1); reading it back is bit-exact.
pub fn write_cube(cube: &SitsCube, path: &Path) -> Result<()> {
    let rec = cube_record(cube, Payload::F32(cube.data.clone()), 1.0, f32::NAN)?;
    write_file(path, &rec.encode()?)
}

/// Write a cube quantized to u16 with the given scale; `nodata` marks
/// missing samples in raw units.
pub fn write_cube_u16(cube: &SitsCube, path: &Path, scale: f32, nodata: Option<u16>) -> Result<()> {
    let raw = cube
        .data
        .iter()
        .map(|&v| (v * scale).round().clamp(0.0, u16::MAX as f32) as u16)
        .collect();
    let rec = cube_record(cube, Payload::U16(raw), scale, nodata.map_or(f32::NAN, |n| n as f32))?;
    write_file(path, &rec.encode()?)
}
