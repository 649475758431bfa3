//! The PIMC container: a fixed 64-byte header, a band-name block, a
//! timestamp block and a row-major payload. All integers little-endian.
//!
//! ```text
//! offset  size  field
//!  0      4     magic "PIMC"
//!  4      2     version (u16, currently 1)
//!  6      1     dtype (0 = f32, 1 = u16 scaled by `scale`)
//!  7      1     reserved (0)
//!  8      4     scale (f32)
//! 12     16     t, c, h, w (u32 each)
//! 28      4     nodata sentinel (f32, in raw payload units; NaN = none)
//! 32     32     zero padding
//! 64      ..    c × (u32 byte length, UTF-8 band name)
//!         ..    t × u32 days since 1970-01-01
//!         ..    t·c·h·w payload values (f32 or u16)
//! ```
//!
//! Generic tensors (series sets, plot batches, checkpoint weights) reuse the
//! layout with the shape left-padded to four dims and timestamps `0..t`.

use pimc_tensor::Tensor;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"PIMC";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DType {
    F32 = 0,
    U16 = 1,
}

impl DType {
    fn width(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::U16 => 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Payload {
    F32(Vec<f32>),
    U16(Vec<u16>),
}

impl Payload {
    pub fn len(&self) -> usize {
        match self {
            Payload::F32(v) => v.len(),
            Payload::U16(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn dtype(&self) -> DType {
        match self {
            Payload::F32(_) => DType::F32,
            Payload::U16(_) => DType::U16,
        }
    }
}

/// One decoded container.
#[derive(Clone, Debug, PartialEq)]
pub struct PimcRecord {
    pub scale: f32,
    pub nodata: f32,
    pub dims: [usize; 4],
    pub names: Vec<String>,
    pub days: Vec<u32>,
    pub payload: Payload,
}

/// Header fields only, for cheap validation.
#[derive(Clone, Debug, PartialEq)]
pub struct PimcHeader {
    pub version: u16,
    pub dtype: DType,
    pub scale: f32,
    pub dims: [usize; 4],
    pub nodata: f32,
}

impl PimcRecord {
    pub fn encode(&self) -> Result<Vec<u8>> {
        let [t, c, h, w] = self.dims;
        if self.names.len() != c {
            return Err(Error::Validation(format!("{} band names for c={c}", self.names.len())));
        }
        if self.days.len() != t {
            return Err(Error::Validation(format!("{} timestamps for t={t}", self.days.len())));
        }
        if self.payload.len() != t * c * h * w {
            return Err(Error::Validation(format!(
                "payload has {} values, dims {:?} need {}",
                self.payload.len(),
                self.dims,
                t * c * h * w
            )));
        }
        let dtype = self.payload.dtype();
        let mut out = Vec::with_capacity(HEADER_LEN + self.payload.len() * dtype.width());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(dtype as u8);
        out.push(0);
        out.extend_from_slice(&self.scale.to_le_bytes());
        for d in self.dims {
            let d = u32::try_from(d).map_err(|_| Error::Validation(format!("dimension {d} exceeds u32")))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        out.extend_from_slice(&self.nodata.to_le_bytes());
        out.resize(HEADER_LEN, 0);
        for name in &self.names {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
        }
        for d in &self.days {
            out.extend_from_slice(&d.to_le_bytes());
        }
        match &self.payload {
            Payload::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            Payload::U16(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
        Ok(out)
    }

    /// Decode one record from the front of `bytes`, returning it and the
    /// number of bytes consumed.
    pub fn decode(bytes: &[u8]) -> Result<(Self, usize)> {
        let header = decode_header(bytes)?;
        let [t, c, h, w] = header.dims;
        let mut r = Cursor { bytes, pos: HEADER_LEN };
        let mut names = Vec::with_capacity(c.min(1024));
        for _ in 0..c {
            let len = r.u32("band-name length")? as usize;
            let raw = r.take(len, "band name")?;
            names.push(
                String::from_utf8(raw.to_vec())
                    .map_err(|_| Error::Corruption("band name is not valid UTF-8".into()))?,
            );
        }
        let mut days = Vec::with_capacity(t.min(1 << 16));
        for _ in 0..t {
            days.push(r.u32("timestamp block")?);
        }
        let n = t
            .checked_mul(c)
            .and_then(|v| v.checked_mul(h))
            .and_then(|v| v.checked_mul(w))
            .ok_or_else(|| Error::Corruption(format!("dims {:?} overflow", header.dims)))?;
        let width = header.dtype.width();
        let raw = r.take(
            n.checked_mul(width)
                .ok_or_else(|| Error::Corruption("payload size overflows".into()))?,
            "payload",
        )?;
        let payload = match header.dtype {
            DType::F32 => Payload::F32(
                raw.chunks_exact(4)
                    .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                    .collect(),
            ),
            DType::U16 => Payload::U16(raw.chunks_exact(2).map(|b| u16::from_le_bytes([b[0], b[1]])).collect()),
        };
        Ok((
            PimcRecord {
                scale: header.scale,
                nodata: header.nodata,
                dims: header.dims,
                names,
                days,
                payload,
            },
            r.pos,
        ))
    }

    /// Record holding a generic tensor of rank ≤ 4.
    pub fn from_tensor(tensor: &Tensor, names: Option<Vec<String>>) -> Result<Self> {
        let dims = pad_dims(tensor.shape())?;
        let names = names.unwrap_or_else(|| (0..dims[1]).map(|i| format!("ch{i}")).collect());
        Ok(Self {
            scale: 1.0,
            nodata: f32::NAN,
            dims,
            names,
            days: (0..dims[0] as u32).collect(),
            payload: Payload::F32(tensor.data().to_vec()),
        })
    }

    /// Payload as a tensor with the given shape (or the 4-D header dims).
    pub fn into_tensor(self, shape: Option<&[usize]>) -> Result<Tensor> {
        let data = match self.payload {
            Payload::F32(v) => v,
            Payload::U16(v) => v.into_iter().map(|x| x as f32 / self.scale).collect(),
        };
        let shape = shape.map(<[usize]>::to_vec).unwrap_or_else(|| self.dims.to_vec());
        Tensor::new(shape, data).map_err(|e| Error::Corruption(e.to_string()))
    }
}

fn pad_dims(shape: &[usize]) -> Result<[usize; 4]> {
    if shape.len() > 4 {
        return Err(Error::Validation(format!("rank {} exceeds the container's 4 dims", shape.len())));
    }
    let mut dims = [1usize; 4];
    dims[4 - shape.len()..].copy_from_slice(shape);
    Ok(dims)
}

pub fn decode_header(bytes: &[u8]) -> Result<PimcHeader> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::Format("missing PIMC magic bytes".into()));
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::Corruption(format!(
            "header truncated: {} of {HEADER_LEN} bytes",
            bytes.len()
        )));
    }
    let u32_at = |o: usize| u32::from_le_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]);
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported container version {version}")));
    }
    let dtype = match bytes[6] {
        0 => DType::F32,
        1 => DType::U16,
        other => return Err(Error::Format(format!("unknown dtype code {other}"))),
    };
    let scale = f32::from_bits(u32_at(8));
    if !(scale.is_finite() && scale > 0.0) {
        return Err(Error::Format(format!("scale must be positive, got {scale}")));
    }
    let dims = [
        u32_at(12) as usize,
        u32_at(16) as usize,
        u32_at(20) as usize,
        u32_at(24) as usize,
    ];
    let nodata = f32::from_bits(u32_at(28));
    Ok(PimcHeader {
        version,
        dtype,
        scale,
        dims,
        nodata,
    })
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                Error::Corruption(format!(
                    "{what} truncated: need {n} bytes at offset {}, file has {}",
                    self.pos,
                    self.bytes.len()
                ))
            })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn write_tensor(path: &std::path::Path, tensor: &Tensor, names: Option<Vec<String>>) -> Result<()> {
    let bytes = PimcRecord::from_tensor(tensor, names)?.encode()?;
    crate::error::write_file(path, &bytes)
}

/// Read a generic tensor file; the result has the header's 4-D shape unless
/// `shape` is given.
pub fn read_tensor(path: &std::path::Path, shape: Option<&[usize]>) -> Result<Tensor> {
    let bytes = crate::error::read_file(path)?;
    let (rec, used) = PimcRecord::decode(&bytes).map_err(|e| with_path(e, path))?;
    if used != bytes.len() {
        return Err(Error::Corruption(format!(
            "{}: {} trailing bytes after payload",
            path.display(),
            bytes.len() - used
        )));
    }
    rec.into_tensor(shape).map_err(|e| with_path(e, path))
}

pub(crate) fn with_path(e: Error, path: &std::path::Path) -> Error {
    match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        Error::Corruption(m) => Error::Corruption(format!("{}: {m}", path.display())),
        Error::Validation(m) => Error::Validation(format!("{}: {m}", path.display())),
        other => other,
    }
}
