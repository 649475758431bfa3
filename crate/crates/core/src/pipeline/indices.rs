use serde::{Deserialize, Serialize};

/// Denominator guard shared by all indices.
pub const INDEX_EPS: f32 = 1e-8;

#[inline]
fn guarded(den: f32) -> f32 {
    if den.abs() < INDEX_EPS {
        INDEX_EPS.copysign(den)
    } else {
        den
    }
}

/// (NIR − R) / (NIR + R)
#[inline]
pub fn ndvi(nir: f32, red: f32) -> f32 {
    (nir - red) / guarded(nir + red)
}

/// 2.5 (NIR − R) / (NIR + 6R − 7.5B + 1), clamped to [−2, 2].
#[inline]
pub fn evi(nir: f32, red: f32, blue: f32) -> f32 {
    (2.5 * (nir - red) / guarded(nir + 6.0 * red - 7.5 * blue + 1.0)).clamp(-2.0, 2.0)
}

/// 1.5 (NIR − R) / (NIR + R + 0.5)
#[inline]
pub fn savi(nir: f32, red: f32) -> f32 {
    1.5 * (nir - red) / guarded(nir + red + 0.5)
}

/// Index registry. Channel order of every series and plot follows `ALL`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VegetationIndex {
    Ndvi,
    Evi,
    Savi,
}

impl VegetationIndex {
    pub const ALL: [VegetationIndex; 3] = [Self::Ndvi, Self::Evi, Self::Savi];

    pub fn name(self) -> &'static str {
        match self {
            Self::Ndvi => "ndvi",
            Self::Evi => "evi",
            Self::Savi => "savi",
        }
    }

    #[inline]
    pub fn compute(self, nir: f32, red: f32, blue: f32) -> f32 {
        match self {
            Self::Ndvi => ndvi(nir, red),
            Self::Evi => evi(nir, red, blue),
            Self::Savi => savi(nir, red),
        }
    }
}
