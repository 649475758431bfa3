use crate::error::{Error, Result};

/// Patch-relative pixel coordinate; `y` is the row.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize)]
pub struct Coord {
    pub x: u32,
    pub y: u32,
}

impl Coord {
    pub fn new(x: usize, y: usize) -> Self {
        Self {
            x: x as u32,
            y: y as u32,
        }
    }
}

/// Distance `d` along the Hilbert curve filling an `n × n` grid (`n` a power
/// of two) to `(x, y)`.
pub fn d2xy(n: usize, d: usize) -> (usize, usize) {
    let (mut x, mut y) = (0, 0);
    let mut t = d;
    let mut s = 1;
    while s < n {
        let rx = 1 & (t / 2);
        let ry = 1 & (t ^ rx);
        if ry == 0 {
            if rx == 1 {
                x = s - 1 - x;
                y = s - 1 - y;
            }
            std::mem::swap(&mut x, &mut y);
        }
        x += s * rx;
        y += s * ry;
        t /= 4;
        s *= 2;
    }
    (x, y)
}

/// All cells of a `ps × ps` patch in Hilbert order. Non-power-of-two sides use
/// the curve of the next power of two with out-of-range cells removed.
pub fn hilbert_order(ps: usize) -> Result<Vec<Coord>> {
    if ps < 2 {
        return Err(Error::Domain(format!("hilbert order needs ps >= 2, got {ps}")));
    }
    let n = ps.next_power_of_two();
    Ok((0..n * n)
        .map(|d| d2xy(n, d))
        .filter(|&(x, y)| x < ps && y < ps)
        .map(|(x, y)| Coord::new(x, y))
        .collect())
}
