use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::MAX_SHIFT;

/// Search-grid step in PAN-scale pixels.
pub const GRID_STEP: f64 = 0.5;

/// Per-band shift `(dx, dy)` in PAN-scale pixels on the half-pixel grid
/// `{-3, -2.5, ..., 3}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<[f64; 2]>", into = "Vec<[f64; 2]>")]
pub struct AlignmentVector(Vec<[f64; 2]>);

impl AlignmentVector {
    pub fn new(shifts: Vec<[f64; 2]>) -> Result<Self> {
        for (b, &[dx, dy]) in shifts.iter().enumerate() {
            for v in [dx, dy] {
                if !v.is_finite() || v.abs() > MAX_SHIFT || (v / GRID_STEP).fract() != 0.0 {
                    return Err(Error::contract(format!(
                        "band {b}: shift component {v} is not on the half-pixel grid within ±{MAX_SHIFT}"
                    )));
                }
            }
        }
        Ok(AlignmentVector(shifts))
    }

    pub fn zeros(bands: usize) -> Self {
        AlignmentVector(vec![[0.0, 0.0]; bands])
    }

    pub fn bands(&self) -> usize {
        self.0.len()
    }

    /// `(dx, dy)` of band `b`.
    pub fn get(&self, b: usize) -> (f64, f64) {
        (self.0[b][0], self.0[b][1])
    }

    pub fn as_slice(&self) -> &[[f64; 2]] {
        &self.0
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|s| s[0] == 0.0 && s[1] == 0.0)
    }

    /// Largest absolute component.
    pub fn max_abs(&self) -> f64 {
        self.0.iter().flat_map(|s| [s[0].abs(), s[1].abs()]).fold(0.0, f64::max)
    }
}

impl TryFrom<Vec<[f64; 2]>> for AlignmentVector {
    type Error = Error;

    fn try_from(v: Vec<[f64; 2]>) -> Result<Self> {
        AlignmentVector::new(v)
    }
}

impl From<AlignmentVector> for Vec<[f64; 2]> {
    fn from(a: AlignmentVector) -> Self {
        a.0
    }
}

/// The 13 × 13 candidate shifts in tie-break order: by squared norm, then
/// lexicographically by `(dx, dy)`.
pub fn shift_grid() -> Vec<(f64, f64)> {
    let n = (MAX_SHIFT / GRID_STEP) as i32;
    let mut grid: Vec<(i32, i32)> = (-n..=n).flat_map(|x| (-n..=n).map(move |y| (x, y))).collect();
    grid.sort_by_key(|&(x, y)| (x * x + y * y, x, y));
    grid.into_iter()
        .map(|(x, y)| (x as f64 * GRID_STEP, y as f64 * GRID_STEP))
        .collect()
}
