//! Raster data model, file I/O and the fixed (non-learned) signal processing:
//! 23-tap interpolation, MTF-matched filtering, decimation, subpixel shifts
//! and synthetic scene generation.

mod filter;
mod interp;
pub mod io;
mod sensor;
mod shift;
pub mod synth;

use crate::error::{Error, Result};
use crate::tensor::DiffTensor;

pub use filter::{gaussian_kernel, lowpass_pan, mtf_downscale, mtf_kernels, mtf_sigma};
pub use interp::{upsample_poly23, POLY23_TAPS};
pub use io::{load_raster, save_raster, RasterHeader, DTYPE};
pub use sensor::SensorSpec;
pub(crate) use shift::valid_range;
pub use shift::{shift_subpixel, MAX_SHIFT};
pub use synth::{make_synthetic_scene, LandCover, SceneConfig, SceneLayout, SceneRecord, SyntheticScene};

/// B-band real raster stored band-sequential (`band, row, col`).
#[derive(Clone, Debug, PartialEq)]
pub struct Raster {
    bands: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
    range: (f64, f64),
}

/// Multispectral rasters are plain [`Raster`]s.
pub type MultispectralRaster = Raster;

impl Raster {
    pub fn new(bands: usize, height: usize, width: usize, data: Vec<f64>, range: (f64, f64)) -> Result<Self> {
        if bands == 0 || height == 0 || width == 0 {
            return Err(Error::contract(format!("empty raster {bands}x{height}x{width}")));
        }
        if data.len() != bands * height * width {
            return Err(Error::contract(format!(
                "raster {bands}x{height}x{width} needs {} values, got {}",
                bands * height * width,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::contract(format!("non-finite raster value at element {i}")));
        }
        Ok(Raster {
            bands,
            height,
            width,
            data,
            range,
        })
    }

    pub fn filled(bands: usize, height: usize, width: usize, value: f64, range: (f64, f64)) -> Result<Self> {
        Self::new(bands, height, width, vec![value; bands * height * width], range)
    }

    pub fn from_bands(planes: Vec<Vec<f64>>, height: usize, width: usize, range: (f64, f64)) -> Result<Self> {
        let bands = planes.len();
        Self::new(bands, height, width, planes.concat(), range)
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn radiometric_range(&self) -> (f64, f64) {
        self.range
    }

    pub fn set_radiometric_range(&mut self, range: (f64, f64)) {
        self.range = range;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn band(&self, b: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[b * n..(b + 1) * n]
    }

    pub fn band_mut(&mut self, b: usize) -> &mut [f64] {
        let n = self.height * self.width;
        &mut self.data[b * n..(b + 1) * n]
    }

    pub fn get(&self, b: usize, i: usize, j: usize) -> f64 {
        self.data[(b * self.height + i) * self.width + j]
    }

    /// Single band as its own raster.
    pub fn extract_band(&self, b: usize) -> Raster {
        Raster {
            bands: 1,
            height: self.height,
            width: self.width,
            data: self.band(b).to_vec(),
            range: self.range,
        }
    }

    /// Spatial window `[row, row+height) x [col, col+width)` of every band.
    pub fn crop(&self, row: usize, col: usize, height: usize, width: usize) -> Result<Raster> {
        if height == 0 || width == 0 || row + height > self.height || col + width > self.width {
            return Err(Error::contract(format!(
                "crop {row},{col} {height}x{width} outside {}x{}",
                self.height, self.width
            )));
        }
        let mut data = Vec::with_capacity(self.bands * height * width);
        for b in 0..self.bands {
            let plane = self.band(b);
            for i in row..row + height {
                data.extend_from_slice(&plane[i * self.width + col..i * self.width + col + width]);
            }
        }
        Raster::new(self.bands, height, width, data, self.range)
    }

    /// `(1, bands, height, width)` untracked tensor.
    pub fn to_tensor(&self) -> DiffTensor {
        DiffTensor::new([1, self.bands, self.height, self.width], self.data.clone())
            .expect("raster dimensions are non-zero")
    }

    /// Inverse of [`Raster::to_tensor`] for batch size 1.
    pub fn from_tensor(t: &DiffTensor, range: (f64, f64)) -> Result<Raster> {
        let [n, c, h, w] = t.shape();
        if n != 1 {
            return Err(Error::contract(format!("raster from tensor with batch {n}")));
        }
        Raster::new(c, h, w, t.to_vec(), range)
    }

    pub fn band_mean(&self, b: usize) -> f64 {
        let p = self.band(b);
        p.iter().sum::<f64>() / p.len() as f64
    }
}

/// Single-band high-resolution panchromatic raster.
#[derive(Clone, Debug, PartialEq)]
pub struct PanRaster(Raster);

impl PanRaster {
    pub fn new(height: usize, width: usize, data: Vec<f64>, range: (f64, f64)) -> Result<Self> {
        Raster::new(1, height, width, data, range).map(PanRaster)
    }

    pub fn from_raster(r: Raster) -> Result<Self> {
        if r.bands != 1 {
            return Err(Error::contract(format!("PAN raster must have 1 band, got {}", r.bands)));
        }
        Ok(PanRaster(r))
    }

    pub fn as_raster(&self) -> &Raster {
        &self.0
    }

    pub fn into_raster(self) -> Raster {
        self.0
    }

    pub fn height(&self) -> usize {
        self.0.height
    }

    pub fn width(&self) -> usize {
        self.0.width
    }

    pub fn dims(&self) -> (usize, usize) {
        self.0.dims()
    }

    pub fn values(&self) -> &[f64] {
        &self.0.data
    }

    pub fn radiometric_range(&self) -> (f64, f64) {
        self.0.range
    }

    pub fn crop(&self, row: usize, col: usize, height: usize, width: usize) -> Result<PanRaster> {
        self.0.crop(row, col, height, width).map(PanRaster)
    }

    pub fn to_tensor(&self) -> DiffTensor {
        self.0.to_tensor()
    }
}

/// Per-pixel validity flags, laid out like a [`Raster`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ValidityMask {
    bands: usize,
    height: usize,
    width: usize,
    valid: Vec<bool>,
}

impl ValidityMask {
    pub fn all_valid(bands: usize, height: usize, width: usize) -> Self {
        ValidityMask {
            bands,
            height,
            width,
            valid: vec![true; bands * height * width],
        }
    }

    pub fn from_flags(bands: usize, height: usize, width: usize, valid: Vec<bool>) -> Result<Self> {
        if valid.len() != bands * height * width {
            return Err(Error::contract("mask size does not match its dimensions"));
        }
        Ok(ValidityMask {
            bands,
            height,
            width,
            valid,
        })
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn flags(&self) -> &[bool] {
        &self.valid
    }

    pub fn band(&self, b: usize) -> &[bool] {
        let n = self.height * self.width;
        &self.valid[b * n..(b + 1) * n]
    }

    pub fn is_valid(&self, b: usize, i: usize, j: usize) -> bool {
        self.valid[(b * self.height + i) * self.width + j]
    }

    pub fn count_valid(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    /// Element-wise conjunction.
    pub fn and(&self, other: &ValidityMask) -> Result<ValidityMask> {
        if self.bands != other.bands || self.dims() != other.dims() {
            return Err(Error::contract("mask dimensions differ"));
        }
        let valid = self.valid.iter().zip(&other.valid).map(|(a, b)| *a && *b).collect();
        Ok(ValidityMask { valid, ..*self })
    }

    /// Mean of `values` over valid entries, `None` if nothing is valid.
    pub fn masked_mean(&self, values: &[f64]) -> Option<f64> {
        let (mut s, mut n) = (0.0, 0usize);
        for (v, &ok) in values.iter().zip(&self.valid) {
            if ok {
                s += v;
                n += 1;
            }
        }
        (n > 0).then(|| s / n as f64)
    }
}
