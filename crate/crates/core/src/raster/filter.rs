use std::f64::consts::PI;
use std::sync::Arc;

use super::{PanRaster, Raster, SensorSpec};
use crate::error::{Error, Result};
use crate::tensor::kernels;

/// Standard deviation (in PAN pixels) of the Gaussian whose frequency
/// response at the MS Nyquist frequency `1 / (2 * ratio)` equals `gain`.
///
/// A Gaussian of std `s` has response `exp(-2 π² s² f²)`; solving for `s`
/// gives `s = ratio * sqrt(-2 ln gain) / π`.
pub fn mtf_sigma(gain: f64, ratio: usize) -> f64 {
    ratio as f64 * (-2.0 * gain.ln()).sqrt() / PI
}

/// Sampled Gaussian truncated at 4 standard deviations, odd length, unit sum.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (4.0 * sigma).ceil().max(1.0) as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|t| (-(t * t) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// One 1-D kernel per MS band.
pub fn mtf_kernels(spec: &SensorSpec) -> Arc<Vec<Vec<f64>>> {
    Arc::new(
        spec.ms_mtf_gains
            .iter()
            .map(|&g| gaussian_kernel(mtf_sigma(g, spec.ratio)))
            .collect(),
    )
}

pub(crate) fn filter_raster(x: &Raster, kernels_per_band: &[Vec<f64>]) -> Result<Raster> {
    let (h, w) = x.dims();
    let mut out = vec![0.0; x.data().len()];
    for b in 0..x.bands() {
        kernels::separable_filter_plane(
            x.band(b),
            h,
            w,
            &kernels_per_band[b % kernels_per_band.len()],
            &mut out[b * h * w..(b + 1) * h * w],
        );
    }
    Raster::new(x.bands(), h, w, out, x.radiometric_range())
}

/// MTF-matched Gaussian filtering of every band followed by decimation by
/// `ratio` at offset `ratio / 2`.
pub fn mtf_downscale(x: &Raster, spec: &SensorSpec) -> Result<Raster> {
    spec.check_bands(x.bands())?;
    let r = spec.ratio;
    let (h, w) = x.dims();
    if h % r != 0 || w % r != 0 {
        return Err(Error::contract(format!("{h}x{w} is not divisible by ratio {r}")));
    }
    let filtered = filter_raster(x, &mtf_kernels(spec))?;
    let (oh, ow) = (h / r, w / r);
    let off = r / 2;
    let mut out = Vec::with_capacity(x.bands() * oh * ow);
    for b in 0..x.bands() {
        let plane = filtered.band(b);
        for i in 0..oh {
            out.extend((0..ow).map(|j| plane[(off + i * r) * w + off + j * r]));
        }
    }
    Raster::new(x.bands(), oh, ow, out, x.radiometric_range())
}

/// PAN filtered with its own MTF-matched Gaussian; same size, no decimation.
pub fn lowpass_pan(p: &PanRaster, spec: &SensorSpec) -> Result<PanRaster> {
    let k = gaussian_kernel(mtf_sigma(spec.pan_mtf_gain, spec.ratio));
    PanRaster::from_raster(filter_raster(p.as_raster(), &[k])?)
}
