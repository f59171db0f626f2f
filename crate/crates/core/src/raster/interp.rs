use super::Raster;
use crate::error::{Error, Result};

/// Odd taps `c1..c6` of the 23-tap half-band interpolator (the even taps are
/// zero apart from the unit centre tap). The pair-sum `2·Σc` equals 1 up to
/// the published rounding; [`stage_taps`] removes that residue so constants
/// pass exactly.
pub const POLY23_TAPS: [f64; 6] = [
    0.610_668_182_370,
    -0.145_397_186_478,
    0.043_619_155_884,
    -0.010_385_513_306,
    0.001_615_524_292,
    -0.000_120_162_964,
];

fn stage_taps() -> [f64; 6] {
    let s: f64 = 2.0 * POLY23_TAPS.iter().sum::<f64>();
    POLY23_TAPS.map(|c| c / s)
}

#[inline]
fn at(x: &[f64], i: isize) -> f64 {
    x[i.clamp(0, x.len() as isize - 1) as usize]
}

/// One ×2 stage along a line. The first stage places the originals at odd
/// output positions and later stages at even positions; the cascade puts
/// original sample `i` at `R·i + R/2`, the same grid `mtf_downscale` samples.
fn upsample_line(x: &[f64], odd: bool, taps: &[f64; 6], out: &mut [f64]) {
    let n = x.len() as isize;
    for i in 0..n {
        let mut s = 0.0;
        for (t, &c) in taps.iter().enumerate() {
            let t = t as isize + 1;
            s += if odd {
                c * (at(x, i - t) + at(x, i + t - 1))
            } else {
                c * (at(x, i - t + 1) + at(x, i + t))
            };
        }
        let i = i as usize;
        if odd {
            out[2 * i] = s;
            out[2 * i + 1] = x[i];
        } else {
            out[2 * i] = x[i];
            out[2 * i + 1] = s;
        }
    }
}

fn upsample_plane(x: &[f64], h: usize, w: usize, odd: bool, taps: &[f64; 6]) -> Vec<f64> {
    let mut rows = vec![0.0; h * 2 * w];
    for i in 0..h {
        upsample_line(&x[i * w..(i + 1) * w], odd, taps, &mut rows[i * 2 * w..(i + 1) * 2 * w]);
    }
    let w2 = 2 * w;
    let mut out = vec![0.0; 2 * h * w2];
    let mut col = vec![0.0; h];
    let mut col_out = vec![0.0; 2 * h];
    for j in 0..w2 {
        for i in 0..h {
            col[i] = rows[i * w2 + j];
        }
        upsample_line(&col, odd, taps, &mut col_out);
        for (i, v) in col_out.iter().enumerate() {
            out[i * w2 + j] = *v;
        }
    }
    out
}

/// Interpolates every band by `ratio` with cascaded ×2 stages of the 23-tap
/// kernel. Only powers of two are supported.
pub fn upsample_poly23(m: &Raster, ratio: usize) -> Result<Raster> {
    if ratio < 2 || !ratio.is_power_of_two() {
        return Err(Error::Unsupported(format!(
            "23-tap interpolation needs a power-of-two ratio, got {ratio}"
        )));
    }
    let taps = stage_taps();
    let (h, w) = m.dims();
    let mut planes = Vec::with_capacity(m.bands());
    for b in 0..m.bands() {
        let (mut plane, mut ph, mut pw) = (m.band(b).to_vec(), h, w);
        let mut first = true;
        let mut r = ratio;
        while r > 1 {
            plane = upsample_plane(&plane, ph, pw, first, &taps);
            ph *= 2;
            pw *= 2;
            first = false;
            r /= 2;
        }
        planes.push(plane);
    }
    Raster::from_bands(planes, h * ratio, w * ratio, m.radiometric_range())
}
