//! Reference correlation field and per-band shift search.
//!
//! Both are computed once per image pair from the low-passed PAN `P^lp` and
//! the interpolated MS `M̃`, using `R × R`-pixel windows (`R²` pixels wide
//! rather than `R`, to tolerate the residual resolution gap).

mod alignment;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{box_sums, local_correlation_field, CorrelationField, Rect, DEFAULT_EPS};
use crate::raster::{
    lowpass_pan, shift_subpixel, upsample_poly23, valid_range, PanRaster, Raster, SensorSpec, ValidityMask,
    MAX_SHIFT,
};

pub use alignment::{shift_grid, AlignmentVector, GRID_STEP};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoregConfig {
    /// Evaluate `ρ^max` at the estimated shifts (otherwise at zero shift).
    pub rho_max_at_optimum: bool,
    pub eps: f64,
}

impl Default for CoregConfig {
    fn default() -> Self {
        CoregConfig {
            rho_max_at_optimum: true,
            eps: DEFAULT_EPS,
        }
    }
}

/// Output of the off-line analysis: `ρ^max`, the per-band shifts and their
/// mean-correlation scores.
#[derive(Clone, Debug)]
pub struct CoregistrationProduct {
    pub rho_max: CorrelationField,
    pub shifts: AlignmentVector,
    /// Mean correlation at the returned shift; `None` for bands without any
    /// valid window (flat bands).
    pub scores: Vec<Option<f64>>,
    /// Mean correlation at zero shift.
    pub zero_scores: Vec<Option<f64>>,
}

impl CoregistrationProduct {
    pub fn bands(&self) -> usize {
        self.shifts.bands()
    }

    /// Product restricted to a PAN-scale window. Shifts are global.
    pub fn crop(&self, row: usize, col: usize, height: usize, width: usize) -> Result<CoregistrationProduct> {
        let (h, w) = self.rho_max.dims();
        if row + height > h || col + width > w {
            return Err(Error::contract("coregistration crop outside the field"));
        }
        let bands = self.rho_max.bands();
        let mut values = Vec::with_capacity(bands * height * width);
        let mut flags = Vec::with_capacity(bands * height * width);
        for b in 0..bands {
            for i in row..row + height {
                values.extend_from_slice(&self.rho_max.band(b)[i * w + col..i * w + col + width]);
                flags.extend_from_slice(&self.rho_max.mask().band(b)[i * w + col..i * w + col + width]);
            }
        }
        Ok(CoregistrationProduct {
            rho_max: CorrelationField::new(
                self.rho_max.sigma,
                values,
                ValidityMask::from_flags(bands, height, width, flags)?,
            )?,
            shifts: self.shifts.clone(),
            scores: self.scores.clone(),
            zero_scores: self.zero_scores.clone(),
        })
    }
}

fn check_sizes(p: &PanRaster, m: &Raster, spec: &SensorSpec) -> Result<()> {
    spec.check_bands(m.bands())?;
    let r = spec.ratio;
    if p.dims() != (m.height() * r, m.width() * r) {
        return Err(Error::contract(format!(
            "PAN {:?} is not {r}x the MS size {:?}",
            p.dims(),
            m.dims()
        )));
    }
    Ok(())
}

/// `P^lp` and `M̃` for a PAN/MS pair.
pub fn analysis_inputs(p: &PanRaster, m: &Raster, spec: &SensorSpec) -> Result<(Raster, Raster)> {
    check_sizes(p, m, spec)?;
    Ok((lowpass_pan(p, spec)?.into_raster(), upsample_poly23(m, spec.ratio)?))
}

/// `ρ^max` at zero shift: local correlation of `P^lp` and `M̃` over
/// `R² × R²` windows.
pub fn reference_correlation_field(p: &PanRaster, m: &Raster, spec: &SensorSpec) -> Result<CorrelationField> {
    let (plp, mt) = analysis_inputs(p, m, spec)?;
    let sigma = spec.ratio * spec.ratio;
    local_correlation_field(&plp, &mt, sigma, DEFAULT_EPS, None)
}

struct Moments {
    sum: Vec<f64>,
    sum_sq: Vec<f64>,
}

fn moments(x: &[f64], h: usize, w: usize, size: usize) -> Moments {
    let sq: Vec<f64> = x.iter().map(|v| v * v).collect();
    Moments {
        sum: box_sums(x, h, w, size),
        sum_sq: box_sums(&sq, h, w, size),
    }
}

/// Mean correlation over the windows inside `region` whose variances pass
/// `eps`; `None` if no window qualifies.
#[allow(clippy::too_many_arguments)]
fn mean_correlation(
    a: &[f64],
    ma: &Moments,
    b: &[f64],
    mb: &Moments,
    h: usize,
    w: usize,
    size: usize,
    region: Rect,
    eps: f64,
) -> Option<f64> {
    let prod: Vec<f64> = a.iter().zip(b).map(|(x, y)| x * y).collect();
    let sab = box_sums(&prod, h, w, size);
    let ow = w - size + 1;
    let n = (size * size) as f64;
    let (mut total, mut count) = (0.0, 0usize);
    for p in region.rows.0..=region.rows.1 - size {
        for q in region.cols.0..=region.cols.1 - size {
            let k = p * ow + q;
            let (mean_a, mean_b) = (ma.sum[k] / n, mb.sum[k] / n);
            let va = ma.sum_sq[k] / n - mean_a * mean_a;
            let vb = mb.sum_sq[k] / n - mean_b * mean_b;
            if va < eps || vb < eps {
                continue;
            }
            let cov = sab[k] / n - mean_a * mean_b;
            total += (cov / (va * vb).max(eps).sqrt()).clamp(-1.0, 1.0);
            count += 1;
        }
    }
    (count > 0).then(|| total / count as f64)
}

fn centered(x: &[f64]) -> Vec<f64> {
    let m = x.iter().sum::<f64>() / x.len() as f64;
    x.iter().map(|v| v - m).collect()
}

/// Exhaustive per-band search of the 169 half-pixel shifts of `P^lp` that
/// maximize the mean local correlation with `M̃_b`.
///
/// Every candidate is scored on the same interior (a 3-pixel margin, the
/// largest shift), so scores are comparable across candidates. Ties go to the
/// smallest shift norm, then lexicographically by `(dx, dy)`.
pub fn estimate_band_shifts(p: &PanRaster, m: &Raster, spec: &SensorSpec) -> Result<CoregistrationProduct> {
    estimate_band_shifts_with(p, m, spec, &CoregConfig::default())
}

pub fn estimate_band_shifts_with(
    p: &PanRaster,
    m: &Raster,
    spec: &SensorSpec,
    cfg: &CoregConfig,
) -> Result<CoregistrationProduct> {
    let (plp, mt) = analysis_inputs(p, m, spec)?;
    let (h, w) = plp.dims();
    let sigma = spec.ratio * spec.ratio;
    let margin = MAX_SHIFT.ceil() as usize;
    let region = Rect::inset(h, w, margin);
    if region.rows.1 - region.rows.0 < sigma || region.cols.1 - region.cols.0 < sigma {
        return Err(Error::InsufficientSupport(format!(
            "{h}x{w} PAN leaves no {sigma}x{sigma} window after the {margin}-pixel search margin"
        )));
    }

    // Centering by the global mean keeps the windowed moments well conditioned.
    let bands_c: Vec<Vec<f64>> = (0..mt.bands()).map(|b| centered(mt.band(b))).collect();
    let band_moments: Vec<Moments> = bands_c.iter().map(|x| moments(x, h, w, sigma)).collect();

    let grid = shift_grid();
    let scores: Vec<Vec<Option<f64>>> = grid
        .par_iter()
        .map(|&(dx, dy)| -> Result<Vec<Option<f64>>> {
            let (shifted, _) = shift_subpixel(&plp, dx, dy)?;
            let a = centered(shifted.band(0));
            let ma = moments(&a, h, w, sigma);
            Ok(bands_c
                .iter()
                .zip(&band_moments)
                .map(|(b, mb)| mean_correlation(&a, &ma, b, mb, h, w, sigma, region, cfg.eps))
                .collect())
        })
        .collect::<Result<_>>()?;

    let bands = mt.bands();
    let mut best_shift = vec![[0.0, 0.0]; bands];
    let mut best_score: Vec<Option<f64>> = vec![None; bands];
    for (cand, per_band) in grid.iter().zip(&scores) {
        for b in 0..bands {
            if let Some(s) = per_band[b] {
                if best_score[b].is_none_or(|best| s > best) {
                    best_score[b] = Some(s);
                    best_shift[b] = [cand.0, cand.1];
                }
            }
        }
    }
    // grid[0] is the zero shift
    let zero_scores = scores[0].clone();
    let shifts = AlignmentVector::new(best_shift)?;

    let rho_max = if cfg.rho_max_at_optimum {
        let mut parts = Vec::with_capacity(bands);
        for b in 0..bands {
            let (dx, dy) = shifts.get(b);
            let (shifted, _) = shift_subpixel(&plp, dx, dy)?;
            let rows = valid_range(h, dy);
            let cols = valid_range(w, dx);
            parts.push(local_correlation_field(
                &shifted,
                &mt.extract_band(b),
                sigma,
                cfg.eps,
                Some(Rect { rows, cols }),
            )?);
        }
        CorrelationField::stack(&parts)?
    } else {
        local_correlation_field(&plp, &mt, sigma, cfg.eps, None)?
    };

    Ok(CoregistrationProduct {
        rho_max,
        shifts,
        scores: best_score,
        zero_scores,
    })
}

#[cfg(test)]
mod tests;
