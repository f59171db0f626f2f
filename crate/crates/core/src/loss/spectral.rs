use std::sync::Arc;

use super::LossConfig;
use crate::coreg::AlignmentVector;
use crate::error::{Error, Result};
use crate::metrics::block_layout;
use crate::metrics::hypercomplex::conj_product_table;
use crate::raster::{mtf_kernels, Raster, SensorSpec};
use crate::tensor::DiffTensor;

/// `D_λ` and ERGAS scalars of one evaluation.
pub struct SpectralParts {
    pub d_lambda: DiffTensor,
    pub ergas: DiffTensor,
}

/// Fused-independent state of the spectral term.
pub struct SpectralTerm {
    shifts: Vec<(f64, f64)>,
    kernels: Arc<Vec<Vec<f64>>>,
    ratio: usize,
    /// MS-scale border excluded from the comparison.
    margin: usize,
    /// Cropped reference `M`, `(1, B, h, w)`.
    reference: DiffTensor,
    /// Per-band reference planes, `(1, 1, h, w)` each.
    reference_bands: Vec<DiffTensor>,
    /// Block means of each reference band.
    ref_block_means: Vec<DiffTensor>,
    /// `|μ_y|²` and `E|y|² − |μ_y|²` per block.
    ref_mu_sq: DiffTensor,
    ref_var: DiffTensor,
    /// `1 / mean(M_b)²`, `(1, B, 1, 1)`.
    inv_mean_sq: DiffTensor,
    table: Vec<(usize, usize, usize, f64)>,
    dim: usize,
    block: usize,
    stride: usize,
    eps: f64,
}

impl SpectralTerm {
    pub fn new(ms: &Raster, shifts: &AlignmentVector, spec: &SensorSpec, cfg: &LossConfig) -> Result<Self> {
        spec.check_bands(ms.bands())?;
        if shifts.bands() != ms.bands() {
            return Err(Error::contract("alignment vector and MS differ in band count"));
        }
        let bands = ms.bands();
        let dim = crate::metrics::q2n_dim(bands)?;
        let kernels = mtf_kernels(spec);
        let ratio = spec.ratio;
        let margin = if shifts.is_zero() {
            0
        } else {
            // PAN pixels within m_pan + r of a border see clamped shift taps;
            // the first clean MS sample is at ratio·i + ratio/2 ≥ m_pan + r.
            let radius = kernels.iter().map(|k| k.len() / 2).max().unwrap_or(0);
            let m_pan = shifts.max_abs().ceil() as usize;
            (m_pan + radius).saturating_sub(ratio / 2).div_ceil(ratio)
        };
        let (h, w) = ms.dims();
        if 2 * margin + 2 > h.min(w) {
            return Err(Error::InsufficientSupport(format!(
                "{h}x{w} MS leaves no pixels after the {margin}-pixel alignment margin"
            )));
        }
        let (ch, cw) = (h - 2 * margin, w - 2 * margin);
        let reference = ms.crop(margin, margin, ch, cw)?;
        let degenerate: Vec<usize> = (0..bands).filter(|&b| reference.band_mean(b) == 0.0).collect();
        if !degenerate.is_empty() {
            return Err(Error::DegenerateReference { bands: degenerate });
        }
        let inv_mean_sq = DiffTensor::new(
            [1, bands, 1, 1],
            (0..bands).map(|b| 1.0 / reference.band_mean(b).powi(2)).collect(),
        )?;
        let reference = reference.to_tensor();
        let (block, _, _) = block_layout(ch, cw, cfg.window, cfg.stride);
        let reference_bands = (0..bands).map(|b| reference.channel(b)).collect::<Result<Vec<_>>>()?;
        let ref_block_means = reference_bands
            .iter()
            .map(|y| y.window_mean(block, cfg.stride))
            .collect::<Result<Vec<_>>>()?;
        let mu = reference.window_mean(block, cfg.stride)?;
        let ref_mu_sq = mu.square()?.channel_avg()?.mul_scalar(bands as f64)?;
        let e_sq = reference.square()?.window_mean(block, cfg.stride)?.channel_avg()?.mul_scalar(bands as f64)?;
        let ref_var = e_sq.sub(&ref_mu_sq)?;
        Ok(SpectralTerm {
            shifts: (0..bands).map(|b| shifts.get(b)).collect(),
            kernels,
            ratio,
            margin,
            reference,
            reference_bands,
            ref_block_means,
            ref_mu_sq,
            ref_var,
            inv_mean_sq,
            table: conj_product_table(dim),
            dim,
            block,
            stride: cfg.stride,
            eps: cfg.eps,
        })
    }

    pub fn margin(&self) -> usize {
        self.margin
    }

    /// `M̂↓a`: per-band shift, MTF filter, decimation and margin crop.
    pub fn downscale(&self, fused: &DiffTensor) -> Result<DiffTensor> {
        let [n, c, h, w] = fused.shape();
        let [_, rc, rh, rw] = self.reference.shape();
        let r = self.ratio;
        if n != 1 || c != rc || h != (rh + 2 * self.margin) * r || w != (rw + 2 * self.margin) * r {
            return Err(Error::contract(format!(
                "fused tensor {:?} does not match MS {}x{}x{} at ratio {r}",
                fused.shape(),
                rc,
                rh + 2 * self.margin,
                rw + 2 * self.margin
            )));
        }
        let aligned = if self.shifts.iter().all(|&(dx, dy)| dx == 0.0 && dy == 0.0) {
            fused.clone()
        } else {
            let parts = self
                .shifts
                .iter()
                .enumerate()
                .map(|(b, &(dx, dy))| {
                    let ch = fused.channel(b)?;
                    if dx == 0.0 && dy == 0.0 {
                        Ok(ch)
                    } else {
                        ch.spatial_shift(dx, dy)
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            DiffTensor::concat_channels(&parts.iter().collect::<Vec<_>>())?
        };
        let down = aligned.separable_filter(self.kernels.clone())?.decimate(r, r / 2)?;
        if self.margin == 0 {
            Ok(down)
        } else {
            down.crop([0, 0, self.margin, self.margin], self.reference.shape())
        }
    }

    /// `2·num / den`, replaced by 1 where `den < eps` (as in the metric).
    fn ratio_term(&self, num: &DiffTensor, den: &DiffTensor) -> Result<DiffTensor> {
        let keep: Vec<f64> = den.values().iter().map(|&d| if d < self.eps { 0.0 } else { 1.0 }).collect();
        let term = num.mul_scalar(2.0)?.div(&den.clamp_min(self.eps)?)?;
        if keep.iter().all(|&k| k == 1.0) {
            return Ok(term);
        }
        let fill = DiffTensor::new(den.shape(), keep.iter().map(|k| 1.0 - k).collect())?;
        term.mul(&DiffTensor::new(den.shape(), keep)?)?.add(&fill)
    }

    /// Differentiable `1 − Q2ⁿ(x, M)` over the configured blocks.
    fn d_lambda(&self, x: &DiffTensor) -> Result<DiffTensor> {
        let bands = self.reference_bands.len();
        let (blk, st) = (self.block, self.stride);
        let mu_x = x.window_mean(blk, st)?;
        let mu_x_sq = mu_x.square()?.channel_avg()?.mul_scalar(bands as f64)?;
        let e_x_sq = x.square()?.window_mean(blk, st)?.channel_avg()?.mul_scalar(bands as f64)?;
        let var_x = e_x_sq.sub(&mu_x_sq)?;

        // cross[j] = E[x_i y_j] − μx_i μy_j for all i, as (1, B, oh, ow)
        let cross = (0..bands)
            .map(|j| {
                x.mul(&self.reference_bands[j])?
                    .window_mean(blk, st)?
                    .sub(&mu_x.mul(&self.ref_block_means[j])?)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut comps: Vec<Option<DiffTensor>> = vec![None; self.dim];
        for &(i, j, k, s) in &self.table {
            if i >= bands || j >= bands {
                continue;
            }
            let term = cross[j].channel(i)?;
            let term = if s < 0.0 { term.mul_scalar(-1.0)? } else { term };
            comps[k] = Some(match comps[k].take() {
                Some(acc) => acc.add(&term)?,
                None => term,
            });
        }
        let mut cov_sq: Option<DiffTensor> = None;
        for c in comps.into_iter().flatten() {
            let sq = c.square()?;
            cov_sq = Some(match cov_sq {
                Some(acc) => acc.add(&sq)?,
                None => sq,
            });
        }
        let cov = cov_sq
            .ok_or_else(|| Error::contract("empty covariance"))?
            .clamp_min(1e-300)?
            .sqrt()?;
        let structure = self.ratio_term(&cov, &var_x.add(&self.ref_var)?)?;
        let mu_prod = mu_x_sq.mul(&self.ref_mu_sq)?.clamp_min(1e-300)?.sqrt()?;
        let luminance = self.ratio_term(&mu_prod, &mu_x_sq.add(&self.ref_mu_sq)?)?;
        structure.mul(&luminance)?.mean()?.rsub_scalar(1.0)
    }

    fn ergas(&self, x: &DiffTensor) -> Result<DiffTensor> {
        x.sub(&self.reference)?
            .square()?
            .global_avg_pool()?
            .mul(&self.inv_mean_sq)?
            .mean()?
            .clamp_min(1e-20)?
            .sqrt()?
            .mul_scalar(100.0 / self.ratio as f64)
    }

    pub fn jesse(&self, fused: &DiffTensor) -> Result<SpectralParts> {
        let x = self.downscale(fused)?;
        Ok(SpectralParts {
            d_lambda: self.d_lambda(&x)?,
            ergas: self.ergas(&x)?,
        })
    }

    pub fn l1(&self, fused: &DiffTensor) -> Result<DiffTensor> {
        self.downscale(fused)?.sub(&self.reference)?.abs()?.mean()
    }
}
