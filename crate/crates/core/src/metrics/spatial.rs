use super::correlation::{local_correlation_field, CorrelationField};
use crate::error::{Error, Result};
use crate::raster::{PanRaster, Raster};

#[derive(Clone, Debug, PartialEq)]
pub struct DRhoDetail {
    pub value: f64,
    pub per_band: Vec<f64>,
    /// Fraction of valid entries where `ρ^σ < ρ^max`.
    pub active_fraction: f64,
    pub valid_count: usize,
}

/// Correlation-based spatial distortion with per-band breakdown.
///
/// `ρ^σ` is the local correlation between `pan` and each band of `fused`;
/// the index is the mean over entries valid in both fields of
/// `(1 − ρ^σ)·[ρ^σ < ρ^max]`.
pub fn d_rho_detail(
    fused: &Raster,
    pan: &PanRaster,
    rho_max: &CorrelationField,
    sigma: usize,
    eps: f64,
) -> Result<DRhoDetail> {
    if rho_max.bands() != fused.bands() || rho_max.dims() != fused.dims() {
        return Err(Error::contract(format!(
            "ρmax field {}x{:?} does not match fused raster {}x{:?}",
            rho_max.bands(),
            rho_max.dims(),
            fused.bands(),
            fused.dims()
        )));
    }
    let rho = local_correlation_field(pan.as_raster(), fused, sigma, eps, None)?;
    let (mut total, mut n, mut active) = (0.0, 0usize, 0usize);
    let mut per_band = Vec::with_capacity(fused.bands());
    for b in 0..fused.bands() {
        let (mut s, mut nb) = (0.0, 0usize);
        let flags = rho.mask().band(b).iter().zip(rho_max.mask().band(b));
        for ((&r, &rm), (&ok, &ok_max)) in rho.band(b).iter().zip(rho_max.band(b)).zip(flags) {
            if ok && ok_max {
                nb += 1;
                if r < rm {
                    s += 1.0 - r;
                    active += 1;
                }
            }
        }
        per_band.push(if nb > 0 { s / nb as f64 } else { 0.0 });
        total += s;
        n += nb;
    }
    if n == 0 {
        return Err(Error::InsufficientSupport("no pixel is valid in both correlation fields".into()));
    }
    Ok(DRhoDetail {
        value: total / n as f64,
        per_band,
        active_fraction: active as f64 / n as f64,
        valid_count: n,
    })
}

pub fn d_rho(fused: &Raster, pan: &PanRaster, rho_max: &CorrelationField, sigma: usize, eps: f64) -> Result<f64> {
    d_rho_detail(fused, pan, rho_max, sigma, eps).map(|d| d.value)
}
