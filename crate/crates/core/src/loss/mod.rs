//! Differentiable JESSE loss: alignment-aware spectral term
//! `D_λ + γ·ERGAS`, correlation-based spatial term, and their weighted sum.
//! The Z-PNN L1 spectral term is available as an ablation variant.
//!
//! [`JesseLoss`] precomputes everything that does not depend on the fused
//! image (filters, reference statistics, masks), so one instance serves a
//! whole adaptation run.

mod spatial;
mod spectral;

use serde::{Deserialize, Serialize};

use crate::coreg::{AlignmentVector, CoregistrationProduct};
use crate::error::{Error, Result};
use crate::metrics::{CorrelationField, DEFAULT_EPS};
use crate::raster::{PanRaster, Raster, SensorSpec};
use crate::tensor::DiffTensor;

pub use spatial::SpatialTerm;
pub use spectral::{SpectralParts, SpectralTerm};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpectralVariant {
    /// `D_λ + γ·ERGAS` on the (optionally re-misaligned) downscaled product.
    #[default]
    Jesse,
    /// Mean absolute difference between the downscaled product and `M`.
    ZpnnL1,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    /// ERGAS weight (tuned on synthetic scenes, not a published value).
    pub gamma: f64,
    /// Spatial weight (tuned on synthetic scenes, not a published value).
    pub beta: f64,
    /// Local-correlation window; `None` means the sensor ratio.
    pub sigma: Option<usize>,
    /// Re-apply the estimated band shifts before downscaling.
    pub alignment: bool,
    pub variant: SpectralVariant,
    /// Q2ⁿ block size and stride inside the loss.
    pub window: usize,
    pub stride: usize,
    pub eps: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            gamma: 0.05,
            beta: 1.0,
            sigma: None,
            alignment: true,
            variant: SpectralVariant::Jesse,
            window: 32,
            stride: 32,
            eps: DEFAULT_EPS,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("gamma", self.gamma), ("beta", self.beta)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::contract(format!("loss {name} must be finite and >= 0, got {v}")));
            }
        }
        if self.window < 2 || self.stride == 0 || self.sigma.is_some_and(|s| s < 2) {
            return Err(Error::contract("loss windows must be >= 2"));
        }
        if !(self.eps > 0.0) {
            return Err(Error::contract("loss eps must be positive"));
        }
        Ok(())
    }

    pub fn sigma_for(&self, spec: &SensorSpec) -> usize {
        self.sigma.unwrap_or(spec.ratio)
    }
}

/// Scalar parts of one loss evaluation.
///
/// `total = spectral_dlambda + γ·spectral_ergas + spectral_l1 + β·spatial`;
/// the L1 part is zero for the JESSE variant and the first two are zero for
/// the Z-PNN variant.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub spectral_dlambda: f64,
    pub spectral_ergas: f64,
    pub spectral_l1: f64,
    pub spatial: f64,
    /// Fraction of valid spatial-loss entries where `ρ^σ < ρ^max`.
    pub active_fraction: f64,
}

/// Precomputed total loss for one (P, M, coregistration) triple.
pub struct JesseLoss {
    cfg: LossConfig,
    spectral: SpectralTerm,
    spatial: Option<SpatialTerm>,
}

impl JesseLoss {
    pub fn new(
        pan: &PanRaster,
        ms: &Raster,
        product: &CoregistrationProduct,
        spec: &SensorSpec,
        cfg: &LossConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        let shifts = if cfg.alignment {
            product.shifts.clone()
        } else {
            AlignmentVector::zeros(ms.bands())
        };
        let spectral = SpectralTerm::new(ms, &shifts, spec, cfg)?;
        let spatial = if cfg.beta > 0.0 {
            Some(SpatialTerm::new(pan, &product.rho_max, cfg.sigma_for(spec), cfg.eps)?)
        } else {
            None
        };
        Ok(JesseLoss {
            cfg: cfg.clone(),
            spectral,
            spatial,
        })
    }

    pub fn config(&self) -> &LossConfig {
        &self.cfg
    }

    /// Loss scalar (on the tape of `fused`, if any) and its breakdown.
    pub fn evaluate(&self, fused: &DiffTensor) -> Result<(DiffTensor, LossBreakdown)> {
        let mut bd = LossBreakdown::default();
        let spectral = match self.cfg.variant {
            SpectralVariant::Jesse => {
                let parts = self.spectral.jesse(fused)?;
                bd.spectral_dlambda = parts.d_lambda.item()?;
                bd.spectral_ergas = parts.ergas.item()?;
                parts.d_lambda.add(&parts.ergas.mul_scalar(self.cfg.gamma)?)?
            }
            SpectralVariant::ZpnnL1 => {
                let l1 = self.spectral.l1(fused)?;
                bd.spectral_l1 = l1.item()?;
                l1
            }
        };
        let total = match &self.spatial {
            Some(term) => {
                let (s, active) = term.evaluate(fused)?;
                bd.spatial = s.item()?;
                bd.active_fraction = active;
                spectral.add(&s.mul_scalar(self.cfg.beta)?)?
            }
            None => spectral,
        };
        bd.total = total.item()?;
        if !bd.total.is_finite() {
            return Err(Error::NumericFailure(format!(
                "non-finite loss: d_lambda={} ergas={} l1={} spatial={}",
                bd.spectral_dlambda, bd.spectral_ergas, bd.spectral_l1, bd.spatial
            )));
        }
        Ok((total, bd))
    }
}

/// Spectral loss `D_λ(M̂↓a, M) + γ·ERGAS(M̂↓a, M)`.
pub fn spectral_loss(
    fused: &DiffTensor,
    ms: &Raster,
    shifts: &AlignmentVector,
    spec: &SensorSpec,
    cfg: &LossConfig,
) -> Result<(DiffTensor, LossBreakdown)> {
    let shifts = if cfg.alignment {
        shifts.clone()
    } else {
        AlignmentVector::zeros(ms.bands())
    };
    let parts = SpectralTerm::new(ms, &shifts, spec, cfg)?.jesse(fused)?;
    let total = parts.d_lambda.add(&parts.ergas.mul_scalar(cfg.gamma)?)?;
    let bd = LossBreakdown {
        total: total.item()?,
        spectral_dlambda: parts.d_lambda.item()?,
        spectral_ergas: parts.ergas.item()?,
        ..Default::default()
    };
    Ok((total, bd))
}

/// Spatial loss: masked mean of `1 − ρ^σ(P, M̂)` where `ρ^σ < ρ^max`.
/// Returns the loss and the active fraction.
pub fn spatial_loss(
    fused: &DiffTensor,
    pan: &PanRaster,
    rho_max: &CorrelationField,
    sigma: usize,
    cfg: &LossConfig,
) -> Result<(DiffTensor, f64)> {
    SpatialTerm::new(pan, rho_max, sigma, cfg.eps)?.evaluate(fused)
}

/// `L = L_λ + β·L_S`.
pub fn total_loss(
    fused: &DiffTensor,
    pan: &PanRaster,
    ms: &Raster,
    product: &CoregistrationProduct,
    spec: &SensorSpec,
    cfg: &LossConfig,
) -> Result<(DiffTensor, LossBreakdown)> {
    JesseLoss::new(pan, ms, product, spec, cfg)?.evaluate(fused)
}

/// Z-PNN spectral term: mean `|mtf_downscale(M̂) − M|`.
pub fn zpnn_spectral_loss(fused: &DiffTensor, ms: &Raster, spec: &SensorSpec) -> Result<DiffTensor> {
    let cfg = LossConfig {
        alignment: false,
        ..Default::default()
    };
    SpectralTerm::new(ms, &AlignmentVector::zeros(ms.bands()), spec, &cfg)?.l1(fused)
}

#[cfg(test)]
mod tests;
