//! Quality report of a fused product: the indices the CLI writes as JSON.

use serde::{Deserialize, Serialize};

use crate::coreg::{AlignmentVector, CoregistrationProduct};
use crate::error::{Error, Result};
use crate::loss::{LossConfig, SpectralTerm};
use crate::metrics::{d_lambda_khan, d_rho_detail, ergas, uiqi_per_band, MetricConfig};
use crate::raster::{PanRaster, Raster, SensorSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandReport {
    /// Estimated `[dx, dy]` shift in PAN pixels.
    pub shift: [f64; 2],
    /// UIQI between the (re-misaligned) downscaled product and the MS band.
    pub uiqi: f64,
    pub d_rho: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    /// Khan distortion after re-applying the estimated band shifts; absent
    /// when alignment is disabled.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_lambda_align: Option<f64>,
    /// Reduced-resolution ERGAS against the MS (aligned when enabled).
    pub r_ergas: f64,
    /// Khan distortion at zero shift.
    pub d_lambda: f64,
    pub d_rho: f64,
    pub per_band: Vec<BandReport>,
}

struct Spectral {
    d_lambda: f64,
    ergas: f64,
    uiqi: Vec<f64>,
}

fn spectral(fused: &Raster, ms: &Raster, shifts: &AlignmentVector, spec: &SensorSpec, cfg: &MetricConfig) -> Result<Spectral> {
    let loss_cfg = LossConfig {
        window: cfg.window,
        stride: cfg.stride,
        eps: cfg.eps,
        ..Default::default()
    };
    let term = SpectralTerm::new(ms, shifts, spec, &loss_cfg)?;
    let down = Raster::from_tensor(&term.downscale(&fused.to_tensor())?, ms.radiometric_range())?;
    let m = term.margin();
    let reference = ms.crop(m, m, ms.height() - 2 * m, ms.width() - 2 * m)?;
    Ok(Spectral {
        d_lambda: d_lambda_khan(&down, &reference, cfg)?,
        ergas: ergas(&down, &reference, spec.ratio)?,
        uiqi: uiqi_per_band(&down, &reference, cfg)?,
    })
}

/// All in-scope indices of `fused` given the inputs and their
/// coregistration product.
pub fn quality_report(
    fused: &Raster,
    pan: &PanRaster,
    ms: &Raster,
    product: &CoregistrationProduct,
    spec: &SensorSpec,
    cfg: &MetricConfig,
    align: bool,
) -> Result<QualityReport> {
    cfg.validate()?;
    spec.check_bands(ms.bands())?;
    let r = spec.ratio;
    if fused.bands() != ms.bands() || fused.dims() != (ms.height() * r, ms.width() * r) || pan.dims() != fused.dims() {
        return Err(Error::contract(format!(
            "fused {}x{}x{}, PAN {:?} and MS {}x{}x{} are inconsistent at ratio {r}",
            fused.bands(),
            fused.height(),
            fused.width(),
            pan.dims(),
            ms.bands(),
            ms.height(),
            ms.width()
        )));
    }
    let zero = AlignmentVector::zeros(ms.bands());
    let plain = spectral(fused, ms, &zero, spec, cfg)?;
    let aligned = if align { Some(spectral(fused, ms, &product.shifts, spec, cfg)?) } else { None };
    let rho = d_rho_detail(fused, pan, &product.rho_max, cfg.sigma, cfg.eps)?;
    let per_band = (0..ms.bands())
        .map(|b| {
            let (dx, dy) = product.shifts.get(b);
            BandReport {
                shift: [dx, dy],
                uiqi: aligned.as_ref().unwrap_or(&plain).uiqi[b],
                d_rho: rho.per_band[b],
            }
        })
        .collect();
    Ok(QualityReport {
        d_lambda_align: aligned.as_ref().map(|a| a.d_lambda),
        r_ergas: aligned.as_ref().unwrap_or(&plain).ergas,
        d_lambda: plain.d_lambda,
        d_rho: rho.value,
        per_band,
    })
}
