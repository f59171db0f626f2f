use crate::error::{Error, Result};
use crate::metrics::CorrelationField;
use crate::raster::PanRaster;
use crate::tensor::DiffTensor;

/// Fused-independent state of the spatial term: centred PAN and its window
/// statistics, and `ρ^max` sampled at window centres.
pub struct SpatialTerm {
    sigma: usize,
    eps: f64,
    bands: usize,
    dims: (usize, usize),
    pan: DiffTensor,
    pan_mean: DiffTensor,
    pan_var: DiffTensor,
    /// `ρ^max` at each window centre, `(B, oh, ow)` flattened.
    rho_max: Vec<f64>,
    /// Windows where `ρ^max` is valid and the PAN variance passes `eps`.
    usable: Vec<bool>,
}

impl SpatialTerm {
    pub fn new(pan: &PanRaster, rho_max: &CorrelationField, sigma: usize, eps: f64) -> Result<Self> {
        let (h, w) = pan.dims();
        if rho_max.dims() != (h, w) {
            return Err(Error::contract(format!(
                "ρmax field {:?} does not match PAN {:?}",
                rho_max.dims(),
                (h, w)
            )));
        }
        if sigma < 2 || sigma > h || sigma > w {
            return Err(Error::contract(format!("window {sigma} does not fit a {h}x{w} image")));
        }
        let mean = pan.values().iter().sum::<f64>() / (h * w) as f64;
        let centred = DiffTensor::new([1, 1, h, w], pan.values().iter().map(|v| v - mean).collect())?;
        let pan_mean = centred.window_mean(sigma, 1)?;
        let pan_var = centred.square()?.window_mean(sigma, 1)?.sub(&pan_mean.square()?)?;
        let (oh, ow) = (h - sigma + 1, w - sigma + 1);
        let half = sigma / 2;
        let bands = rho_max.bands();
        let mut rm = Vec::with_capacity(bands * oh * ow);
        let mut usable = Vec::with_capacity(bands * oh * ow);
        for b in 0..bands {
            for p in 0..oh {
                for q in 0..ow {
                    let (i, j) = (p + half, q + half);
                    rm.push(rho_max.band(b)[i * w + j]);
                    usable.push(rho_max.mask().is_valid(b, i, j) && pan_var.values()[p * ow + q] >= eps);
                }
            }
        }
        Ok(SpatialTerm {
            sigma,
            eps,
            bands,
            dims: (h, w),
            pan: centred,
            pan_mean,
            pan_var,
            rho_max: rm,
            usable,
        })
    }

    /// Loss scalar and the fraction of valid entries that are active.
    pub fn evaluate(&self, fused: &DiffTensor) -> Result<(DiffTensor, f64)> {
        let [n, c, h, w] = fused.shape();
        if n != 1 || c != self.bands || (h, w) != self.dims {
            return Err(Error::contract(format!(
                "fused tensor {:?} does not match the spatial reference {}x{:?}",
                fused.shape(),
                self.bands,
                self.dims
            )));
        }
        // Centring by a detached per-band mean leaves ρ unchanged and keeps the
        // windowed moments well conditioned.
        let hw = (h * w) as f64;
        let means: Vec<f64> = (0..c).map(|b| fused.plane(0, b).iter().sum::<f64>() / hw).collect();
        let m = fused.sub(&DiffTensor::new([1, c, 1, 1], means)?)?;
        let mu_m = m.window_mean(self.sigma, 1)?;
        let var_m = m.square()?.window_mean(self.sigma, 1)?.sub(&mu_m.square()?)?;
        let cov = m.mul(&self.pan)?.window_mean(self.sigma, 1)?.sub(&mu_m.mul(&self.pan_mean)?)?;
        let den = var_m.mul(&self.pan_var)?.clamp_min(self.eps)?.sqrt()?;
        let rho = cov.div(&den)?;

        let (mut valid, mut active) = (0usize, 0usize);
        let weights: Vec<f64> = rho
            .values()
            .iter()
            .zip(var_m.values())
            .enumerate()
            .map(|(k, (&r, &vm))| {
                if self.usable[k] && vm >= self.eps {
                    valid += 1;
                    if r < self.rho_max[k] {
                        active += 1;
                        return 1.0;
                    }
                }
                0.0
            })
            .collect();
        if valid == 0 {
            return Err(Error::InsufficientSupport("no valid window for the spatial loss".into()));
        }
        let mask = DiffTensor::new(rho.shape(), weights)?;
        let loss = rho.rsub_scalar(1.0)?.mul(&mask)?.sum()?.mul_scalar(1.0 / valid as f64)?;
        Ok((loss, active as f64 / valid as f64))
    }
}
