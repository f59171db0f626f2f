//! Quality and distortion functionals: correlation coefficient and local
//! correlation fields, UIQI, Q2ⁿ, ERGAS, Khan's D_λ and the correlation-based
//! spatial index D_ρ.

mod correlation;
pub mod hypercomplex;
mod quality;
mod spatial;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub(crate) use correlation::box_sums;
pub use correlation::{corrcoef, local_correlation_field, CorrelationField, Rect};
pub(crate) use quality::q2n_dim;
pub use quality::{d_lambda_khan, ergas, q2n, uiqi, uiqi_per_band};
pub use spatial::{d_rho, d_rho_detail, DRhoDetail};

/// Default numeric floor for variance products.
pub const DEFAULT_EPS: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricConfig {
    /// UIQI / Q2ⁿ window side.
    pub window: usize,
    /// UIQI / Q2ⁿ window stride; equal to `window` for disjoint blocks.
    pub stride: usize,
    /// Resolution ratio used by ERGAS.
    pub ratio: usize,
    /// Local-correlation window side.
    pub sigma: usize,
    pub eps: f64,
}

impl Default for MetricConfig {
    fn default() -> Self {
        MetricConfig {
            window: 32,
            stride: 32,
            ratio: 4,
            sigma: 4,
            eps: DEFAULT_EPS,
        }
    }
}

impl MetricConfig {
    pub fn for_ratio(ratio: usize) -> Self {
        MetricConfig {
            ratio,
            sigma: ratio,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.window < 2 || self.sigma < 2 || self.stride == 0 || self.ratio == 0 {
            return Err(Error::contract("metric windows must be >= 2 and stride, ratio >= 1"));
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(Error::contract("metric eps must be positive"));
        }
        Ok(())
    }
}

/// Square block side and anchors for block statistics over an `h × w`
/// image: blocks of `min(window, h, w)` anchored at multiples of `stride`
/// that fit inside. Shared by the metric and loss routes.
pub fn block_layout(h: usize, w: usize, window: usize, stride: usize) -> (usize, Vec<usize>, Vec<usize>) {
    let side = window.min(h).min(w);
    let rows = (0..=h - side).step_by(stride).collect();
    let cols = (0..=w - side).step_by(stride).collect();
    (side, rows, cols)
}
