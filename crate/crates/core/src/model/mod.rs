//! λ-PNN: a residual convolutional trunk with two ResBlocks and two residual
//! CBAM attention modules, added on top of the interpolated MS (global skip).
//!
//! Layer order: conv+ReLU, conv+ReLU, R-CBAM, ResBlock, R-CBAM, ResBlock,
//! linear output conv. Inputs enter the trunk as `x / input_scale − ½` and
//! the predicted residual is expressed in units of `input_scale`, so weights
//! are independent of the sensor's bit depth.

mod checkpoint;
mod layers;
#[cfg(test)]
mod tests;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{PanRaster, Raster};
use crate::tensor::{DiffTensor, Shape};

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_FORMAT};
pub use layers::{rcbam, resblock, CbamParams, ResBlockParams};

/// Scale applied to the output conv at initialisation.
pub const OUTPUT_INIT_SCALE: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub bands: usize,
    /// Trunk feature channels.
    pub width: usize,
    /// Trunk convolution size.
    pub kernel: usize,
    /// Spatial-attention convolution size.
    pub attention_kernel: usize,
    /// Channel-attention perceptron reduction ratio.
    pub reduction: usize,
    pub input_scale: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            bands: 4,
            width: 64,
            kernel: 3,
            attention_kernel: 7,
            reduction: 16,
            input_scale: 2048.0,
        }
    }
}

impl ModelConfig {
    pub fn new(bands: usize) -> Self {
        Self {
            bands,
            ..Default::default()
        }
    }

    pub fn with_width(mut self, width: usize) -> Self {
        self.width = width;
        self
    }

    pub fn hidden(&self) -> usize {
        (self.width / self.reduction).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.bands == 0 || self.width == 0 || self.reduction == 0 {
            return Err(Error::contract("model bands, width and reduction must be positive"));
        }
        if self.kernel.is_multiple_of(2) || self.attention_kernel.is_multiple_of(2) {
            return Err(Error::contract("model kernel sizes must be odd"));
        }
        if !(self.input_scale.is_finite() && self.input_scale > 0.0) {
            return Err(Error::contract("input_scale must be positive and finite"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamRole {
    TrunkConv,
    AttentionMlp,
    AttentionSpatial,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Shape,
    pub role: ParamRole,
    /// Weight (true) or bias.
    pub is_weight: bool,
}

fn conv_pair(out: &mut Vec<ParamSpec>, name: &str, role: ParamRole, cout: usize, cin: usize, k: usize) {
    out.push(ParamSpec {
        name: format!("{name}.weight"),
        shape: [cout, cin, k, k],
        role,
        is_weight: true,
    });
    out.push(ParamSpec {
        name: format!("{name}.bias"),
        shape: [cout, 1, 1, 1],
        role,
        is_weight: false,
    });
}

fn cbam_params(out: &mut Vec<ParamSpec>, name: &str, cfg: &ModelConfig) {
    let (w, h) = (cfg.width, cfg.hidden());
    conv_pair(out, &format!("{name}.mlp1"), ParamRole::AttentionMlp, h, w, 1);
    conv_pair(out, &format!("{name}.mlp2"), ParamRole::AttentionMlp, w, h, 1);
    conv_pair(out, &format!("{name}.spatial"), ParamRole::AttentionSpatial, 1, 2, cfg.attention_kernel);
}

/// The ordered parameter list; `forward` consumes it in this order.
pub fn layout(cfg: &ModelConfig) -> Vec<ParamSpec> {
    let (b, w, k) = (cfg.bands, cfg.width, cfg.kernel);
    let mut out = Vec::new();
    conv_pair(&mut out, "conv1", ParamRole::TrunkConv, w, b + 1, k);
    conv_pair(&mut out, "conv2", ParamRole::TrunkConv, w, w, k);
    for block in 1..=2 {
        cbam_params(&mut out, &format!("cbam{block}"), cfg);
        conv_pair(&mut out, &format!("res{block}.conv_a"), ParamRole::TrunkConv, w, w, k);
        conv_pair(&mut out, &format!("res{block}.conv_b"), ParamRole::TrunkConv, w, w, k);
    }
    conv_pair(&mut out, "output", ParamRole::TrunkConv, b, w, k);
    out
}

/// Closed-form parameter count.
pub fn parameter_count(cfg: &ModelConfig) -> usize {
    let (b, w, k, h, a) = (cfg.bands, cfg.width, cfg.kernel, cfg.hidden(), cfg.attention_kernel);
    let conv = |cout: usize, cin: usize, k: usize| cout * cin * k * k + cout;
    let cbam = conv(h, w, 1) + conv(w, h, 1) + conv(1, 2, a);
    conv(w, b + 1, k) + conv(w, w, k) + 2 * (cbam + 2 * conv(w, w, k)) + conv(b, w, k)
}

#[derive(Clone, Debug)]
pub struct ModelWeights {
    pub config: ModelConfig,
    pub seed: u64,
    params: Vec<DiffTensor>,
}

impl ModelWeights {
    pub fn from_params(config: ModelConfig, seed: u64, params: Vec<DiffTensor>) -> Result<Self> {
        config.validate()?;
        let specs = layout(&config);
        if specs.len() != params.len() {
            return Err(Error::contract(format!(
                "expected {} parameter tensors, got {}",
                specs.len(),
                params.len()
            )));
        }
        for (s, p) in specs.iter().zip(&params) {
            if s.shape != p.shape() {
                return Err(Error::contract(format!("{}: shape {:?}, expected {:?}", s.name, p.shape(), s.shape)));
            }
        }
        Ok(Self {
            config,
            seed,
            params: params.iter().map(DiffTensor::detach).collect(),
        })
    }

    pub fn params(&self) -> &[DiffTensor] {
        &self.params
    }

    pub fn layout(&self) -> Vec<ParamSpec> {
        layout(&self.config)
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(DiffTensor::len).sum()
    }

    pub fn bands(&self) -> usize {
        self.config.bands
    }

    pub fn trunk_conv_count(&self) -> usize {
        self.layout().iter().filter(|s| s.role == ParamRole::TrunkConv && s.is_weight).count()
    }

    pub fn attention_module_count(&self) -> usize {
        self.layout().iter().filter(|s| s.role == ParamRole::AttentionSpatial && s.is_weight).count()
    }

    /// Copy with every trunk-conv parameter set to zero; forward then
    /// returns `M̃` exactly.
    pub fn zero_trunk(&self) -> Self {
        let params = self
            .layout()
            .iter()
            .zip(&self.params)
            .map(|(s, p)| match s.role {
                ParamRole::TrunkConv => DiffTensor::zeros(p.shape()).expect("valid shape"),
                _ => p.clone(),
            })
            .collect();
        Self {
            config: self.config.clone(),
            seed: self.seed,
            params,
        }
    }

    pub fn forward(&self, pan: &PanRaster, mt: &Raster) -> Result<DiffTensor> {
        if pan.dims() != mt.dims() {
            return Err(Error::contract(format!(
                "PAN is {:?} but the interpolated MS is {:?}",
                pan.dims(),
                mt.dims()
            )));
        }
        forward(&self.config, &self.params, &pan.to_tensor(), &mt.to_tensor())
    }
}

/// `(gain, extra scale)` for a weight tensor: gain √2 ahead of ReLU/GELU and 1
/// ahead of linear or sigmoid outputs; convs that close a residual branch
/// (output, ResBlock second conv) are further scaled by [`OUTPUT_INIT_SCALE`].
fn init_gain(name: &str) -> (f64, f64) {
    let rectified = name.starts_with("conv") || name.ends_with("conv_a.weight") || name.ends_with("mlp1.weight");
    let gain = if rectified { std::f64::consts::SQRT_2 } else { 1.0 };
    let closes_residual = name.starts_with("output") || name.ends_with("conv_b.weight");
    (gain, if closes_residual { OUTPUT_INIT_SCALE } else { 1.0 })
}

/// He-style fan-in initialisation; biases zero.
pub fn init_model(cfg: &ModelConfig, seed: u64) -> Result<ModelWeights> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = layout(cfg)
        .iter()
        .map(|s| {
            if !s.is_weight {
                return DiffTensor::zeros(s.shape);
            }
            let fan_in = s.shape[1] * s.shape[2] * s.shape[3];
            let (gain, scale) = init_gain(&s.name);
            let normal = Normal::new(0.0, gain * (1.0 / fan_in as f64).sqrt()).expect("positive std");
            let n = s.shape.iter().product();
            DiffTensor::new(s.shape, (0..n).map(|_| scale * normal.sample(&mut rng)).collect())
        })
        .collect::<Result<Vec<_>>>()?;
    ModelWeights::from_params(cfg.clone(), seed, params)
}

struct Cursor<'a> {
    params: &'a [DiffTensor],
    next: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self) -> Result<&'a DiffTensor> {
        let p = self
            .params
            .get(self.next)
            .ok_or_else(|| Error::contract("parameter list exhausted"))?;
        self.next += 1;
        Ok(p)
    }

    fn conv(&mut self) -> Result<(&'a DiffTensor, &'a DiffTensor)> {
        Ok((self.take()?, self.take()?))
    }

    fn cbam(&mut self) -> Result<CbamParams<'a>> {
        Ok(CbamParams {
            mlp1: self.conv()?,
            mlp2: self.conv()?,
            spatial: self.conv()?,
        })
    }

    fn resblock(&mut self) -> Result<ResBlockParams<'a>> {
        Ok(ResBlockParams {
            conv_a: self.conv()?,
            conv_b: self.conv()?,
        })
    }
}

/// Differentiable forward pass on `(1, ·, H, W)` tensors. `params` may be
/// tape leaves.
pub fn forward(cfg: &ModelConfig, params: &[DiffTensor], pan: &DiffTensor, mt: &DiffTensor) -> Result<DiffTensor> {
    let [pn, pc, ph, pw] = pan.shape();
    let [mn, mc, mh, mw] = mt.shape();
    if pn != 1 || mn != 1 || pc != 1 || (ph, pw) != (mh, mw) {
        return Err(Error::contract(format!(
            "forward needs PAN (1,1,H,W) and M̃ (1,B,H,W), got {:?} and {:?}",
            pan.shape(),
            mt.shape()
        )));
    }
    if mc != cfg.bands {
        return Err(Error::contract(format!("model has {} bands, M̃ has {mc}", cfg.bands)));
    }
    let inv = 1.0 / cfg.input_scale;
    let mut cur = Cursor { params, next: 0 };
    let x = DiffTensor::concat_channels(&[&mt.mul_scalar(inv)?, &pan.mul_scalar(inv)?])?.add_scalar(-0.5)?;
    let x = layers::conv(&x, cur.conv()?)?.relu()?;
    let x = layers::conv(&x, cur.conv()?)?.relu()?;
    let x = rcbam(&x, &cur.cbam()?)?;
    let x = resblock(&x, &cur.resblock()?)?;
    let x = rcbam(&x, &cur.cbam()?)?;
    let x = resblock(&x, &cur.resblock()?)?;
    let residual = layers::conv(&x, cur.conv()?)?;
    if cur.next != params.len() {
        return Err(Error::contract(format!("{} unused parameter tensors", params.len() - cur.next)));
    }
    mt.add(&residual.mul_scalar(cfg.input_scale)?)
}
