use crate::error::{Error, Result};
use crate::tensor::{DiffTensor, Padding};

pub(crate) type Conv<'a> = (&'a DiffTensor, &'a DiffTensor);

pub struct ResBlockParams<'a> {
    pub conv_a: Conv<'a>,
    pub conv_b: Conv<'a>,
}

pub struct CbamParams<'a> {
    /// Shared perceptron, as 1×1 convolutions: width → hidden → width.
    pub mlp1: Conv<'a>,
    pub mlp2: Conv<'a>,
    /// `(1, 2, k, k)` over the stacked channel-max and channel-mean maps.
    pub spatial: Conv<'a>,
}

pub(crate) fn conv(x: &DiffTensor, (w, b): Conv) -> Result<DiffTensor> {
    x.conv2d(w, Some(b), Padding::Replicate)
}

fn check_channels(x: &DiffTensor, w: &DiffTensor, what: &str) -> Result<()> {
    if x.shape()[1] != w.shape()[1] {
        return Err(Error::contract(format!(
            "{what}: input has {} channels, parameters expect {}",
            x.shape()[1],
            w.shape()[1]
        )));
    }
    Ok(())
}

/// `x + conv(gelu(conv(x)))`.
pub fn resblock(x: &DiffTensor, p: &ResBlockParams) -> Result<DiffTensor> {
    check_channels(x, p.conv_a.0, "resblock")?;
    x.add(&conv(&conv(x, p.conv_a)?.gelu()?, p.conv_b)?)
}

/// Channel gains in (0, 1), shape `(1, C, 1, 1)`.
pub(crate) fn channel_gains(x: &DiffTensor, p: &CbamParams) -> Result<DiffTensor> {
    let mlp = |v: DiffTensor| -> Result<DiffTensor> { conv(&conv(&v, p.mlp1)?.relu()?, p.mlp2) };
    mlp(x.global_max_pool()?)?.add(&mlp(x.global_avg_pool()?)?)?.sigmoid()
}

/// Pixel gains in (0, 1), shape `(1, 1, H, W)`.
pub(crate) fn spatial_gains(x: &DiffTensor, p: &CbamParams) -> Result<DiffTensor> {
    let maps = DiffTensor::concat_channels(&[&x.channel_max()?, &x.channel_avg()?])?;
    conv(&maps, p.spatial)?.sigmoid()
}

/// Residual CBAM: channel attention, then spatial attention, added back
/// to the input.
pub fn rcbam(x: &DiffTensor, p: &CbamParams) -> Result<DiffTensor> {
    check_channels(x, p.mlp1.0, "rcbam")?;
    let xc = x.mul(&channel_gains(x, p)?)?;
    let attended = xc.mul(&spatial_gains(&xc, p)?)?;
    x.add(&attended)
}
