//! Tile descriptors for fast-TA clustering.
//!
//! The default descriptor is hand-crafted and scale-normalised (intensities
//! divided by the radiometric span `hi − lo`):
//!
//! | entries | content                                              |
//! |---------|------------------------------------------------------|
//! | 2B      | per-band mean and standard deviation of M̃            |
//! | 2       | mean and std of the PAN gradient magnitude           |
//! | 16      | PAN histogram over the radiometric range, sums to 1  |
//! | B       | mean PAN–band correlation over 16×16 blocks          |
//!
//! Length `3B + 18`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{corrcoef, DEFAULT_EPS};
use crate::raster::{PanRaster, Raster};

pub const HISTOGRAM_BINS: usize = 16;
const CORR_BLOCK: usize = 16;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DescriptorVariant {
    #[default]
    Handcrafted,
}

/// A per-tile feature extractor; implement this to plug in a learned one.
pub trait TileDescriptor: Sync {
    fn len(&self, bands: usize) -> usize;
    fn describe(&self, pan: &PanRaster, mt: &Raster) -> Result<Vec<f64>>;
}

pub struct Handcrafted;

impl TileDescriptor for Handcrafted {
    fn len(&self, bands: usize) -> usize {
        3 * bands + 18
    }

    fn describe(&self, pan: &PanRaster, mt: &Raster) -> Result<Vec<f64>> {
        extract_tile_features(pan, mt)
    }
}

impl DescriptorVariant {
    pub fn extractor(&self) -> &'static dyn TileDescriptor {
        match self {
            DescriptorVariant::Handcrafted => &Handcrafted,
        }
    }
}

pub fn feature_len(bands: usize) -> usize {
    Handcrafted.len(bands)
}

fn mean_std(v: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = v.clone().count().max(1) as f64;
    let mean = v.clone().sum::<f64>() / n;
    let var = v.map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.max(0.0).sqrt())
}

pub fn extract_tile_features(pan: &PanRaster, mt: &Raster) -> Result<Vec<f64>> {
    let (h, w) = pan.dims();
    if mt.dims() != (h, w) {
        return Err(Error::contract(format!("tile PAN {:?} vs M̃ {:?}", pan.dims(), mt.dims())));
    }
    let (lo, hi) = pan.radiometric_range();
    let span = if hi > lo { hi - lo } else { 1.0 };
    let bands = mt.bands();
    let mut f = Vec::with_capacity(feature_len(bands));

    for b in 0..bands {
        let (m, s) = mean_std(mt.band(b).iter().copied());
        f.push((m - lo) / span);
        f.push(s / span);
    }

    let p = pan.values();
    let grad = (0..h).flat_map(|i| {
        (0..w).map(move |j| {
            let gx = p[i * w + (j + 1).min(w - 1)] - p[i * w + j];
            let gy = p[(i + 1).min(h - 1) * w + j] - p[i * w + j];
            (gx * gx + gy * gy).sqrt()
        })
    });
    let (gm, gs) = mean_std(grad);
    f.push(gm / span);
    f.push(gs / span);

    let mut hist = [0.0; HISTOGRAM_BINS];
    for &v in p {
        let t = ((v - lo) / span * HISTOGRAM_BINS as f64).floor();
        hist[(t.max(0.0) as usize).min(HISTOGRAM_BINS - 1)] += 1.0;
    }
    f.extend(hist.iter().map(|c| c / p.len() as f64));

    let blk = CORR_BLOCK.min(h).min(w);
    let mut pb = Vec::with_capacity(blk * blk);
    let mut mb = Vec::with_capacity(blk * blk);
    for b in 0..bands {
        let band = mt.band(b);
        let (mut sum, mut count) = (0.0, 0usize);
        for bi in (0..=h - blk).step_by(blk) {
            for bj in (0..=w - blk).step_by(blk) {
                pb.clear();
                mb.clear();
                for i in bi..bi + blk {
                    pb.extend_from_slice(&p[i * w + bj..i * w + bj + blk]);
                    mb.extend_from_slice(&band[i * w + bj..i * w + bj + blk]);
                }
                if let Some(r) = corrcoef(&pb, &mb, DEFAULT_EPS)? {
                    sum += r;
                    count += 1;
                }
            }
        }
        f.push(if count > 0 { sum / count as f64 } else { 0.0 });
    }
    debug_assert_eq!(f.len(), feature_len(bands));
    Ok(f)
}
