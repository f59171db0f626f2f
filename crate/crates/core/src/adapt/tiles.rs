use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::features::TileDescriptor;
use super::{kmeans_medoids, pca3, AdaptConfig};
use crate::error::{Error, Result};
use crate::raster::{PanRaster, Raster};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileAnchor {
    pub row: usize,
    pub col: usize,
}

/// The fast-TA tuning tiles: one medoid tile per cluster.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TileSet {
    pub tile_size: usize,
    pub anchors: Vec<TileAnchor>,
    /// Cluster id of each selected tile (`anchors[i]` represents cluster `cluster[i]`).
    pub cluster: Vec<usize>,
    /// Descriptor of each selected tile.
    pub features: Vec<Vec<f64>>,
    /// Number of candidate tiles in the grid.
    pub candidates: usize,
    /// Explained-variance fractions of the three principal components.
    pub explained: [f64; 3],
}

/// Non-overlapping `c × c` grid, row-major; partial tiles at the right and
/// bottom edges are dropped.
pub fn tile_grid(height: usize, width: usize, c: usize) -> Vec<TileAnchor> {
    if c == 0 {
        return Vec::new();
    }
    (0..height / c)
        .flat_map(|i| (0..width / c).map(move |j| TileAnchor { row: i * c, col: j * c }))
        .collect()
}

/// Per-feature z-scores across tiles; constant features map to 0.
fn standardise(features: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = features.len() as f64;
    let d = features[0].len();
    let stats: Vec<(f64, f64)> = (0..d)
        .map(|j| {
            let m = features.iter().map(|f| f[j]).sum::<f64>() / n;
            let v = features.iter().map(|f| (f[j] - m).powi(2)).sum::<f64>() / n;
            (m, v.sqrt())
        })
        .collect();
    features
        .iter()
        .map(|f| {
            f.iter()
                .zip(&stats)
                .map(|(x, (m, s))| if *s > 1e-12 { (x - m) / s } else { 0.0 })
                .collect()
        })
        .collect()
}

/// Tiles → descriptors → standardisation → PCA(3) → k-means medoids.
/// `mt` is the interpolated MS at PAN scale.
pub fn select_tiles(pan: &PanRaster, mt: &Raster, cfg: &AdaptConfig) -> Result<TileSet> {
    select_tiles_with(pan, mt, cfg, cfg.descriptor.extractor())
}

pub fn select_tiles_with(pan: &PanRaster, mt: &Raster, cfg: &AdaptConfig, descriptor: &dyn TileDescriptor) -> Result<TileSet> {
    cfg.validate()?;
    if pan.dims() != mt.dims() {
        return Err(Error::contract(format!("PAN {:?} vs M̃ {:?}", pan.dims(), mt.dims())));
    }
    let c = cfg.tile_size;
    let (h, w) = pan.dims();
    let grid = tile_grid(h, w, c);
    let mut k = cfg.clusters;
    if grid.len() < k {
        let msg = format!("{h}x{w} holds {} tiles of {c}x{c}, fewer than {k} clusters", grid.len());
        if cfg.strict || grid.is_empty() {
            return Err(Error::InsufficientSupport(msg));
        }
        log::warn!("{msg}; using {} clusters", grid.len());
        k = grid.len();
    }
    let features = grid
        .par_iter()
        .map(|a| descriptor.describe(&pan.crop(a.row, a.col, c, c)?, &mt.crop(a.row, a.col, c, c)?))
        .collect::<Result<Vec<_>>>()?;

    let (medoids, clusters, explained) = if k == grid.len() {
        ((0..k).collect::<Vec<_>>(), (0..k).collect::<Vec<_>>(), [0.0; 3])
    } else {
        let z = standardise(&features);
        let (points, explained) = if z.len() >= 4 {
            let p = pca3(&z)?;
            (p.projections, p.explained)
        } else {
            let pts = z.iter().map(|f| [0, 1, 2].map(|i| f.get(i).copied().unwrap_or(0.0))).collect();
            (pts, [0.0; 3])
        };
        let cl = kmeans_medoids(&points, k, cfg.seed)?;
        (cl.medoids, (0..k).collect(), explained)
    };
    Ok(TileSet {
        tile_size: c,
        anchors: medoids.iter().map(|&i| grid[i]).collect(),
        cluster: clusters,
        features: medoids.iter().map(|&i| features[i].clone()).collect(),
        candidates: grid.len(),
        explained,
    })
}
