//! Target adaptation (fine-tuning pre-trained weights on the image to be
//! fused), pretraining, and the fast-TA tile selection pipeline:
//! tiling → descriptors → PCA → k-means → medoid tiles.

mod features;
mod kmeans;
mod optim;
mod pca;
mod tiles;

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::coreg::CoregistrationProduct;
use crate::error::{Error, Result};
use crate::loss::{JesseLoss, LossBreakdown, LossConfig};
use crate::model::{forward, ModelWeights};
use crate::raster::{upsample_poly23, PanRaster, Raster, SensorSpec};
use crate::tensor::{DiffTensor, GradTape};

pub use features::{extract_tile_features, feature_len, DescriptorVariant, Handcrafted, TileDescriptor, HISTOGRAM_BINS};
pub use kmeans::{kmeans_medoids, Clustering};
pub use optim::Adam;
pub use pca::{pca3, Pca3};
pub use tiles::{select_tiles, select_tiles_with, tile_grid, TileAnchor, TileSet};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaptConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Target-adaptation iterations.
    pub iterations: usize,
    /// Pretraining epochs.
    pub epochs: usize,
    pub seed: u64,
    /// Fast-TA tile side at PAN scale.
    pub tile_size: usize,
    pub clusters: usize,
    pub descriptor: DescriptorVariant,
    /// Fail instead of reducing the cluster count when too few tiles exist.
    pub strict: bool,
    /// Record wall-clock time per iteration (disable for byte-identical logs).
    pub record_wall_time: bool,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            iterations: 100,
            epochs: 10,
            seed: 0,
            tile_size: 256,
            clusters: 16,
            descriptor: DescriptorVariant::default(),
            strict: false,
            record_wall_time: true,
        }
    }
}

impl AdaptConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::contract(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::contract(format!("{name} must lie in [0, 1), got {b}")));
            }
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::contract("epsilon must be positive"));
        }
        if self.tile_size == 0 || self.clusters == 0 {
            return Err(Error::contract("tile_size and clusters must be positive"));
        }
        Ok(())
    }
}

/// One line of the adaptation log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub total: f64,
    pub d_lambda: f64,
    pub ergas: f64,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub l1: f64,
    pub spatial: f64,
    pub wall_ms: f64,
}

fn is_zero(v: &f64) -> bool {
    *v == 0.0
}

impl IterationRecord {
    fn new(iter: usize, bd: &LossBreakdown, wall_ms: f64) -> Self {
        Self {
            iter,
            total: bd.total,
            d_lambda: bd.spectral_dlambda,
            ergas: bd.spectral_ergas,
            l1: bd.spectral_l1,
            spatial: bd.spatial,
            wall_ms,
        }
    }
}

/// Writes one JSON object per line.
pub fn write_log(path: &Path, records: &[IterationRecord]) -> Result<()> {
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.push(b'\n');
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

/// One (PAN, M̃, loss) triple the network is tuned on.
pub struct TuningSample {
    pub pan: DiffTensor,
    pub mt: DiffTensor,
    pub loss: JesseLoss,
    /// `(row, col)` of the sample in the full PAN image.
    pub origin: (usize, usize),
}

impl TuningSample {
    pub fn new(pan: &PanRaster, mt: &Raster, ms: &Raster, product: &CoregistrationProduct, spec: &SensorSpec, loss: &LossConfig) -> Result<Self> {
        Ok(Self {
            pan: pan.to_tensor(),
            mt: mt.to_tensor(),
            loss: JesseLoss::new(pan, ms, product, spec, loss)?,
            origin: (0, 0),
        })
    }

    pub fn pixels(&self) -> usize {
        let [_, _, h, w] = self.pan.shape();
        h * w
    }
}

/// The data a target-adaptation run iterates over.
pub struct TuningSet {
    pub samples: Vec<TuningSample>,
}

impl TuningSet {
    /// Whole-image adaptation.
    pub fn whole(pan: &PanRaster, ms: &Raster, product: &CoregistrationProduct, spec: &SensorSpec, loss: &LossConfig) -> Result<Self> {
        let mt = upsample_poly23(ms, spec.ratio)?;
        Ok(Self {
            samples: vec![TuningSample::new(pan, &mt, ms, product, spec, loss)?],
        })
    }

    /// Fast TA: the selected tiles, each with the coregistration product
    /// (computed once on the full image) cropped to it.
    pub fn from_tiles(
        pan: &PanRaster,
        ms: &Raster,
        mt: &Raster,
        product: &CoregistrationProduct,
        spec: &SensorSpec,
        loss: &LossConfig,
        tiles: &TileSet,
    ) -> Result<Self> {
        let (r, c) = (spec.ratio, tiles.tile_size);
        let samples = tiles
            .anchors
            .iter()
            .map(|a| {
                let mut s = TuningSample::new(
                    &pan.crop(a.row, a.col, c, c)?,
                    &mt.crop(a.row, a.col, c, c)?,
                    &ms.crop(a.row / r, a.col / r, c / r, c / r)?,
                    &product.crop(a.row, a.col, c, c)?,
                    spec,
                    loss,
                )?;
                s.origin = (a.row, a.col);
                Ok(s)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { samples })
    }

    pub fn pixels(&self) -> usize {
        self.samples.iter().map(TuningSample::pixels).sum()
    }
}

/// Loss (mean over `samples`) and its gradient with respect to every
/// parameter tensor.
pub fn loss_and_gradient(w: &ModelWeights, samples: &[&TuningSample]) -> Result<(LossBreakdown, Vec<Vec<f64>>)> {
    if samples.is_empty() {
        return Err(Error::contract("no tuning samples"));
    }
    if let Some(p) = w.layout().iter().zip(w.params()).find(|(_, p)| !p.all_finite()) {
        return Err(Error::NumericFailure(format!("non-finite weight in {}", p.0.name)));
    }
    let k = 1.0 / samples.len() as f64;
    let mut grads: Vec<Vec<f64>> = w.params().iter().map(|p| vec![0.0; p.len()]).collect();
    let mut mean = LossBreakdown::default();
    for s in samples {
        let tape = GradTape::new();
        let leaves = w.params().iter().map(|p| tape.leaf(p)).collect::<Result<Vec<_>>>()?;
        let fused = forward(&w.config, &leaves, &s.pan, &s.mt)?;
        let (loss, bd) = s.loss.evaluate(&fused)?;
        let g = loss.backward()?;
        for (acc, leaf) in grads.iter_mut().zip(&leaves) {
            if let Some(gl) = g.get(leaf) {
                acc.iter_mut().zip(gl.values()).for_each(|(a, v)| *a += k * v);
            }
        }
        mean.total += k * bd.total;
        mean.spectral_dlambda += k * bd.spectral_dlambda;
        mean.spectral_ergas += k * bd.spectral_ergas;
        mean.spectral_l1 += k * bd.spectral_l1;
        mean.spatial += k * bd.spatial;
        mean.active_fraction += k * bd.active_fraction;
    }
    if !mean.total.is_finite() {
        return Err(Error::NumericFailure(format!("non-finite loss {}", mean.total)));
    }
    if let Some(i) = grads.iter().flatten().position(|v| !v.is_finite()) {
        return Err(Error::NumericFailure(format!("non-finite gradient at parameter element {i}")));
    }
    Ok((mean, grads))
}

/// Why an adaptation run stopped early.
#[derive(Clone, Debug, PartialEq)]
pub struct Abort {
    pub iteration: usize,
    pub reason: String,
}

/// Result of an optimisation run. On a numeric failure `weights` are the
/// last weights whose loss evaluated finitely (those of the final trajectory
/// record) and `abort` says where it happened.
#[derive(Clone, Debug)]
pub struct AdaptOutcome {
    pub weights: ModelWeights,
    pub trajectory: Vec<IterationRecord>,
    pub abort: Option<Abort>,
}

impl AdaptOutcome {
    /// Turns an aborted run into [`Error::NumericFailure`].
    pub fn into_result(self) -> Result<(ModelWeights, Vec<IterationRecord>)> {
        match self.abort {
            Some(a) => Err(Error::NumericFailure(format!("adaptation aborted at iteration {}: {}", a.iteration, a.reason))),
            None => Ok((self.weights, self.trajectory)),
        }
    }
}

struct Stepper<'a> {
    cfg: &'a AdaptConfig,
    weights: ModelWeights,
    /// Weights at the most recent finite loss evaluation.
    last_good: ModelWeights,
    adam: Adam,
    trajectory: Vec<IterationRecord>,
}

impl<'a> Stepper<'a> {
    fn new(w0: &ModelWeights, cfg: &'a AdaptConfig) -> Self {
        Self {
            cfg,
            weights: w0.clone(),
            last_good: w0.clone(),
            adam: Adam::new(w0, cfg),
            trajectory: Vec::new(),
        }
    }

    /// One gradient step; `Err` carries the abort reason.
    fn step(&mut self, samples: &[&TuningSample]) -> std::result::Result<(), Abort> {
        let iter = self.trajectory.len();
        let abort = |e: Error| Abort {
            iteration: iter,
            reason: e.to_string(),
        };
        let start = Instant::now();
        let (bd, grads) = loss_and_gradient(&self.weights, samples).map_err(abort)?;
        let next = self.adam.step(&self.weights, &grads).map_err(abort)?;
        self.last_good = std::mem::replace(&mut self.weights, next);
        let wall = if self.cfg.record_wall_time {
            start.elapsed().as_secs_f64() * 1e3
        } else {
            0.0
        };
        self.trajectory.push(IterationRecord::new(iter, &bd, wall));
        Ok(())
    }

    fn finish(self, abort: Option<Abort>) -> AdaptOutcome {
        AdaptOutcome {
            weights: if abort.is_some() { self.last_good } else { self.weights },
            trajectory: self.trajectory,
            abort,
        }
    }
}

/// `cfg.iterations` adaptive-moment steps on the full tuning set (all
/// samples contribute to every step). The trajectory records the loss
/// evaluated before each step.
pub fn target_adapt(w0: &ModelWeights, data: &TuningSet, cfg: &AdaptConfig) -> Result<AdaptOutcome> {
    cfg.validate()?;
    let samples: Vec<&TuningSample> = data.samples.iter().collect();
    let mut st = Stepper::new(w0, cfg);
    for _ in 0..cfg.iterations {
        if let Err(a) = st.step(&samples) {
            return Ok(st.finish(Some(a)));
        }
    }
    Ok(st.finish(None))
}

/// Epoch loop over shuffled crops, one step per crop.
pub fn pretrain(w0: &ModelWeights, dataset: &[TuningSample], cfg: &AdaptConfig) -> Result<AdaptOutcome> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::contract("pretraining needs at least one crop"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut st = Stepper::new(w0, cfg);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            if let Err(a) = st.step(&[&dataset[i]]) {
                return Ok(st.finish(Some(a)));
            }
        }
    }
    Ok(st.finish(None))
}

/// Full-image inference without recording a tape.
pub fn fuse(w: &ModelWeights, pan: &PanRaster, ms: &Raster, spec: &SensorSpec) -> Result<Raster> {
    let mt = upsample_poly23(ms, spec.ratio)?;
    let out = w.forward(pan, &mt)?;
    Raster::from_tensor(&out, ms.radiometric_range())
}
