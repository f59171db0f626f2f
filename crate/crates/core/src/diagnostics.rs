//! Finite-difference gradient suite: every differentiable op plus the
//! composed JESSE loss on a small synthetic pair. Shared by the `gradcheck`
//! command and the test suite.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::coreg::{AlignmentVector, CoregistrationProduct};
use crate::error::Result;
use crate::loss::{JesseLoss, LossConfig};
use crate::metrics::CorrelationField;
use crate::raster::{make_synthetic_scene, upsample_poly23, PanRaster, Raster, SceneConfig, SensorSpec, ValidityMask};
use crate::tensor::{grad_check, numel, DiffTensor, Padding, Shape};

#[derive(Clone, Debug, Serialize)]
pub struct SuiteCase {
    pub name: String,
    pub passed: bool,
    pub max_rel_error: f64,
    pub checked: usize,
    pub excluded: usize,
}

fn random(shape: Shape, seed: u64, lo: f64, hi: f64) -> DiffTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DiffTensor::new(shape, (0..numel(&shape)).map(|_| rng.gen_range(lo..hi)).collect()).expect("non-empty shape")
}

/// Uniform values in (−2, 2) at least `margin` away from every kink.
fn away_from(shape: Shape, seed: u64, kinks: &[f64], margin: f64) -> DiffTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v = (0..numel(&shape))
        .map(|_| loop {
            let x: f64 = rng.gen_range(-2.0..2.0);
            if kinks.iter().all(|k| (x - k).abs() >= margin) {
                break x;
            }
        })
        .collect();
    DiffTensor::new(shape, v).expect("non-empty shape")
}

/// Scalarises with fixed random weights so every output gets its own cotangent.
fn weighted(y: &DiffTensor, seed: u64) -> Result<DiffTensor> {
    y.mul(&random(y.shape(), seed ^ 0xabcd, 0.5, 1.5))?.sum()
}

struct Runner {
    step: f64,
    tolerance: f64,
    cases: Vec<SuiteCase>,
}

impl Runner {
    fn run<F>(&mut self, name: &str, f: F, point: &DiffTensor) -> Result<()>
    where
        F: Fn(&DiffTensor) -> Result<DiffTensor>,
    {
        let r = grad_check(f, point, self.step, self.tolerance)?;
        self.cases.push(SuiteCase {
            name: name.into(),
            passed: r.passed,
            max_rel_error: r.max_rel_error,
            checked: r.entries.len(),
            excluded: r.excluded().count(),
        });
        Ok(())
    }
}

fn scaled(r: &Raster, k: f64) -> Result<Raster> {
    Raster::new(r.bands(), r.height(), r.width(), r.data().iter().map(|v| v * k).collect(), (0.0, 1.0))
}

/// JESSE total on a normalised 4-band 16×16 scene, at the midpoint between
/// the interpolated MS and the ground truth.
fn jesse_case() -> Result<(JesseLoss, DiffTensor)> {
    let s = make_synthetic_scene(&SceneConfig::new(8, 16, 4))?;
    let k = 1.0 / 2047.0;
    let (gt, ms) = (scaled(&s.ground_truth, k)?, scaled(&s.ms, k)?);
    let pan = PanRaster::from_raster(scaled(s.pan.as_raster(), k)?)?;
    let spec = SensorSpec::generic(4);
    let (h, w) = pan.dims();
    // a fixed ρmax field in (0.2, 1): every spatial entry can be active
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let rho = (0..4 * h * w).map(|_| rng.gen_range(0.2..1.0)).collect();
    let product = CoregistrationProduct {
        rho_max: CorrelationField::new(16, rho, ValidityMask::all_valid(4, h, w))?,
        shifts: AlignmentVector::zeros(4),
        scores: vec![None; 4],
        zero_scores: vec![None; 4],
    };
    let loss = JesseLoss::new(&pan, &ms, &product, &spec, &LossConfig::default())?;
    let up = upsample_poly23(&ms, 4)?;
    let mid = up.data().iter().zip(gt.data()).map(|(a, b)| 0.5 * (a + b)).collect();
    Ok((loss, DiffTensor::new([1, 4, h, w], mid)?))
}

/// Runs the full suite at the given finite-difference step and relative
/// tolerance.
pub fn gradient_suite(step: f64, tolerance: f64) -> Result<Vec<SuiteCase>> {
    let mut r = Runner {
        step,
        tolerance,
        cases: Vec::new(),
    };

    let x = random([1, 3, 4, 4], 22, 0.5, 1.5);
    let b = random([1, 3, 1, 1], 20, 0.5, 1.5);
    let c = random([1, 1, 4, 4], 21, 0.5, 1.5);
    r.run("add", |x| weighted(&x.add(&b)?, 1), &x)?;
    r.run("sub", |x| weighted(&c.sub(x)?, 2), &x)?;
    r.run("mul", |x| weighted(&x.mul(&c)?, 3), &x)?;
    r.run("div", |x| weighted(&c.div(x)?.add(&x.div(&b)?)?, 4), &x)?;
    r.run("add_scalar", |x| weighted(&x.add_scalar(0.3)?, 5), &x)?;
    r.run("mul_scalar", |x| weighted(&x.mul_scalar(-1.7)?, 6), &x)?;
    r.run("rsub_scalar", |x| weighted(&x.rsub_scalar(2.0)?, 7), &x)?;

    let pos = random([1, 2, 3, 3], 24, 0.2, 2.0);
    let any = random([1, 2, 3, 3], 25, -2.0, 2.0);
    let off_zero = away_from([1, 2, 3, 3], 26, &[0.0], 0.05);
    let off_half = away_from([1, 2, 3, 3], 27, &[0.5], 0.05);
    r.run("sqrt", |x| weighted(&x.sqrt()?, 8), &pos)?;
    r.run("square", |x| weighted(&x.square()?, 9), &any)?;
    r.run("abs", |x| weighted(&x.abs()?, 10), &off_zero)?;
    r.run("clamp_min", |x| weighted(&x.clamp_min(0.5)?, 11), &off_half)?;
    r.run("relu", |x| weighted(&x.relu()?, 12), &off_zero)?;
    r.run("gelu", |x| weighted(&x.gelu()?, 13), &any)?;
    r.run("sigmoid", |x| weighted(&x.sigmoid()?, 14), &any)?;

    let img = random([1, 2, 9, 8], 28, -1.0, 1.0);
    r.run("sum", |x| x.sum()?.square(), &img)?;
    r.run("mean", |x| x.mean()?.square(), &img)?;
    r.run("window_mean", |x| weighted(&x.window_mean(4, 2)?, 15), &img)?;

    let cx = random([1, 2, 5, 6], 29, -1.0, 1.0);
    let cw = random([3, 2, 3, 3], 30, -1.0, 1.0);
    let cb = random([1, 3, 1, 1], 31, -1.0, 1.0);
    for (tag, pad) in [("zero", Padding::Zero), ("replicate", Padding::Replicate)] {
        r.run(&format!("conv2d[{tag}].input"), |x| weighted(&x.conv2d(&cw, Some(&cb), pad)?, 16), &cx)?;
        r.run(&format!("conv2d[{tag}].weight"), |w| weighted(&cx.conv2d(w, Some(&cb), pad)?, 17), &cw)?;
        r.run(&format!("conv2d[{tag}].bias"), |b| weighted(&cx.conv2d(&cw, Some(b), pad)?, 18), &cb)?;
    }

    let ma = random([1, 1, 3, 4], 33, -1.0, 1.0);
    let mb = random([1, 1, 4, 2], 34, -1.0, 1.0);
    r.run("matmul.lhs", |a| weighted(&a.matmul(&mb)?, 19), &ma)?;
    r.run("matmul.rhs", |b| weighted(&ma.matmul(b)?, 20), &mb)?;

    let pool = random([1, 3, 4, 4], 35, -1.0, 1.0);
    r.run("global_max_pool", |x| weighted(&x.global_max_pool()?, 21), &pool)?;
    r.run("global_avg_pool", |x| weighted(&x.global_avg_pool()?, 22), &pool)?;
    r.run("channel_max", |x| weighted(&x.channel_max()?, 23), &pool)?;
    r.run("channel_avg", |x| weighted(&x.channel_avg()?, 24), &pool)?;

    let sx = random([1, 2, 6, 6], 36, -1.0, 1.0);
    let sy = random([1, 1, 6, 6], 37, -1.0, 1.0);
    r.run("concat_channels", |x| weighted(&DiffTensor::concat_channels(&[&sy, x, &sy])?, 25), &sx)?;
    r.run("crop", |x| weighted(&x.crop([0, 1, 1, 2], [1, 1, 4, 3])?, 26), &sx)?;
    r.run("decimate", |x| weighted(&x.decimate(2, 1)?, 27), &sx)?;
    for (dx, dy) in [(0.5, 0.0), (-1.5, 2.0), (3.0, -2.5)] {
        r.run(&format!("spatial_shift({dx},{dy})"), |x| weighted(&x.spatial_shift(dx, dy)?, 28), &sx)?;
    }
    let kernels = Arc::new(vec![vec![0.25, 0.5, 0.25], vec![0.1, 0.2, 0.4, 0.2, 0.1]]);
    r.run("separable_filter", |x| weighted(&x.separable_filter(Arc::clone(&kernels))?, 29), &sx)?;

    let (loss, point) = jesse_case()?;
    r.run("jesse_total", |x| loss.evaluate(x).map(|e| e.0), &point)?;
    Ok(r.cases)
}
