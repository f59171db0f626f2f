use super::*;
use crate::coreg::estimate_band_shifts;
use crate::metrics::{d_lambda_khan, d_rho, ergas, MetricConfig};
use crate::raster::{make_synthetic_scene, mtf_downscale, upsample_poly23, SceneConfig, SyntheticScene, ValidityMask};
use crate::tensor::{grad_check, GradCheckEntry, GradTape};

fn scene(seed: u64, size: usize, shifts: Vec<[f64; 2]>) -> SyntheticScene {
    let bands = shifts.len();
    make_synthetic_scene(&SceneConfig::new(seed, size, bands).with_shifts(AlignmentVector::new(shifts).unwrap()))
        .unwrap()
}

fn downscaled(fused: &Raster, shifts: &AlignmentVector, spec: &SensorSpec, cfg: &LossConfig) -> Raster {
    let term = SpectralTerm::new(&mtf_downscale(fused, spec).unwrap(), shifts, spec, cfg).unwrap();
    Raster::from_tensor(&term.downscale(&fused.to_tensor()).unwrap(), fused.radiometric_range()).unwrap()
}

#[test]
fn spectral_loss_vanishes_for_a_consistent_product() {
    let s = scene(1, 64, vec![[0.0, 0.0]; 4]);
    let spec = SensorSpec::generic(4);
    let ms = mtf_downscale(&s.ground_truth, &spec).unwrap();
    let (loss, bd) = spectral_loss(&s.ground_truth.to_tensor(), &ms, &AlignmentVector::zeros(4), &spec, &LossConfig::default()).unwrap();
    assert!(loss.item().unwrap() < 1e-6, "{bd:?}");
    // the scene's own MS was filtered before cropping, so it matches only in the interior
    let big = scene(1, 128, vec![[0.0, 0.0]; 4]);
    let zero = AlignmentVector::zeros(4);
    let cfg = LossConfig::default();
    let (gt, _) = spectral_loss(&big.ground_truth.to_tensor(), &big.ms, &zero, &spec, &cfg).unwrap();
    let (exp, _) = spectral_loss(&upsample_poly23(&big.ms, 4).unwrap().to_tensor(), &big.ms, &zero, &spec, &cfg).unwrap();
    assert!(gt.item().unwrap() < 0.5 * exp.item().unwrap());
}

#[test]
fn spectral_terms_match_the_metrics() {
    let s = scene(2, 128, vec![[0.0, 0.0], [1.5, -2.0], [0.0, 0.5]]);
    let spec = SensorSpec::generic(3);
    let fused = upsample_poly23(&s.ms, 4).unwrap();
    let cfg = LossConfig::default();
    let shifts = s.record.band_shifts.clone();
    let term = SpectralTerm::new(&s.ms, &shifts, &spec, &cfg).unwrap();
    assert!(term.margin() > 0);
    let parts = term.jesse(&fused.to_tensor()).unwrap();
    let down = downscaled(&fused, &shifts, &spec, &cfg);
    let m = term.margin();
    let (h, w) = s.ms.dims();
    let ms_crop = s.ms.crop(m, m, h - 2 * m, w - 2 * m).unwrap();
    let mcfg = MetricConfig::default();
    let dl = d_lambda_khan(&down, &ms_crop, &mcfg).unwrap();
    assert!((parts.d_lambda.item().unwrap() - dl).abs() < 1e-10);
    assert!((parts.ergas.item().unwrap() - ergas(&down, &ms_crop, 4).unwrap()).abs() < 1e-10);
}

#[test]
fn gamma_zero_leaves_only_d_lambda_and_beta_zero_only_spectral() {
    let s = scene(3, 64, vec![[0.0, 0.0]; 4]);
    let spec = SensorSpec::generic(4);
    let fused = upsample_poly23(&s.ms, 4).unwrap().to_tensor();
    let cfg = LossConfig {
        gamma: 0.0,
        ..Default::default()
    };
    let (loss, bd) = spectral_loss(&fused, &s.ms, &AlignmentVector::zeros(4), &spec, &cfg).unwrap();
    assert_eq!(loss.item().unwrap(), bd.spectral_dlambda);

    let product = estimate_band_shifts(&s.pan, &s.ms, &spec).unwrap();
    let cfg = LossConfig {
        beta: 0.0,
        ..Default::default()
    };
    let (total, _) = total_loss(&fused, &s.pan, &s.ms, &product, &spec, &cfg).unwrap();
    let (spectral, _) = spectral_loss(&fused, &s.ms, &product.shifts, &spec, &cfg).unwrap();
    assert_eq!(total.item().unwrap(), spectral.item().unwrap());
}

#[test]
fn correct_alignment_lowers_the_spectral_loss() {
    let s = scene(4, 128, vec![[2.0, -1.5], [0.0, 0.0], [-1.0, 2.5], [0.5, 0.5]]);
    let spec = SensorSpec::generic(4);
    let fused = s.ground_truth.to_tensor();
    let cfg = LossConfig::default();
    let (aligned, _) = spectral_loss(&fused, &s.ms, &s.record.band_shifts, &spec, &cfg).unwrap();
    let (plain, _) = spectral_loss(&fused, &s.ms, &AlignmentVector::zeros(4), &spec, &cfg).unwrap();
    assert!(aligned.item().unwrap() < plain.item().unwrap());
    assert!(aligned.item().unwrap() < 0.01);
}

#[test]
fn spatial_loss_equals_the_d_rho_metric() {
    let s = scene(5, 64, vec![[0.0, 0.0], [1.0, 0.0], [0.0, -0.5]]);
    let spec = SensorSpec::generic(3);
    let product = estimate_band_shifts(&s.pan, &s.ms, &spec).unwrap();
    for fused in [upsample_poly23(&s.ms, 4).unwrap(), s.ground_truth.clone()] {
        let (loss, _) = spatial_loss(&fused.to_tensor(), &s.pan, &product.rho_max, 4, &LossConfig::default()).unwrap();
        let metric = d_rho(&fused, &s.pan, &product.rho_max, 4, 1e-8).unwrap();
        assert!((loss.item().unwrap() - metric).abs() < 1e-10, "{} vs {metric}", loss.item().unwrap());
    }
}

#[test]
fn affine_copies_of_pan_have_zero_spatial_loss_and_gradient() {
    let s = scene(6, 32, vec![[0.0, 0.0]; 2]);
    let mut data: Vec<f64> = s.pan.values().iter().map(|v| 0.7 * v + 15.0).collect();
    data.extend(s.pan.values().iter().map(|v| 1.2 * v - 4.0));
    let fused = Raster::new(2, 32, 32, data, (0.0, 4096.0)).unwrap();
    let n = 2 * 32 * 32;
    let field = CorrelationField::new(16, vec![0.9; n], ValidityMask::all_valid(2, 32, 32)).unwrap();
    let tape = GradTape::new();
    let x = tape.leaf(&fused.to_tensor()).unwrap();
    let (loss, active) = spatial_loss(&x, &s.pan, &field, 4, &LossConfig::default()).unwrap();
    assert_eq!(active, 0.0);
    assert!(loss.item().unwrap().abs() < 1e-12);
    let g = loss.backward().unwrap();
    assert!(g.get(&x).is_none_or(|g| g.values().iter().all(|&v| v == 0.0)));
}

#[test]
fn one_descent_step_from_exp_reduces_the_spatial_loss() {
    let s = scene(7, 64, vec![[0.0, 0.0]; 4]);
    let spec = SensorSpec::generic(4);
    let product = estimate_band_shifts(&s.pan, &s.ms, &spec).unwrap();
    let exp = upsample_poly23(&s.ms, 4).unwrap().to_tensor();
    let cfg = LossConfig::default();
    let tape = GradTape::new();
    let x = tape.leaf(&exp).unwrap();
    let (l0, _) = spatial_loss(&x, &s.pan, &product.rho_max, 4, &cfg).unwrap();
    let g = l0.backward().unwrap().get(&x).unwrap().clone();
    let gnorm = g.values().iter().map(|v| v * v).sum::<f64>().sqrt();
    let step = 20.0 / gnorm;
    let moved = DiffTensor::new(exp.shape(), exp.values().iter().zip(g.values()).map(|(v, d)| v - step * d).collect()).unwrap();
    let (l1, _) = spatial_loss(&moved, &s.pan, &product.rho_max, 4, &cfg).unwrap();
    assert!(l1.item().unwrap() < l0.item().unwrap());
}

// unit radiometry keeps central differences well conditioned
fn normalized(mut s: SyntheticScene) -> SyntheticScene {
    let k = 1.0 / 2047.0;
    let scale = |r: &Raster| Raster::new(r.bands(), r.height(), r.width(), r.data().iter().map(|v| v * k).collect(), (0.0, 1.0)).unwrap();
    s.ground_truth = scale(&s.ground_truth);
    s.ms = scale(&s.ms);
    s.pan = PanRaster::from_raster(scale(s.pan.as_raster())).unwrap();
    s
}

fn small_product(s: &SyntheticScene, shifts: AlignmentVector, seed: u64) -> CoregistrationProduct {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = s.pan.dims();
    let b = s.ms.bands();
    let values = (0..b * h * w).map(|_| rng.gen_range(0.2..1.0)).collect();
    CoregistrationProduct {
        rho_max: CorrelationField::new(16, values, ValidityMask::all_valid(b, h, w)).unwrap(),
        shifts,
        scores: vec![None; b],
        zero_scores: vec![None; b],
    }
}

#[test]
fn total_loss_gradient_matches_finite_differences() {
    let s = normalized(scene(8, 16, vec![[0.0, 0.0]; 4]));
    let spec = SensorSpec::generic(4);
    let product = small_product(&s, AlignmentVector::zeros(4), 1);
    let cfg = LossConfig::default();
    let loss = JesseLoss::new(&s.pan, &s.ms, &product, &spec, &cfg).unwrap();
    // a point with real detail so no term sits at its optimum
    let start = upsample_poly23(&s.ms, 4).unwrap();
    let point = DiffTensor::new(
        [1, 4, 16, 16],
        start.data().iter().zip(s.ground_truth.data()).map(|(a, b)| 0.5 * (a + b)).collect(),
    )
    .unwrap();
    let report = grad_check(|x| loss.evaluate(x).map(|r| r.0), &point, 1e-4, 1e-3).unwrap();
    assert!(report.passed, "max rel {} failures {:?}", report.max_rel_error, report.failures().take(3).collect::<Vec<_>>());
}

#[test]
fn aligned_loss_gradient_matches_finite_differences() {
    let s = normalized(scene(9, 32, vec![[0.5, 0.0], [0.0, -1.0]]));
    let spec = SensorSpec::generic(2);
    let product = small_product(&s, s.record.band_shifts.clone(), 2);
    let cfg = LossConfig::default();
    let loss = JesseLoss::new(&s.pan, &s.ms, &product, &spec, &cfg).unwrap();
    // off the optimum: at the ground truth the spectral terms sit on their kinks
    let up = upsample_poly23(&s.ms, 4).unwrap();
    let point = DiffTensor::new(
        [1, 2, 32, 32],
        up.data().iter().zip(s.ground_truth.data()).map(|(a, b)| 0.5 * (a + b)).collect(),
    )
    .unwrap();
    // Two steps with complementary blind spots: low-variance correlation
    // windows are stiff (O(h²) truncation at 1e-4), while Q2ⁿ covariance
    // moduli near zero put kinks within reach of 1e-5. A wrong analytic
    // gradient disagrees at both.
    let coarse = grad_check(|x| loss.evaluate(x).map(|r| r.0), &point, 1e-4, 1e-3).unwrap();
    let fine = grad_check(|x| loss.evaluate(x).map(|r| r.0), &point, 1e-5, 1e-3).unwrap();
    // near-zero entries are dominated by truncation and round-off
    let scale = fine.entries.iter().map(|e| e.analytic.abs()).fold(0.0, f64::max);
    let failing = |e: &GradCheckEntry| !e.excluded && e.rel_error > 1e-3 && e.analytic.abs().max(e.numeric.abs()) > 1e-4 * scale;
    let bad: Vec<_> = fine.entries.iter().zip(&coarse.entries).filter(|(f, c)| failing(f) && failing(c)).collect();
    assert!(bad.is_empty(), "{:?}", &bad[..bad.len().min(4)]);
    assert!(fine.excluded().count() < fine.entries.len() / 4);
    let single: usize = fine.entries.iter().filter(|e| failing(e)).count();
    assert!(single < fine.entries.len() / 100, "{single} entries fail at step 1e-5");
}

#[test]
fn breakdown_identity_and_border_gradients() {
    let s = scene(10, 64, vec![[0.0, 0.0], [3.0, -3.0], [-3.0, 2.5]]);
    let spec = SensorSpec::generic(3);
    let product = estimate_band_shifts(&s.pan, &s.ms, &spec).unwrap();
    let cfg = LossConfig {
        gamma: 0.3,
        beta: 0.7,
        ..Default::default()
    };
    let tape = GradTape::new();
    let x = tape.leaf(&upsample_poly23(&s.ms, 4).unwrap().to_tensor()).unwrap();
    let (loss, bd) = total_loss(&x, &s.pan, &s.ms, &product, &spec, &cfg).unwrap();
    let recomposed = bd.spectral_dlambda + cfg.gamma * bd.spectral_ergas + bd.spectral_l1 + cfg.beta * bd.spatial;
    assert!((bd.total - recomposed).abs() < 1e-10);
    assert!((0.0..=1.0).contains(&bd.active_fraction));
    let g = loss.backward().unwrap().get(&x).unwrap().clone();
    // margin 3 MS rows, kernel radius 9, |shift| ≤ 3: only PAN rows 2..=62 are reachable
    for b in 0..3 {
        let plane = g.plane(0, b);
        assert!(plane[..2 * 64].iter().all(|&v| v == 0.0), "band {b}");
        assert!(plane[63 * 64..].iter().all(|&v| v == 0.0), "band {b}");
    }
    assert!(g.values().iter().any(|&v| v != 0.0));
}

#[test]
fn zpnn_l1_properties() {
    let s = scene(11, 32, vec![[0.0, 0.0]; 2]);
    let spec = SensorSpec::generic(2);
    let ms = mtf_downscale(&s.ground_truth, &spec).unwrap();
    let gt = s.ground_truth.to_tensor();
    assert!(zpnn_spectral_loss(&gt, &ms, &spec).unwrap().item().unwrap() < 1e-9);
    let lifted = gt.add_scalar(7.5).unwrap();
    assert!((zpnn_spectral_loss(&lifted, &ms, &spec).unwrap().item().unwrap() - 7.5).abs() < 1e-9);
    let report = grad_check(|x| zpnn_spectral_loss(x, &s.ms, &spec), &gt, 1e-4, 1e-3).unwrap();
    assert!(report.passed, "max rel {}", report.max_rel_error);

    let product = small_product(&s, AlignmentVector::zeros(2), 3);
    let cfg = LossConfig {
        variant: SpectralVariant::ZpnnL1,
        ..Default::default()
    };
    let (_, bd) = total_loss(&gt, &s.pan, &s.ms, &product, &spec, &cfg).unwrap();
    assert_eq!((bd.spectral_dlambda, bd.spectral_ergas), (0.0, 0.0));
    assert!((bd.total - (bd.spectral_l1 + bd.spatial)).abs() < 1e-12);
}

#[test]
fn invalid_configs_are_rejected() {
    let bad = LossConfig {
        gamma: -1.0,
        ..Default::default()
    };
    assert!(bad.validate().is_err());
    let bad = LossConfig {
        beta: f64::NAN,
        ..Default::default()
    };
    assert!(bad.validate().is_err());
}




