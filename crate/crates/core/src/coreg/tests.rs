use super::*;
use crate::raster::{make_synthetic_scene, SceneConfig};

fn scene(seed: u64, size: usize, shifts: Vec<[f64; 2]>) -> crate::raster::SyntheticScene {
    let bands = shifts.len();
    make_synthetic_scene(&SceneConfig::new(seed, size, bands).with_shifts(AlignmentVector::new(shifts).unwrap()))
        .unwrap()
}

#[test]
fn grid_has_169_candidates_in_tie_break_order() {
    let g = shift_grid();
    assert_eq!(g.len(), 169);
    assert_eq!(g[0], (0.0, 0.0));
    assert_eq!(&g[1..5], &[(-0.5, 0.0), (0.0, -0.5), (0.0, 0.5), (0.5, 0.0)]);
    assert!(g.iter().all(|&(x, y)| x.abs() <= 3.0 && y.abs() <= 3.0));
}

#[test]
fn alignment_vector_validates_the_grid() {
    assert!(AlignmentVector::new(vec![[0.25, 0.0]]).is_err());
    assert!(AlignmentVector::new(vec![[3.5, 0.0]]).is_err());
    let a = AlignmentVector::new(vec![[2.0, -1.5], [0.0, 0.0]]).unwrap();
    let json = serde_json::to_string(&a).unwrap();
    assert_eq!(json, "[[2.0,-1.5],[0.0,0.0]]");
    assert_eq!(serde_json::from_str::<AlignmentVector>(&json).unwrap(), a);
    assert!(serde_json::from_str::<AlignmentVector>("[[0.3,0.0]]").is_err());
}

#[test]
fn unshifted_scene_gives_zero_shifts() {
    let s = scene(21, 128, vec![[0.0, 0.0]; 4]);
    let spec = SensorSpec::generic(4);
    let product = estimate_band_shifts(&s.pan, &s.ms, &spec).unwrap();
    assert!(product.shifts.is_zero(), "{:?}", product.shifts);
    assert_eq!(product.rho_max.sigma, 16);
}

#[test]
fn known_shift_is_recovered_and_beats_zero() {
    let s = scene(22, 128, vec![[0.0, 0.0], [2.0, -1.5], [-0.5, 1.0]]);
    let spec = SensorSpec::generic(3);
    let product = estimate_band_shifts(&s.pan, &s.ms, &spec).unwrap();
    assert_eq!(product.shifts, s.record.band_shifts);
    for b in 0..3 {
        assert!(product.scores[b].unwrap() >= product.zero_scores[b].unwrap());
    }
}

#[test]
fn returned_shift_maximizes_the_exhaustive_score() {
    let s = scene(23, 64, vec![[1.0, 0.5], [0.0, 0.0]]);
    let spec = SensorSpec::generic(2);
    let product = estimate_band_shifts(&s.pan, &s.ms, &spec).unwrap();
    let (plp, mt) = analysis_inputs(&s.pan, &s.ms, &spec).unwrap();
    let region = Rect::inset(64, 64, 3);
    for b in 0..2 {
        let band = mt.extract_band(b);
        let score = |dx: f64, dy: f64| {
            let (sh, _) = shift_subpixel(&plp, dx, dy).unwrap();
            let f = local_correlation_field(&sh, &band, 16, 1e-8, Some(region)).unwrap();
            f.band_mean(0).unwrap()
        };
        let (bx, by) = product.shifts.get(b);
        let best = score(bx, by);
        assert!((best - product.scores[b].unwrap()).abs() < 1e-9);
        for &(dx, dy) in shift_grid().iter() {
            assert!(score(dx, dy) <= best + 1e-12, "band {b} candidate ({dx},{dy})");
        }
    }
}

#[test]
fn constant_band_has_an_invalid_field() {
    let s = scene(24, 64, vec![[0.0, 0.0]; 2]);
    let mut data = s.ms.data().to_vec();
    let n = 16 * 16;
    data[n..].fill(400.0);
    let ms = Raster::new(2, 16, 16, data, s.ms.radiometric_range()).unwrap();
    let spec = SensorSpec::generic(2);
    let field = reference_correlation_field(&s.pan, &ms, &spec).unwrap();
    assert!(field.mask().band(1).iter().all(|&v| !v));
    assert!(field.mask().band(0).iter().any(|&v| v));
    let product = estimate_band_shifts(&s.pan, &ms, &spec).unwrap();
    assert_eq!(product.scores[1], None);
    assert_eq!(product.shifts.get(1), (0.0, 0.0));
}

#[test]
fn affine_scene_has_unit_reference_correlation() {
    // P = T and each HR band an affine function of T: after matched
    // filtering the two stay nearly affine, so ρmax ≈ 1.
    let (h, w) = (64, 64);
    let t: Vec<f64> = (0..h * w)
        .map(|k| {
            let (i, j) = ((k / w) as f64, (k % w) as f64);
            500.0 + 150.0 * (0.21 * i).sin() + 120.0 * (0.17 * j + 0.3).cos()
        })
        .collect();
    let pan = PanRaster::new(h, w, t.clone(), (0.0, 2047.0)).unwrap();
    let hr = Raster::from_bands(
        vec![t.iter().map(|v| 0.8 * v + 20.0).collect(), t.iter().map(|v| 1.3 * v - 50.0).collect()],
        h,
        w,
        (0.0, 2047.0),
    )
    .unwrap();
    let spec = SensorSpec::generic(2);
    let ms = crate::raster::mtf_downscale(&hr, &spec).unwrap();
    let field = reference_correlation_field(&pan, &ms, &spec).unwrap();
    for b in 0..2 {
        let mean = field.band_mean(b).unwrap();
        assert!(mean > 0.95, "band {b}: {mean}");
    }
}

#[test]
fn tiny_images_lack_support() {
    let pan = PanRaster::new(20, 20, (0..400).map(|k| k as f64).collect(), (0.0, 400.0)).unwrap();
    let ms = Raster::new(1, 5, 5, (0..25).map(|k| k as f64).collect(), (0.0, 400.0)).unwrap();
    assert!(matches!(
        estimate_band_shifts(&pan, &ms, &SensorSpec::generic(1)),
        Err(Error::InsufficientSupport(_))
    ));
}

#[test]
fn crop_keeps_shifts_and_slices_the_field() {
    let s = scene(25, 64, vec![[0.5, 0.0]]);
    let product = estimate_band_shifts(&s.pan, &s.ms, &SensorSpec::generic(1)).unwrap();
    let c = product.crop(16, 8, 32, 24).unwrap();
    assert_eq!(c.rho_max.dims(), (32, 24));
    assert_eq!(c.shifts, product.shifts);
    assert_eq!(c.rho_max.band(0)[0], product.rho_max.band(0)[16 * 64 + 8]);
}
