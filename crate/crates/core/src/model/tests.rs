use super::*;
use crate::raster::{make_synthetic_scene, upsample_poly23, SceneConfig};
use crate::tensor::{grad_check, Padding};

fn weighted_sum(y: &DiffTensor, seed: u64) -> Result<DiffTensor> {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = DiffTensor::new(y.shape(), (0..y.len()).map(|_| rng.gen_range(-1.0..1.0)).collect())?;
    y.mul(&w)?.sum()
}

fn random(shape: Shape, seed: u64, scale: f64) -> DiffTensor {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DiffTensor::new(shape, (0..shape.iter().product()).map(|_| scale * rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

#[test]
fn parameter_count_matches_closed_form() {
    let cfg = ModelConfig::new(4);
    assert_eq!(parameter_count(&cfg), 191_250);
    let w = init_model(&cfg, 0).unwrap();
    assert_eq!(w.parameter_count(), 191_250);
    let small = ModelConfig::new(8).with_width(16);
    // conv1 (9·16·9+16) + conv2 + 4 res convs (16·16·9+16 each) + 2 CBAM ((16+1)+(16+16)+(98+1)) + output (8·16·9+8)
    let expected = (16 * 9 * 9 + 16) + 5 * (16 * 16 * 9 + 16) + 2 * (17 + 32 + 99) + (8 * 16 * 9 + 8);
    assert_eq!(parameter_count(&small), expected);
    assert_eq!(init_model(&small, 1).unwrap().parameter_count(), expected);
}

#[test]
fn architecture_contract() {
    let w = init_model(&ModelConfig::new(4).with_width(8), 3).unwrap();
    assert_eq!(w.trunk_conv_count(), 7);
    assert_eq!(w.attention_module_count(), 2);
    let s = make_synthetic_scene(&SceneConfig::new(1, 64, 4)).unwrap();
    let mt = upsample_poly23(&s.ms, 4).unwrap();
    let out = w.forward(&s.pan, &mt).unwrap();
    assert_eq!(out.shape(), [1, 4, 64, 64]);
}

#[test]
fn same_seed_gives_identical_weights() {
    let cfg = ModelConfig::new(3).with_width(16);
    let a = init_model(&cfg, 42).unwrap();
    let b = init_model(&cfg, 42).unwrap();
    let c = init_model(&cfg, 43).unwrap();
    for (x, y) in a.params().iter().zip(b.params()) {
        assert_eq!(x.values(), y.values());
    }
    assert!(a.params().iter().zip(c.params()).any(|(x, y)| x.values() != y.values()));
    // biases start at zero
    for (s, p) in a.layout().iter().zip(a.params()) {
        if !s.is_weight {
            assert!(p.values().iter().all(|&v| v == 0.0), "{}", s.name);
        }
    }
}

#[test]
fn zero_trunk_reproduces_the_interpolated_ms_exactly() {
    let w = init_model(&ModelConfig::new(4).with_width(16), 5).unwrap().zero_trunk();
    let s = make_synthetic_scene(&SceneConfig::new(2, 32, 4)).unwrap();
    let mt = upsample_poly23(&s.ms, 4).unwrap();
    let out = w.forward(&s.pan, &mt).unwrap();
    assert_eq!(out.values(), mt.data());
}

#[test]
fn initial_output_stays_near_the_skip_path() {
    for seed in 0..3 {
        let w = init_model(&ModelConfig::new(4), seed).unwrap();
        let s = make_synthetic_scene(&SceneConfig::new(seed + 10, 32, 4)).unwrap();
        let mt = upsample_poly23(&s.ms, 4).unwrap();
        let out = w.forward(&s.pan, &mt).unwrap();
        let mad = out.values().iter().zip(mt.data()).map(|(a, b)| (a - b).abs()).sum::<f64>() / out.len() as f64;
        let (lo, hi) = mt.radiometric_range();
        assert!(mad < 0.05 * (hi - lo), "mean |M̂ − M̃| = {mad}");
    }
}

#[test]
fn size_and_band_mismatches_are_rejected() {
    let w = init_model(&ModelConfig::new(4).with_width(8), 0).unwrap();
    let s = make_synthetic_scene(&SceneConfig::new(3, 32, 4)).unwrap();
    assert!(w.forward(&s.pan, &s.ms).is_err());
    let s3 = make_synthetic_scene(&SceneConfig::new(3, 32, 3)).unwrap();
    assert!(w.forward(&s3.pan, &upsample_poly23(&s3.ms, 4).unwrap()).is_err());
    assert!(ModelWeights::from_params(w.config.clone(), 0, w.params()[1..].to_vec()).is_err());
}

#[test]
fn forward_gradients_match_finite_differences() {
    let cfg = ModelConfig {
        bands: 2,
        width: 4,
        reduction: 2,
        ..Default::default()
    };
    let w = init_model(&cfg, 7).unwrap();
    // non-zero biases so no unit starts exactly on a ReLU kink
    let params: Vec<DiffTensor> = w
        .params()
        .iter()
        .enumerate()
        .map(|(i, p)| p.add(&random(p.shape(), 100 + i as u64, 0.05)).unwrap().detach())
        .collect();
    let pan = random([1, 1, 8, 8], 1, 1000.0).add_scalar(1000.0).unwrap();
    let mt = random([1, 2, 8, 8], 2, 1000.0).add_scalar(1000.0).unwrap();
    for (k, spec) in layout(&cfg).iter().enumerate() {
        let f = |x: &DiffTensor| {
            let mut ps = params.clone();
            ps[k] = x.clone();
            weighted_sum(&forward(&cfg, &ps, &pan, &mt)?.mul_scalar(1.0 / 2048.0)?, 9)
        };
        let r = grad_check(f, &params[k], 1e-6, 1e-3).unwrap();
        assert!(r.passed, "{}: max rel {}", spec.name, r.max_rel_error);
    }
    let f = |x: &DiffTensor| weighted_sum(&forward(&cfg, &params, &pan, x)?, 9);
    let r = grad_check(f, &mt.mul_scalar(1.0).unwrap().detach(), 1e-3, 1e-3).unwrap();
    assert!(r.passed, "M̃: max rel {}", r.max_rel_error);
}

fn block_params(width: usize, hidden: usize, k: usize, seed: u64) -> Vec<DiffTensor> {
    vec![
        random([hidden, width, 1, 1], seed, 0.5),
        random([hidden, 1, 1, 1], seed + 1, 0.1),
        random([width, hidden, 1, 1], seed + 2, 0.5),
        random([width, 1, 1, 1], seed + 3, 0.1),
        random([1, 2, k, k], seed + 4, 0.2),
        random([1, 1, 1, 1], seed + 5, 0.1),
    ]
}

fn cbam_of(p: &[DiffTensor]) -> CbamParams<'_> {
    CbamParams {
        mlp1: (&p[0], &p[1]),
        mlp2: (&p[2], &p[3]),
        spatial: (&p[4], &p[5]),
    }
}

#[test]
fn resblock_identity_shape_and_gradient() {
    let x = random([1, 4, 5, 7], 1, 1.0);
    let z = [DiffTensor::zeros([4, 4, 3, 3]).unwrap(), DiffTensor::zeros([4, 1, 1, 1]).unwrap()];
    let p = ResBlockParams {
        conv_a: (&z[0], &z[1]),
        conv_b: (&z[0], &z[1]),
    };
    assert_eq!(resblock(&x, &p).unwrap().values(), x.values());

    let ws = [random([4, 4, 3, 3], 2, 0.5), random([4, 1, 1, 1], 3, 0.1), random([4, 4, 3, 3], 4, 0.5), random([4, 1, 1, 1], 5, 0.1)];
    let p = ResBlockParams {
        conv_a: (&ws[0], &ws[1]),
        conv_b: (&ws[2], &ws[3]),
    };
    assert_eq!(resblock(&x, &p).unwrap().shape(), x.shape());
    let r = grad_check(|x| weighted_sum(&resblock(x, &p)?, 1), &x, 1e-5, 1e-3).unwrap();
    assert!(r.passed, "{}", r.max_rel_error);
    let r = grad_check(
        |w| {
            let p = ResBlockParams {
                conv_a: (w, &ws[1]),
                conv_b: (&ws[2], &ws[3]),
            };
            weighted_sum(&resblock(&x, &p)?, 1)
        },
        &ws[0],
        1e-5,
        1e-3,
    )
    .unwrap();
    assert!(r.passed, "{}", r.max_rel_error);
    let bad = random([1, 3, 5, 7], 1, 1.0);
    assert!(resblock(&bad, &p).is_err());
}

#[test]
fn rcbam_saturated_gains_double_the_input() {
    let x = random([1, 8, 6, 6], 3, 1.0);
    let mut p = block_params(8, 2, 7, 10);
    p[0] = DiffTensor::zeros([2, 8, 1, 1]).unwrap();
    p[2] = DiffTensor::zeros([8, 2, 1, 1]).unwrap();
    p[3] = DiffTensor::full([8, 1, 1, 1], 100.0).unwrap();
    p[4] = DiffTensor::zeros([1, 2, 7, 7]).unwrap();
    p[5] = DiffTensor::full([1, 1, 1, 1], 100.0).unwrap();
    let y = rcbam(&x, &cbam_of(&p)).unwrap();
    for (a, b) in y.values().iter().zip(x.values()) {
        assert_eq!(*a, 2.0 * b);
    }
}

#[test]
fn attention_gains_lie_strictly_inside_the_unit_interval() {
    let x = random([1, 8, 6, 6], 4, 3.0);
    let p = block_params(8, 2, 7, 20);
    let c = layers::channel_gains(&x, &cbam_of(&p)).unwrap();
    let s = layers::spatial_gains(&x, &cbam_of(&p)).unwrap();
    assert_eq!(c.shape(), [1, 8, 1, 1]);
    assert_eq!(s.shape(), [1, 1, 6, 6]);
    assert!(c.values().iter().chain(s.values()).all(|&g| g > 0.0 && g < 1.0));
}

#[test]
fn rcbam_gradient_flows_through_both_branches() {
    let x = random([1, 8, 6, 6], 5, 1.0);
    let p = block_params(8, 2, 7, 30);
    let r = grad_check(|x| weighted_sum(&rcbam(x, &cbam_of(&p))?, 2), &x, 1e-6, 1e-3).unwrap();
    assert!(r.passed, "input: {}", r.max_rel_error);
    for k in [0, 3, 4, 5] {
        let r = grad_check(
            |v| {
                let mut q = p.clone();
                q[k] = v.clone();
                weighted_sum(&rcbam(&x, &cbam_of(&q))?, 2)
            },
            &p[k],
            1e-6,
            1e-3,
        )
        .unwrap();
        assert!(r.passed, "param {k}: {}", r.max_rel_error);
        assert!(r.entries.iter().any(|e| e.analytic != 0.0), "param {k} receives no gradient");
    }
    let bad = random([1, 4, 6, 6], 1, 1.0);
    assert!(rcbam(&bad, &cbam_of(&p)).is_err());
}

#[test]
fn checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("w.json");
    let w = init_model(&ModelConfig::new(3).with_width(8), 9).unwrap();
    save_checkpoint(&w, &path).unwrap();
    let back = load_checkpoint(&path).unwrap();
    assert_eq!(back.config, w.config);
    assert_eq!(back.seed, 9);
    for (a, b) in back.params().iter().zip(w.params()) {
        assert!(a.values().iter().zip(b.values()).all(|(x, y)| *x == f64::from(*y as f32)));
    }
    // saving the loaded weights reproduces the bytes
    let again = dir.path().join("w2.json");
    save_checkpoint(&back, &again).unwrap();
    assert_eq!(std::fs::read(dir.path().join("w.bin")).unwrap(), std::fs::read(dir.path().join("w2.bin")).unwrap());

    let bin = dir.path().join("w.bin");
    let bytes = std::fs::read(&bin).unwrap();
    std::fs::write(&bin, &bytes[..bytes.len() - 4]).unwrap();
    assert!(matches!(load_checkpoint(&path), Err(Error::TruncatedPayload { .. })));

    let text = std::fs::read_to_string(dir.path().join("w2.json")).unwrap().replace("conv2.weight", "conv9.weight");
    std::fs::write(dir.path().join("w2.json"), text).unwrap();
    assert!(matches!(load_checkpoint(&dir.path().join("w2.json")), Err(Error::MalformedHeader { .. })));
    assert!(matches!(load_checkpoint(&dir.path().join("missing.json")), Err(Error::Io { .. })));
}

#[test]
fn replicate_padding_keeps_a_constant_image_constant() {
    let x = DiffTensor::full([1, 2, 5, 5], 3.0).unwrap();
    let w = DiffTensor::full([1, 2, 3, 3], 0.5).unwrap();
    let y = x.conv2d(&w, None, Padding::Replicate).unwrap();
    assert!(y.values().iter().all(|&v| (v - 27.0).abs() < 1e-12));
}

