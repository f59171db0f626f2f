use super::hypercomplex::{conj_into, mul};
use super::{block_layout, MetricConfig};
use crate::error::{Error, Result};
use crate::raster::Raster;

fn same_shape(x: &Raster, y: &Raster) -> Result<()> {
    if x.bands() != y.bands() || x.dims() != y.dims() {
        return Err(Error::contract(format!(
            "shape mismatch: {}x{}x{} vs {}x{}x{}",
            x.bands(),
            x.height(),
            x.width(),
            y.bands(),
            y.height(),
            y.width()
        )));
    }
    Ok(())
}

/// `2a/b`, or 1 when `b` is below `eps` (both arguments degenerate).
fn ratio_term(num: f64, den: f64, eps: f64) -> f64 {
    if den < eps {
        1.0
    } else {
        2.0 * num / den
    }
}

fn uiqi_plane(x: &[f64], y: &[f64], h: usize, w: usize, cfg: &MetricConfig) -> f64 {
    let (side, rows, cols) = block_layout(h, w, cfg.window, cfg.stride);
    let (wh, ww) = (side, side);
    let n = (wh * ww) as f64;
    let mut total = 0.0;
    for &r in &rows {
        for &c in &cols {
            let (mut sx, mut sy) = (0.0, 0.0);
            for i in r..r + wh {
                for j in c..c + ww {
                    sx += x[i * w + j];
                    sy += y[i * w + j];
                }
            }
            let (mx, my) = (sx / n, sy / n);
            let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
            for i in r..r + wh {
                for j in c..c + ww {
                    let (a, b) = (x[i * w + j] - mx, y[i * w + j] - my);
                    vx += a * a;
                    vy += b * b;
                    cxy += a * b;
                }
            }
            let (vx, vy, cxy) = (vx / n, vy / n, cxy / n);
            total += ratio_term(cxy, vx + vy, cfg.eps) * ratio_term(mx * my, mx * mx + my * my, cfg.eps);
        }
    }
    total / (rows.len() * cols.len()) as f64
}

/// Universal image quality index of two single-band rasters, averaged over
/// the configured blocks. Images smaller than the window use one block of
/// the smaller side.
pub fn uiqi(x: &Raster, y: &Raster, cfg: &MetricConfig) -> Result<f64> {
    same_shape(x, y)?;
    if x.bands() != 1 {
        return Err(Error::contract("uiqi takes single-band rasters"));
    }
    let (h, w) = x.dims();
    Ok(uiqi_plane(x.band(0), y.band(0), h, w, cfg))
}

/// Per-band UIQI of two multiband rasters.
pub fn uiqi_per_band(x: &Raster, y: &Raster, cfg: &MetricConfig) -> Result<Vec<f64>> {
    same_shape(x, y)?;
    let (h, w) = x.dims();
    Ok((0..x.bands()).map(|b| uiqi_plane(x.band(b), y.band(b), h, w, cfg)).collect())
}

/// Hypercomplex dimension for `bands` bands (next power of two, ≤ 8).
pub(crate) fn q2n_dim(bands: usize) -> Result<usize> {
    if bands > 8 {
        return Err(Error::Unsupported(format!("Q2ⁿ supports at most 8 bands, got {bands}")));
    }
    Ok(bands.next_power_of_two())
}

/// `out = a · b̄`, using `scratch` for the conjugate.
fn conj_mul(a: &[f64], b: &[f64], scratch: &mut [f64], out: &mut [f64]) {
    conj_into(b, scratch);
    mul(a, scratch, out);
}

/// Q2ⁿ index: block-wise hypercomplex UIQI, averaged over blocks.
pub fn q2n(x: &Raster, y: &Raster, cfg: &MetricConfig) -> Result<f64> {
    same_shape(x, y)?;
    let nb = x.bands();
    let d = q2n_dim(nb)?;
    let (h, w) = x.dims();
    let (side, rows, cols) = block_layout(h, w, cfg.window, cfg.stride);
    let (wh, ww) = (side, side);
    let n = (wh * ww) as f64;
    let hw = h * w;
    let mut total = 0.0;
    let (mut z1, mut z2, mut c2, mut p) = ([0.0; 8], [0.0; 8], [0.0; 8], [0.0; 8]);
    for &r in &rows {
        for &c in &cols {
            let (mut m1, mut m2) = ([0.0; 8], [0.0; 8]);
            let (mut s11, mut s22, mut s12) = (0.0, 0.0, [0.0; 8]);
            for i in r..r + wh {
                for j in c..c + ww {
                    let k = i * w + j;
                    for b in 0..nb {
                        z1[b] = x.data()[b * hw + k];
                        z2[b] = y.data()[b * hw + k];
                        m1[b] += z1[b];
                        m2[b] += z2[b];
                    }
                    conj_mul(&z1[..d], &z2[..d], &mut c2[..d], &mut p[..d]);
                    s12.iter_mut().zip(&p[..d]).for_each(|(s, v)| *s += v);
                    conj_mul(&z1[..d], &z1[..d], &mut c2[..d], &mut p[..d]);
                    s11 += p[0];
                    conj_mul(&z2[..d], &z2[..d], &mut c2[..d], &mut p[..d]);
                    s22 += p[0];
                }
            }
            for k in 0..d {
                m1[k] /= n;
                m2[k] /= n;
                s12[k] /= n;
            }
            // Squared norms go through the same product as the covariance so
            // that identical inputs give exactly Q = 1.
            conj_mul(&m1[..d], &m1[..d], &mut c2[..d], &mut p[..d]);
            let mu1 = p[0];
            conj_mul(&m2[..d], &m2[..d], &mut c2[..d], &mut p[..d]);
            let mu2 = p[0];
            let var1 = s11 / n - mu1;
            let var2 = s22 / n - mu2;
            conj_mul(&m1[..d], &m2[..d], &mut c2[..d], &mut p[..d]);
            let cov = (0..d).map(|k| (s12[k] - p[k]).powi(2)).sum::<f64>().sqrt();
            let q = ratio_term(cov, var1 + var2, cfg.eps) * ratio_term((mu1 * mu2).sqrt(), mu1 + mu2, cfg.eps);
            total += q;
        }
    }
    Ok(total / (rows.len() * cols.len()) as f64)
}

/// ERGAS of `y` against the reference `x`:
/// `(100 / R) · sqrt(mean_b MSE_b / mean(x_b)²)`.
pub fn ergas(y: &Raster, x: &Raster, ratio: usize) -> Result<f64> {
    same_shape(x, y)?;
    let degenerate: Vec<usize> = (0..x.bands()).filter(|&b| x.band_mean(b) == 0.0).collect();
    if !degenerate.is_empty() {
        return Err(Error::DegenerateReference { bands: degenerate });
    }
    let mut acc = 0.0;
    for b in 0..x.bands() {
        let mse = x.band(b).iter().zip(y.band(b)).map(|(a, c)| (a - c).powi(2)).sum::<f64>() / x.band(b).len() as f64;
        acc += mse / x.band_mean(b).powi(2);
    }
    Ok(100.0 / ratio as f64 * (acc / x.bands() as f64).sqrt())
}

/// Khan's spectral distortion `1 − Q2ⁿ(M̂↓, M)`.
pub fn d_lambda_khan(fused_down: &Raster, ms: &Raster, cfg: &MetricConfig) -> Result<f64> {
    Ok(1.0 - q2n(fused_down, ms, cfg)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(bands: usize, h: usize, w: usize, rng: &mut ChaCha8Rng) -> Raster {
        let data = (0..bands * h * w).map(|_| rng.gen_range(50.0..1000.0)).collect();
        Raster::new(bands, h, w, data, (0.0, 1000.0)).unwrap()
    }

    fn noisy(x: &Raster, amp: f64, rng: &mut ChaCha8Rng) -> Raster {
        let data = x.data().iter().map(|v| v + amp * rng.gen_range(-1.0..1.0)).collect();
        Raster::new(x.bands(), x.height(), x.width(), data, x.radiometric_range()).unwrap()
    }

    /// Per-window UIQI from the textbook three-factor form.
    fn uiqi_oracle(x: &Raster, y: &Raster, cfg: &MetricConfig) -> f64 {
        let (h, w) = x.dims();
        let side = cfg.window.min(h).min(w);
        let (wh, ww) = (side, side);
        let mut qs = Vec::new();
        let mut r = 0;
        while r + wh <= h {
            let mut c = 0;
            while c + ww <= w {
                let mut a = Vec::new();
                let mut b = Vec::new();
                for i in r..r + wh {
                    for j in c..c + ww {
                        a.push(x.get(0, i, j));
                        b.push(y.get(0, i, j));
                    }
                }
                let n = a.len() as f64;
                let ma = a.iter().sum::<f64>() / n;
                let mb = b.iter().sum::<f64>() / n;
                let va = a.iter().map(|v| (v - ma).powi(2)).sum::<f64>() / n;
                let vb = b.iter().map(|v| (v - mb).powi(2)).sum::<f64>() / n;
                let cab = a.iter().zip(&b).map(|(p, q)| (p - ma) * (q - mb)).sum::<f64>() / n;
                qs.push(4.0 * cab * ma * mb / ((va + vb) * (ma * ma + mb * mb)));
                c += cfg.stride;
            }
            r += cfg.stride;
        }
        qs.iter().sum::<f64>() / qs.len() as f64
    }

    #[test]
    fn self_similarity_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = MetricConfig::default();
        for bands in [1, 3, 4, 5, 8] {
            let x = random(bands, 64, 64, &mut rng);
            assert_eq!(q2n(&x, &x, &cfg).unwrap(), 1.0);
            assert_eq!(d_lambda_khan(&x, &x, &cfg).unwrap(), 0.0);
            assert_eq!(ergas(&x, &x, 4).unwrap(), 0.0);
        }
        let x = random(1, 40, 40, &mut rng);
        assert_eq!(uiqi(&x, &x, &cfg).unwrap(), 1.0);
    }

    #[test]
    fn uiqi_matches_oracle_and_penalizes_offsets() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for cfg in [
            MetricConfig::default(),
            MetricConfig {
                window: 8,
                stride: 4,
                ..Default::default()
            },
        ] {
            let x = random(1, 64, 48, &mut rng);
            let y = noisy(&x, 300.0, &mut rng);
            assert!((uiqi(&x, &y, &cfg).unwrap() - uiqi_oracle(&x, &y, &cfg)).abs() < 1e-9);
        }
        let x = random(1, 32, 32, &mut rng);
        let shifted = Raster::new(1, 32, 32, x.data().iter().map(|v| v + 5000.0).collect(), (0.0, 1e4)).unwrap();
        assert!(uiqi(&x, &shifted, &MetricConfig::default()).unwrap() < 1.0);
    }

    #[test]
    fn small_images_use_one_window() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random(1, 10, 12, &mut rng);
        let y = noisy(&x, 100.0, &mut rng);
        let cfg = MetricConfig::default();
        assert!((uiqi(&x, &y, &cfg).unwrap() - uiqi_oracle(&x, &y, &cfg)).abs() < 1e-12);
    }

    #[test]
    fn q2n_reduces_to_uiqi_for_one_band() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cfg = MetricConfig::default();
        let x = random(1, 64, 64, &mut rng);
        let y = noisy(&x, 150.0, &mut rng);
        assert!((q2n(&x, &y, &cfg).unwrap() - uiqi(&x, &y, &cfg).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn q2n_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cfg = MetricConfig::default();
        let x = random(4, 64, 64, &mut rng);
        let y = noisy(&x, 200.0, &mut rng);
        let q = q2n(&x, &y, &cfg).unwrap();
        assert!((0.0..=1.0).contains(&q));
        assert!((q - q2n(&y, &x, &cfg).unwrap()).abs() < 1e-12);
        let mut perm = Vec::new();
        for b in [1, 0, 3, 2] {
            perm.extend_from_slice(x.band(b));
        }
        let xp = Raster::new(4, 64, 64, perm, x.radiometric_range()).unwrap();
        assert!(q2n(&x, &xp, &cfg).unwrap() < 1.0 - 1e-6);
        assert!(matches!(q2n(&random(9, 8, 8, &mut rng), &random(9, 8, 8, &mut rng), &cfg), Err(Error::Unsupported(_))));
    }

    #[test]
    fn d_lambda_grows_with_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let cfg = MetricConfig::default();
        let x = random(4, 64, 64, &mut rng);
        let base: Vec<f64> = (0..x.data().len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut last = 0.0;
        for amp in [5.0, 20.0, 80.0, 320.0] {
            let data = x.data().iter().zip(&base).map(|(v, n)| v + amp * n).collect();
            let y = Raster::new(4, 64, 64, data, x.radiometric_range()).unwrap();
            let d = d_lambda_khan(&y, &x, &cfg).unwrap();
            assert!(d > last && d <= 1.0, "amp {amp}: {d} vs {last}");
            last = d;
        }
    }

    #[test]
    fn ergas_examples() {
        let x = Raster::filled(1, 2, 2, 10.0, (0.0, 20.0)).unwrap();
        let y = Raster::filled(1, 2, 2, 11.0, (0.0, 20.0)).unwrap();
        assert!((ergas(&y, &x, 4).unwrap() - 2.5).abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = random(3, 16, 16, &mut rng);
        let b = random(3, 16, 16, &mut rng);
        let scale = |r: &Raster| Raster::new(3, 16, 16, r.data().iter().map(|v| 3.5 * v).collect(), (0.0, 1e4)).unwrap();
        assert!((ergas(&a, &b, 4).unwrap() - ergas(&scale(&a), &scale(&b), 4).unwrap()).abs() < 1e-9);
        let mut zero = b.data().to_vec();
        zero[256..512].fill(0.0);
        let z = Raster::new(3, 16, 16, zero, (0.0, 1e3)).unwrap();
        assert!(matches!(ergas(&a, &z, 4), Err(Error::DegenerateReference { bands }) if bands == vec![1]));
    }
}
