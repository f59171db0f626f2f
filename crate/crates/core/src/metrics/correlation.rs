use crate::error::{Error, Result};
use crate::raster::{Raster, ValidityMask};

/// Pearson correlation of two equally sized patches using population
/// moments. `None` when either variance is below `eps`.
pub fn corrcoef(x: &[f64], y: &[f64], eps: f64) -> Result<Option<f64>> {
    if x.len() != y.len() {
        return Err(Error::contract(format!("corrcoef on {} vs {} elements", x.len(), y.len())));
    }
    if x.len() < 2 {
        return Err(Error::contract("corrcoef needs at least 2 elements"));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxx += da * da;
        syy += db * db;
        sxy += da * db;
    }
    let (vx, vy, cxy) = (sxx / n, syy / n, sxy / n);
    if vx < eps || vy < eps {
        return Ok(None);
    }
    Ok(Some((cxy / (vx * vy).max(eps).sqrt()).clamp(-1.0, 1.0)))
}

/// Half-open pixel rectangle `rows × cols`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Rect {
    pub rows: (usize, usize),
    pub cols: (usize, usize),
}

impl Rect {
    pub fn full(h: usize, w: usize) -> Self {
        Rect {
            rows: (0, h),
            cols: (0, w),
        }
    }

    /// Rectangle shrunk by `m` pixels on every side.
    pub fn inset(h: usize, w: usize, m: usize) -> Self {
        Rect {
            rows: (m.min(h), h.saturating_sub(m).max(m.min(h))),
            cols: (m.min(w), w.saturating_sub(m).max(m.min(w))),
        }
    }
}

/// Per-band local correlation values with validity. The window for center
/// `(i, j)` spans rows `i - σ/2 .. i - σ/2 + σ` (likewise for columns).
#[derive(Clone, Debug, PartialEq)]
pub struct CorrelationField {
    pub sigma: usize,
    values: Vec<f64>,
    mask: ValidityMask,
}

impl CorrelationField {
    pub fn new(sigma: usize, values: Vec<f64>, mask: ValidityMask) -> Result<Self> {
        if values.len() != mask.flags().len() {
            return Err(Error::contract("correlation values and mask differ in size"));
        }
        Ok(CorrelationField { sigma, values, mask })
    }

    pub fn bands(&self) -> usize {
        self.mask.bands()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.mask.dims()
    }

    /// Values in band-sequential order; invalid entries hold 0.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn mask(&self) -> &ValidityMask {
        &self.mask
    }

    pub fn band(&self, b: usize) -> &[f64] {
        let (h, w) = self.dims();
        &self.values[b * h * w..(b + 1) * h * w]
    }

    /// Mean over valid entries of band `b`, `None` if the band is fully
    /// invalid.
    pub fn band_mean(&self, b: usize) -> Option<f64> {
        let (mut s, mut n) = (0.0, 0usize);
        for (v, &ok) in self.band(b).iter().zip(self.mask.band(b)) {
            if ok {
                s += v;
                n += 1;
            }
        }
        (n > 0).then(|| s / n as f64)
    }

    /// Keeps only one band.
    pub fn select_band(&self, b: usize) -> CorrelationField {
        let (h, w) = self.dims();
        CorrelationField {
            sigma: self.sigma,
            values: self.band(b).to_vec(),
            mask: ValidityMask::from_flags(1, h, w, self.mask.band(b).to_vec()).expect("band-sized mask"),
        }
    }

    /// Stacks single- or multi-band fields of equal size and window.
    pub fn stack(parts: &[CorrelationField]) -> Result<CorrelationField> {
        let first = parts.first().ok_or_else(|| Error::contract("stack of zero fields"))?;
        let (h, w) = first.dims();
        let mut values = Vec::new();
        let mut flags = Vec::new();
        let mut bands = 0;
        for p in parts {
            if p.dims() != (h, w) || p.sigma != first.sigma {
                return Err(Error::contract("stacked fields differ in size or window"));
            }
            values.extend_from_slice(&p.values);
            flags.extend_from_slice(p.mask.flags());
            bands += p.bands();
        }
        CorrelationField::new(first.sigma, values, ValidityMask::from_flags(bands, h, w, flags)?)
    }

    /// Saves the field as a raster; invalid pixels hold 0.
    pub fn to_raster(&self) -> Result<Raster> {
        let (h, w) = self.dims();
        Raster::new(self.bands(), h, w, self.values.clone(), (-1.0, 1.0))
    }
}

/// Sums over every `size × size` window fully inside the plane; output is
/// `(h - size + 1) × (w - size + 1)` indexed by the window's top-left corner.
pub(crate) fn box_sums(x: &[f64], h: usize, w: usize, size: usize) -> Vec<f64> {
    let (oh, ow) = (h - size + 1, w - size + 1);
    let mut rows = vec![0.0; h * ow];
    for i in 0..h {
        let src = &x[i * w..(i + 1) * w];
        let dst = &mut rows[i * ow..(i + 1) * ow];
        let mut s: f64 = src[..size].iter().sum();
        dst[0] = s;
        for j in 1..ow {
            s += src[j + size - 1] - src[j - 1];
            dst[j] = s;
        }
    }
    let mut out = vec![0.0; oh * ow];
    let mut acc: Vec<f64> = vec![0.0; ow];
    for i in 0..size {
        for (a, v) in acc.iter_mut().zip(&rows[i * ow..(i + 1) * ow]) {
            *a += v;
        }
    }
    out[..ow].copy_from_slice(&acc);
    for i in 1..oh {
        let add = &rows[(i + size - 1) * ow..(i + size) * ow];
        let sub = &rows[(i - 1) * ow..i * ow];
        for j in 0..ow {
            acc[j] += add[j] - sub[j];
        }
        out[i * ow..(i + 1) * ow].copy_from_slice(&acc);
    }
    out
}

fn centered(x: &[f64]) -> Vec<f64> {
    let m = x.iter().sum::<f64>() / x.len() as f64;
    x.iter().map(|v| v - m).collect()
}

/// Local correlation between the single-band raster `a` and every band of
/// `bands` over `σ × σ` windows, computed from windowed moments.
///
/// Centers whose window is not fully inside the image (or inside
/// `region`, when given) and windows where either variance is below `eps`
/// are invalid.
pub fn local_correlation_field(
    a: &Raster,
    bands: &Raster,
    sigma: usize,
    eps: f64,
    region: Option<Rect>,
) -> Result<CorrelationField> {
    if a.bands() != 1 {
        return Err(Error::contract("correlation reference must be single-band"));
    }
    if a.dims() != bands.dims() {
        return Err(Error::contract(format!(
            "correlation field on {:?} vs {:?}",
            a.dims(),
            bands.dims()
        )));
    }
    let (h, w) = a.dims();
    if sigma < 2 || sigma > h || sigma > w {
        return Err(Error::contract(format!("window {sigma} does not fit a {h}x{w} image")));
    }
    let region = region.unwrap_or(Rect::full(h, w));
    let half = sigma / 2;
    let n = (sigma * sigma) as f64;
    let (oh, ow) = (h - sigma + 1, w - sigma + 1);

    let ac = centered(a.band(0));
    let sa = box_sums(&ac, h, w, sigma);
    let saa = box_sums(&ac.iter().map(|v| v * v).collect::<Vec<_>>(), h, w, sigma);

    let mut values = vec![0.0; bands.bands() * h * w];
    let mut flags = vec![false; bands.bands() * h * w];
    for b in 0..bands.bands() {
        let bc = centered(bands.band(b));
        let sb = box_sums(&bc, h, w, sigma);
        let sbb = box_sums(&bc.iter().map(|v| v * v).collect::<Vec<_>>(), h, w, sigma);
        let sab = box_sums(&ac.iter().zip(&bc).map(|(x, y)| x * y).collect::<Vec<_>>(), h, w, sigma);
        for p in 0..oh {
            if p < region.rows.0 || p + sigma > region.rows.1 {
                continue;
            }
            for q in 0..ow {
                if q < region.cols.0 || q + sigma > region.cols.1 {
                    continue;
                }
                let k = p * ow + q;
                let (ma, mb) = (sa[k] / n, sb[k] / n);
                let va = saa[k] / n - ma * ma;
                let vb = sbb[k] / n - mb * mb;
                if va < eps || vb < eps {
                    continue;
                }
                let cov = sab[k] / n - ma * mb;
                let o = (b * h + p + half) * w + q + half;
                values[o] = (cov / (va * vb).max(eps).sqrt()).clamp(-1.0, 1.0);
                flags[o] = true;
            }
        }
    }
    CorrelationField::new(sigma, values, ValidityMask::from_flags(bands.bands(), h, w, flags)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(bands: usize, h: usize, w: usize, rng: &mut ChaCha8Rng) -> Raster {
        let data = (0..bands * h * w).map(|_| rng.gen_range(0.0..1000.0)).collect();
        Raster::new(bands, h, w, data, (0.0, 1000.0)).unwrap()
    }

    #[test]
    fn corrcoef_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x: Vec<f64> = (0..50).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        let aff: Vec<f64> = x.iter().map(|v| 3.7 * v + 120.0).collect();
        assert!((corrcoef(&x, &x, 1e-8).unwrap().unwrap() - 1.0).abs() < 1e-12);
        assert!((corrcoef(&x, &neg, 1e-8).unwrap().unwrap() + 1.0).abs() < 1e-12);
        assert!((corrcoef(&x, &aff, 1e-8).unwrap().unwrap() - 1.0).abs() < 1e-9);
        assert_eq!(corrcoef(&x, &[2.0; 50], 1e-8).unwrap(), None);
        assert!(corrcoef(&x, &x[..10], 1e-8).is_err());
    }

    #[test]
    fn field_matches_naive_patch_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for sigma in [4, 5, 16] {
            let a = random(1, 32, 32, &mut rng);
            let b = random(3, 32, 32, &mut rng);
            let f = local_correlation_field(&a, &b, sigma, 1e-8, None).unwrap();
            let half = sigma / 2;
            for band in 0..3 {
                for i in 0..32 {
                    for j in 0..32 {
                        let inside = i >= half && j >= half && i - half + sigma <= 32 && j - half + sigma <= 32;
                        assert_eq!(f.mask().is_valid(band, i, j), inside);
                        if !inside {
                            continue;
                        }
                        let mut pa = Vec::new();
                        let mut pb = Vec::new();
                        for r in i - half..i - half + sigma {
                            for c in j - half..j - half + sigma {
                                pa.push(a.get(0, r, c));
                                pb.push(b.get(band, r, c));
                            }
                        }
                        let naive = corrcoef(&pa, &pb, 1e-8).unwrap().unwrap();
                        assert!((naive - f.band(band)[i * 32 + j]).abs() < 1e-9);
                    }
                }
            }
        }
    }

    #[test]
    fn copy_is_one_and_constant_is_invalid() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random(1, 20, 20, &mut rng);
        let mut both = a.data().to_vec();
        both.extend(std::iter::repeat_n(5.0, 400));
        let b = Raster::new(2, 20, 20, both, (0.0, 1000.0)).unwrap();
        let f = local_correlation_field(&a, &b, 4, 1e-8, None).unwrap();
        for k in 0..400 {
            if f.mask().band(0)[k] {
                assert!((f.band(0)[k] - 1.0).abs() < 1e-9);
            }
        }
        assert_eq!(f.mask().band(0).iter().filter(|&&v| v).count(), 17 * 17);
        assert!(f.mask().band(1).iter().all(|&v| !v));
    }

    #[test]
    fn region_restricts_windows_and_oversized_window_fails() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = random(1, 16, 16, &mut rng);
        let b = random(1, 16, 16, &mut rng);
        let f = local_correlation_field(&a, &b, 4, 1e-8, Some(Rect::inset(16, 16, 3))).unwrap();
        assert_eq!(f.mask().count_valid(), 7 * 7);
        assert!(local_correlation_field(&a, &b, 17, 1e-8, None).is_err());
    }
}
