use super::{Raster, ValidityMask};
use crate::error::{Error, Result};
use crate::tensor::kernels;

/// Largest supported shift magnitude per axis, in PAN-scale pixels.
pub const MAX_SHIFT: f64 = 3.0;

pub(crate) fn check_offset(dx: f64, dy: f64) -> Result<()> {
    if !(dx.is_finite() && dy.is_finite()) || dx.abs() > MAX_SHIFT || dy.abs() > MAX_SHIFT {
        return Err(Error::contract(format!(
            "shift ({dx}, {dy}) outside the supported range ±{MAX_SHIFT}"
        )));
    }
    Ok(())
}

/// Valid output positions `k` along an axis of length `len`: `k + offset`
/// must fall inside `[0, len - 1]`.
pub(crate) fn valid_range(len: usize, offset: f64) -> (usize, usize) {
    let lo = (-offset).ceil().max(0.0) as usize;
    let hi = ((len as f64 - 1.0 - offset).floor() + 1.0).clamp(0.0, len as f64) as usize;
    (lo.min(hi), hi)
}

/// Bilinear shift `out(i, j) = x(i + dy, j + dx)` of every band. Outputs
/// whose source position falls outside the image are marked invalid.
pub fn shift_subpixel(x: &Raster, dx: f64, dy: f64) -> Result<(Raster, ValidityMask)> {
    check_offset(dx, dy)?;
    let (h, w) = x.dims();
    let mut out = vec![0.0; x.data().len()];
    for b in 0..x.bands() {
        kernels::shift_plane(x.band(b), h, w, dx, dy, &mut out[b * h * w..(b + 1) * h * w]);
    }
    let (r0, r1) = valid_range(h, dy);
    let (c0, c1) = valid_range(w, dx);
    let plane: Vec<bool> = (0..h * w)
        .map(|k| (r0..r1).contains(&(k / w)) && (c0..c1).contains(&(k % w)))
        .collect();
    let mask = ValidityMask::from_flags(x.bands(), h, w, plane.repeat(x.bands()))?;
    Ok((Raster::new(x.bands(), h, w, out, x.radiometric_range())?, mask))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(h: usize, w: usize, s: f64) -> Raster {
        Raster::new(1, h, w, (0..h * w).map(|k| 10.0 + s * (k % w) as f64).collect(), (0.0, 1e3)).unwrap()
    }

    #[test]
    fn zero_offset_is_identity() {
        let x = ramp(6, 9, 1.5);
        let (y, m) = shift_subpixel(&x, 0.0, 0.0).unwrap();
        assert_eq!(y, x);
        assert_eq!(m.count_valid(), 54);
    }

    #[test]
    fn inverse_shifts_restore_the_jointly_valid_region() {
        let data: Vec<f64> = (0..80).map(|k| ((k * 37) % 23) as f64).collect();
        let x = Raster::new(1, 8, 10, data, (0.0, 30.0)).unwrap();
        let (y, m1) = shift_subpixel(&x, 1.0, 0.0).unwrap();
        let (z, m2) = shift_subpixel(&y, -1.0, 0.0).unwrap();
        // z(i,j) = y(i,j-1): jointly valid when m2 holds at j and m1 at j-1
        let mut checked = 0;
        for i in 0..8 {
            for j in 1..10 {
                if m2.is_valid(0, i, j) && m1.is_valid(0, i, j - 1) {
                    assert_eq!(z.get(0, i, j), x.get(0, i, j));
                    checked += 1;
                }
            }
        }
        assert_eq!(checked, 8 * 9);
    }

    #[test]
    fn half_pixel_on_a_ramp_adds_half_the_slope() {
        let s = 2.75;
        let x = ramp(5, 12, s);
        let (y, m) = shift_subpixel(&x, 0.5, 0.0).unwrap();
        for i in 0..5 {
            for j in 0..12 {
                if m.is_valid(0, i, j) {
                    assert_eq!(y.get(0, i, j) - x.get(0, i, j), 0.5 * s);
                }
            }
        }
        assert_eq!(m.count_valid(), 5 * 11);
    }

    #[test]
    fn mask_excludes_unsupported_borders() {
        let x = ramp(10, 10, 1.0);
        let (_, m) = shift_subpixel(&x, -2.5, 3.0).unwrap();
        // columns j with j - 2.5 >= 0 → j >= 3; rows i with i + 3 <= 9 → i <= 6
        assert_eq!(m.count_valid(), 7 * 7);
        assert!(m.is_valid(0, 0, 3) && !m.is_valid(0, 0, 2) && !m.is_valid(0, 7, 5));
    }

    #[test]
    fn out_of_range_offsets_are_rejected() {
        let x = ramp(4, 4, 1.0);
        assert!(matches!(shift_subpixel(&x, 3.5, 0.0), Err(Error::Contract(_))));
        assert!(matches!(shift_subpixel(&x, 0.0, f64::NAN), Err(Error::Contract(_))));
    }
}
