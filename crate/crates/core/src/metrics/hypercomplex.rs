//! Cayley–Dickson hypercomplex numbers of dimension 1, 2, 4 or 8, stored as
//! plain coefficient slices. Multiplication follows
//! `(a, b)(c, d) = (ac − d̄b, da + bc̄)` with conjugate `(a, b)‾ = (ā, −b)`.

/// `out = a · b`. All slices share a power-of-two length.
pub fn mul(a: &[f64], b: &[f64], out: &mut [f64]) {
    let n = a.len();
    debug_assert!(n.is_power_of_two() && b.len() == n && out.len() == n);
    if n == 1 {
        out[0] = a[0] * b[0];
        return;
    }
    let h = n / 2;
    let (a1, a2) = a.split_at(h);
    let (c, d) = b.split_at(h);
    let mut t1 = [0.0; 8];
    let mut t2 = [0.0; 8];
    let mut tmp = [0.0; 8];
    // first half: a1·c − d̄·a2
    mul(a1, c, &mut t1[..h]);
    conj_into(d, &mut tmp[..h]);
    mul(&tmp[..h], a2, &mut t2[..h]);
    for k in 0..h {
        out[k] = t1[k] - t2[k];
    }
    // second half: d·a1 + a2·c̄
    mul(d, a1, &mut t1[..h]);
    conj_into(c, &mut tmp[..h]);
    mul(a2, &tmp[..h], &mut t2[..h]);
    for k in 0..h {
        out[h + k] = t1[k] + t2[k];
    }
}

pub fn conj_into(a: &[f64], out: &mut [f64]) {
    out[0] = a[0];
    for k in 1..a.len() {
        out[k] = -a[k];
    }
}

pub fn norm_sq(a: &[f64]) -> f64 {
    a.iter().map(|v| v * v).sum()
}

/// Sparse structure constants of `x · ȳ`: entries `(i, j, k, s)` meaning the
/// product contributes `s · x_i · y_j` to component `k`.
pub fn conj_product_table(n: usize) -> Vec<(usize, usize, usize, f64)> {
    let mut table = Vec::new();
    let mut ei = vec![0.0; n];
    let mut ej = vec![0.0; n];
    let mut cj = vec![0.0; n];
    let mut out = vec![0.0; n];
    for i in 0..n {
        ei.fill(0.0);
        ei[i] = 1.0;
        for j in 0..n {
            ej.fill(0.0);
            ej[j] = 1.0;
            conj_into(&ej, &mut cj);
            mul(&ei, &cj, &mut out);
            for (k, &s) in out.iter().enumerate() {
                if s != 0.0 {
                    table.push((i, j, k, s));
                }
            }
        }
    }
    table
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn complex_and_quaternion_products() {
        let mut out = [0.0; 2];
        mul(&[1.0, 2.0], &[3.0, -1.0], &mut out);
        assert_eq!(out, [5.0, 5.0]);
        // i·j = k for quaternions (1, i, j, k) laid out as ((1, i), (j, k))
        let mut q = [0.0; 4];
        mul(&[0.0, 1.0, 0.0, 0.0], &[0.0, 0.0, 1.0, 0.0], &mut q);
        assert_eq!(q.iter().map(|v| v.abs()).sum::<f64>(), 1.0);
        assert_eq!(q[3].abs(), 1.0);
    }

    #[test]
    fn norm_is_multiplicative_up_to_octonions() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for n in [1, 2, 4, 8] {
            let a: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let mut p = vec![0.0; n];
            mul(&a, &b, &mut p);
            assert!((norm_sq(&p) - norm_sq(&a) * norm_sq(&b)).abs() < 1e-10);
        }
    }

    #[test]
    fn table_reproduces_the_conjugate_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for n in [1, 2, 4, 8] {
            let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let y: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut yc = vec![0.0; n];
            conj_into(&y, &mut yc);
            let mut direct = vec![0.0; n];
            mul(&x, &yc, &mut direct);
            let mut via = vec![0.0; n];
            for (i, j, k, s) in conj_product_table(n) {
                via[k] += s * x[i] * y[j];
            }
            for k in 0..n {
                assert!((direct[k] - via[k]).abs() < 1e-12);
            }
            assert_eq!(conj_product_table(n).len(), n * n);
        }
    }
}
