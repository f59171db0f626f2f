use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Projection of a feature set onto its top three principal components.
#[derive(Clone, Debug)]
pub struct Pca3 {
    pub mean: Vec<f64>,
    /// Unit eigenvectors, largest eigenvalue first; components beyond the
    /// data rank are zero vectors.
    pub basis: [Vec<f64>; 3],
    /// Fractions of total variance, non-increasing.
    pub explained: [f64; 3],
    pub projections: Vec<[f64; 3]>,
}

/// Mean-centred projection onto the top-3 eigenvectors of the sample
/// covariance. Each eigenvector's largest-magnitude entry is made positive.
pub fn pca3(features: &[Vec<f64>]) -> Result<Pca3> {
    let n = features.len();
    if n < 4 {
        return Err(Error::contract(format!("pca3 needs at least 4 vectors, got {n}")));
    }
    let d = features[0].len();
    if d == 0 || features.iter().any(|f| f.len() != d) {
        return Err(Error::contract("pca3 vectors must share a non-zero length"));
    }
    let mean: Vec<f64> = (0..d).map(|j| features.iter().map(|f| f[j]).sum::<f64>() / n as f64).collect();
    let centred = DMatrix::from_fn(n, d, |i, j| features[i][j] - mean[j]);
    let cov = centred.transpose() * &centred / (n - 1) as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let total: f64 = eig.eigenvalues.iter().map(|v| v.max(0.0)).sum();
    let tol = 1e-12 * total.max(f64::MIN_POSITIVE);

    let mut basis: [Vec<f64>; 3] = Default::default();
    let mut explained = [0.0; 3];
    let mut rank = 0;
    for (slot, &k) in order.iter().take(3).enumerate() {
        let lambda = eig.eigenvalues[k];
        if lambda <= tol {
            basis[slot] = vec![0.0; d];
            continue;
        }
        rank += 1;
        let mut v: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
        let lead = v.iter().copied().fold(0.0_f64, |m, x| if x.abs() > m.abs() { x } else { m });
        if lead < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        basis[slot] = v;
        explained[slot] = lambda / total;
    }
    for slot in d.min(3)..3 {
        basis[slot] = vec![0.0; d];
    }
    if rank < 3 {
        log::warn!("pca3: data rank {rank} < 3; padding with zero components");
    }
    let projections = (0..n)
        .map(|i| {
            let mut p = [0.0; 3];
            for (c, b) in basis.iter().enumerate() {
                p[c] = (0..d).map(|j| centred[(i, j)] * b[j]).sum();
            }
            p
        })
        .collect();
    Ok(Pca3 {
        mean,
        basis,
        explained,
        projections,
    })
}
