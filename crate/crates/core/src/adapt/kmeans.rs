use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

const MAX_ITERATIONS: usize = 100;
const TOLERANCE: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct Clustering {
    /// Cluster id per point.
    pub assignment: Vec<usize>,
    /// Index of the medoid point of each cluster.
    pub medoids: Vec<usize>,
    pub centroids: Vec<[f64; 3]>,
    pub iterations: usize,
}

fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (0..3).map(|i| (a[i] - b[i]) * (a[i] - b[i])).sum()
}

fn nearest(p: &[f64; 3], centroids: &[[f64; 3]]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (k, c) in centroids.iter().enumerate() {
        let d = dist2(p, c);
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

/// k-means++ seeding; points already chosen have zero weight. When every
/// remaining weight is zero (duplicates), the lowest unchosen index is used.
fn seed_centroids(points: &[[f64; 3]], k: usize, rng: &mut ChaCha8Rng) -> Vec<[f64; 3]> {
    let n = points.len();
    let mut chosen = vec![false; n];
    let first = rng.gen_range(0..n);
    chosen[first] = true;
    let mut centroids = vec![points[first]];
    let mut d2: Vec<f64> = points.iter().map(|p| dist2(p, &points[first])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().enumerate().filter(|(i, _)| !chosen[*i]).map(|(_, d)| d).sum();
        let pick = if total > 0.0 {
            let mut r = rng.gen::<f64>() * total;
            let mut pick = None;
            for (i, &d) in d2.iter().enumerate() {
                if chosen[i] || d == 0.0 {
                    continue;
                }
                pick = Some(i);
                if r < d {
                    break;
                }
                r -= d;
            }
            pick.expect("positive total weight")
        } else {
            (0..n).find(|&i| !chosen[i]).expect("k ≤ n")
        };
        chosen[pick] = true;
        centroids.push(points[pick]);
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(dist2(p, &points[pick]));
        }
    }
    centroids
}

/// k-means++ then Lloyd iterations until no centroid moves more than 1e-8
/// (or 100 iterations). An emptied cluster is re-seeded at the point
/// farthest from its current centroid. Each cluster's medoid is the member
/// with the smallest summed distance to the other members (lowest index on
/// ties); medoids are always distinct points.
pub fn kmeans_medoids(points: &[[f64; 3]], k: usize, seed: u64) -> Result<Clustering> {
    let n = points.len();
    if k == 0 || k > n {
        return Err(Error::contract(format!("k-means needs 1 ≤ k ≤ {n}, got {k}")));
    }
    if points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NumericDomain("k-means points must be finite".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = seed_centroids(points, k, &mut rng);
    let mut assignment = vec![0; n];
    let mut iterations = 0;
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        for (i, p) in points.iter().enumerate() {
            assignment[i] = nearest(p, &centroids).0;
        }
        let mut sums = vec![[0.0; 3]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assignment) {
            counts[a] += 1;
            (0..3).for_each(|d| sums[a][d] += p[d]);
        }
        let mut next = centroids.clone();
        for c in 0..k {
            if counts[c] > 0 {
                next[c] = sums[c].map(|s| s / counts[c] as f64);
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                let far = (0..n)
                    .max_by(|&a, &b| {
                        let da = dist2(&points[a], &next[assignment[a]]);
                        let db = dist2(&points[b], &next[assignment[b]]);
                        da.total_cmp(&db).then(b.cmp(&a))
                    })
                    .expect("n ≥ 1");
                next[c] = points[far];
                assignment[far] = c;
            }
        }
        let shift = centroids.iter().zip(&next).map(|(a, b)| dist2(a, b).sqrt()).fold(0.0, f64::max);
        centroids = next;
        if shift <= TOLERANCE {
            break;
        }
    }
    for (i, p) in points.iter().enumerate() {
        assignment[i] = nearest(p, &centroids).0;
    }
    let mut used = vec![false; n];
    let mut medoids = Vec::with_capacity(k);
    for c in 0..k {
        let members: Vec<usize> = (0..n).filter(|&i| assignment[i] == c && !used[i]).collect();
        let m = if members.is_empty() {
            // only with duplicate points: take the closest point not yet used
            nearest_unused(points, &centroids[c], &used)
        } else {
            let cost = |i: usize| members.iter().map(|&j| dist2(&points[i], &points[j]).sqrt()).sum::<f64>();
            members
                .iter()
                .copied()
                .min_by(|&a, &b| cost(a).total_cmp(&cost(b)).then(a.cmp(&b)))
                .expect("non-empty")
        };
        used[m] = true;
        medoids.push(m);
    }
    Ok(Clustering {
        assignment,
        medoids,
        centroids,
        iterations,
    })
}

fn nearest_unused(points: &[[f64; 3]], c: &[f64; 3], used: &[bool]) -> usize {
    (0..points.len())
        .filter(|&i| !used[i])
        .min_by(|&a, &b| dist2(&points[a], c).total_cmp(&dist2(&points[b], c)).then(a.cmp(&b)))
        .expect("k ≤ n leaves an unused point")
}
