//! Lloyd's k-means with k-means++ seeding and restarts.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Result};
use crate::parallel;
use crate::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KMeansConfig {
    pub restarts: usize,
    pub max_iter: usize,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self { restarts: 50, max_iter: 300 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    pub labels: Vec<usize>,
    /// One centroid per row.
    pub centroids: Matrix,
    pub inertia: f64,
}

/// Row-major copy of a point cloud for cache-friendly distance loops.
struct Points {
    data: Vec<f64>,
    n: usize,
    l: usize,
}

impl Points {
    fn new(m: &Matrix) -> Self {
        let (n, l) = m.shape();
        let data = m.transpose().as_slice().to_vec();
        Self { data, n, l }
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.l..(i + 1) * self.l]
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centroids: &Points) -> (usize, f64) {
    (0..centroids.n)
        .map(|c| (c, sq_dist(point, centroids.row(c))))
        .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best })
}

/// Nearest-centroid labels; ties go to the lower index.
pub fn assign(points: &Matrix, centroids: &Matrix) -> Vec<usize> {
    let p = Points::new(points);
    let c = Points::new(centroids);
    (0..p.n).map(|i| nearest(p.row(i), &c).0).collect()
}

fn plus_plus(points: &Points, k: usize, rng: &mut ChaCha8Rng) -> Points {
    let n = points.n;
    let mut centroids = Points { data: Vec::with_capacity(k * points.l), n: 0, l: points.l };
    centroids.data.extend_from_slice(points.row(rng.random_range(0..n)));
    centroids.n = 1;
    let mut dist: Vec<f64> = (0..n).map(|i| sq_dist(points.row(i), centroids.row(0))).collect();
    for c in 1..k {
        let total: f64 = dist.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut idx = n - 1;
            for (i, w) in dist.iter().enumerate() {
                if u < *w {
                    idx = i;
                    break;
                }
                u -= w;
            }
            idx
        } else {
            rng.random_range(0..n)
        };
        centroids.data.extend_from_slice(points.row(pick));
        centroids.n += 1;
        for (i, d) in dist.iter_mut().enumerate() {
            *d = d.min(sq_dist(points.row(i), centroids.row(c)));
        }
    }
    centroids
}

fn lloyd(points: &Points, k: usize, max_iter: usize, seed: u64) -> (Vec<usize>, Points, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, l) = (points.n, points.l);
    let mut centroids = plus_plus(points, k, &mut rng);
    let mut labels = vec![usize::MAX; n];
    let mut dists = vec![0.0; n];
    for _ in 0..max_iter {
        let mut changed = false;
        for i in 0..n {
            let (c, dist) = nearest(points.row(i), &centroids);
            dists[i] = dist;
            if labels[i] != c {
                labels[i] = c;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = vec![0.0; k * l];
        let mut counts = vec![0usize; k];
        for i in 0..n {
            let c = labels[i];
            for (s, x) in sums[c * l..(c + 1) * l].iter_mut().zip(points.row(i)) {
                *s += x;
            }
            counts[c] += 1;
        }
        for c in 0..k {
            let target = &mut centroids.data[c * l..(c + 1) * l];
            if counts[c] > 0 {
                for (t, s) in target.iter_mut().zip(&sums[c * l..(c + 1) * l]) {
                    *t = s / counts[c] as f64;
                }
            } else {
                // Re-seed an empty cluster at the point farthest from its centroid.
                let far = (0..n).fold(0, |b, i| if dists[i] > dists[b] { i } else { b });
                target.copy_from_slice(points.row(far));
                dists[far] = 0.0;
            }
        }
    }
    let inertia = (0..n).map(|i| sq_dist(points.row(i), centroids.row(labels[i]))).sum();
    (labels, centroids, inertia)
}

/// Best-inertia clustering of the rows of `points` over seeded restarts.
pub fn kmeans<R: Rng + ?Sized>(points: &Matrix, k: usize, cfg: KMeansConfig, rng: &mut R) -> Result<Clustering> {
    if k == 0 {
        return invalid("k must be at least 1");
    }
    if points.nrows() < k {
        return invalid(format!("{} points cannot form {k} clusters", points.nrows()));
    }
    let seeds: Vec<u64> = (0..cfg.restarts.max(1)).map(|_| rng.random()).collect();
    let data = Points::new(points);
    let runs = parallel::map(seeds.len(), |r| lloyd(&data, k, cfg.max_iter.max(1), seeds[r]));
    let (labels, centroids, inertia) = runs
        .into_iter()
        .reduce(|best, run| if run.2 < best.2 { run } else { best })
        .expect("at least one restart");
    Ok(Clustering { labels, centroids: Matrix::from_row_slice(k, centroids.l, &centroids.data), inertia })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn separated_blobs_are_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let noise = Normal::new(0.0, 1.0).unwrap();
        let n = 400;
        let truth: Vec<usize> = (0..n).map(|i| i % 2).collect();
        let points = Matrix::from_fn(n, 3, |i, _| 10.0 * truth[i] as f64 + noise.sample(&mut rng));
        let c = kmeans(&points, 2, KMeansConfig::default(), &mut rng).unwrap();
        let agree = c.labels.iter().zip(&truth).filter(|(a, b)| a == b).count();
        let matched = agree.max(n - agree);
        assert!(matched as f64 >= 0.99 * n as f64);
    }

    #[test]
    fn single_cluster_is_the_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let points = Matrix::from_fn(50, 4, |_, _| rng.random::<f64>());
        let c = kmeans(&points, 1, KMeansConfig::default(), &mut rng).unwrap();
        let mean = points.row_mean();
        assert!((c.centroids.row(0) - mean).amax() < 1e-12);
    }

    #[test]
    fn duplicate_rows_share_labels() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let base = Matrix::from_fn(30, 2, |_, _| rng.random::<f64>());
        let points = Matrix::from_fn(60, 2, |i, j| base[(i % 30, j)]);
        let c = kmeans(&points, 4, KMeansConfig::default(), &mut rng).unwrap();
        for i in 0..30 {
            assert_eq!(c.labels[i], c.labels[i + 30]);
        }
    }

    #[test]
    fn deterministic_and_checked() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let points = Matrix::from_fn(40, 3, |_, _| rng.random::<f64>());
        let a = kmeans(&points, 3, KMeansConfig::default(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b = kmeans(&points, 3, KMeansConfig::default(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(a, b);
        assert!(kmeans(&points, 41, KMeansConfig::default(), &mut rng).is_err());
        assert_eq!(assign(&points, &a.centroids), a.labels);
    }
}
