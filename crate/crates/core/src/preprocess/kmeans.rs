use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{squared_distance, PreprocessError, Result};

/// Result of Lloyd's algorithm. `labels[i]` is the cluster of point `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    pub k: usize,
    pub seed: u64,
    pub centroids: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    /// SSE after every assignment step; non-increasing.
    pub sse_trace: Vec<f64>,
    pub iterations: usize,
}

impl Clustering {
    pub fn sse(&self) -> f64 {
        self.sse_trace.last().copied().unwrap_or(0.0)
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &l in &self.labels {
            sizes[l] += 1;
        }
        sizes
    }
}

fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.iter().enumerate() {
        let d = squared_distance(point, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn plus_plus_seeds(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut centroids = vec![points[rng.random_range(0..n)].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| squared_distance(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let idx = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if w > 0.0 && target < w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            // guard against rounding landing on a zero-weight tail
            while d2[chosen] == 0.0 {
                chosen -= 1;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        let c = points[idx].clone();
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(squared_distance(p, &c));
        }
        centroids.push(c);
    }
    centroids
}

/// k-means with k-means++ seeding. Empty clusters are reseeded at the point
/// farthest from its current centroid. Ties in assignment go to the lowest
/// cluster index.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64, max_iters: usize) -> Result<Clustering> {
    let n = points.len();
    if k == 0 {
        return Err(PreprocessError::Invalid("k must be at least 1".into()));
    }
    if k > n {
        return Err(PreprocessError::TooManyClusters { k, n });
    }
    let dim = points[0].len();
    if let Some(p) = points.iter().position(|p| p.len() != dim) {
        return Err(PreprocessError::Invalid(format!(
            "point {p} has dimension {}, expected {dim}",
            points[p].len()
        )));
    }
    if points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(PreprocessError::Invalid("points contain non-finite values".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = plus_plus_seeds(points, k, &mut rng);
    let mut labels = vec![usize::MAX; n];
    let mut dists = vec![0.0; n];
    let mut sse_trace = Vec::new();
    let mut iterations = 0;

    loop {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let (c, d) = nearest(p, &centroids);
            if labels[i] != c {
                labels[i] = c;
                changed = true;
            }
            dists[i] = d;
        }
        sse_trace.push(dists.iter().sum());
        if !changed || iterations >= max_iters {
            break;
        }
        iterations += 1;

        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &l) in points.iter().zip(&labels) {
            counts[l] += 1;
            for (s, v) in sums[l].iter_mut().zip(p) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                let far = (0..n)
                    .filter(|&i| counts[labels[i]] > 1)
                    .max_by(|&a, &b| {
                        squared_distance(&points[a], &centroids[labels[a]])
                            .total_cmp(&squared_distance(&points[b], &centroids[labels[b]]))
                            .then(b.cmp(&a))
                    });
                if let Some(i) = far {
                    counts[labels[i]] -= 1;
                    counts[c] = 1;
                    centroids[c] = points[i].clone();
                }
            }
        }
    }

    Ok(Clustering {
        k,
        seed,
        centroids,
        labels,
        sse_trace,
        iterations,
    })
}
