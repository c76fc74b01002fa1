//! Seeded Lloyd's k-means with k-means++ initialization.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scoring::{squared_l2, TokenMatrix};

pub const DEFAULT_MAX_ITERS: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansModel {
    pub centroids: TokenMatrix,
    /// Cluster of every training point after the last iteration.
    pub assignments: Vec<u32>,
    /// Sum of squared distances of points to their centroid.
    pub inertia: f64,
    pub iterations: usize,
}

/// Nearest centroid by squared Euclidean distance; ties go to the lower id.
pub(crate) fn nearest_centroid(point: &[f32], centroids: &TokenMatrix) -> (u32, f32) {
    let mut best = (0u32, f32::INFINITY);
    for (c, row) in centroids.rows().enumerate() {
        let dist = squared_l2(point, row);
        if dist < best.1 {
            best = (c as u32, dist);
        }
    }
    best
}

pub(crate) fn assign_all(points: &TokenMatrix, centroids: &TokenMatrix) -> Vec<(u32, f32)> {
    let dim = points.dim();
    points
        .as_slice()
        .par_chunks_exact(dim)
        .map(|p| nearest_centroid(p, centroids))
        .collect()
}

fn kmeans_plus_plus(points: &TokenMatrix, n_clusters: usize, rng: &mut ChaCha8Rng) -> TokenMatrix {
    let n = points.n_rows();
    let dim = points.dim();
    let mut chosen = vec![false; n];
    let mut data = Vec::with_capacity(n_clusters * dim);

    let first = rng.gen_range(0..n);
    chosen[first] = true;
    data.extend_from_slice(points.row(first));
    let mut min_dist: Vec<f64> = (0..n)
        .map(|i| squared_l2(points.row(i), points.row(first)) as f64)
        .collect();

    for _ in 1..n_clusters {
        let total: f64 = min_dist.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut pick = None;
            for (i, &w) in min_dist.iter().enumerate() {
                if w <= 0.0 {
                    continue;
                }
                pick = Some(i);
                if target < w {
                    break;
                }
                target -= w;
            }
            pick.expect("positive total weight")
        } else {
            // every point coincides with a centroid: pick an unused one
            let free: Vec<usize> = (0..n).filter(|&i| !chosen[i]).collect();
            free[rng.gen_range(0..free.len())]
        };
        chosen[next] = true;
        let c = points.row(next);
        data.extend_from_slice(c);
        for (i, md) in min_dist.iter_mut().enumerate() {
            let d = squared_l2(points.row(i), c) as f64;
            if d < *md {
                *md = d;
            }
        }
    }
    TokenMatrix::new(dim, data).expect("centroid rows have point dimension")
}

/// Trains `n_clusters` centroids on `points`. Identical inputs and seed
/// give bit-identical centroids.
pub fn kmeans_train(
    points: &TokenMatrix,
    n_clusters: usize,
    seed: u64,
    max_iters: usize,
) -> Result<KMeansModel> {
    let n = points.n_rows();
    if n_clusters == 0 {
        return Err(Error::Config("n_clusters must be >= 1".into()));
    }
    if n < n_clusters {
        return Err(Error::Config(format!(
            "k-means needs at least {n_clusters} points, got {n}"
        )));
    }
    let dim = points.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = kmeans_plus_plus(points, n_clusters, &mut rng);
    let mut assignments: Vec<u32> = vec![u32::MAX; n];
    let mut iterations = 0;

    for _ in 0..max_iters {
        iterations += 1;
        let nearest = assign_all(points, &centroids);
        let mut changed = false;
        for (a, (c, _)) in assignments.iter_mut().zip(&nearest) {
            if *a != *c {
                *a = *c;
                changed = true;
            }
        }

        let mut counts = vec![0usize; n_clusters];
        for &a in &assignments {
            counts[a as usize] += 1;
        }
        let mut reseeded = false;
        for empty in 0..n_clusters {
            if counts[empty] > 0 {
                continue;
            }
            let largest = (0..n_clusters)
                .max_by(|&a, &b| counts[a].cmp(&counts[b]).then(b.cmp(&a)))
                .expect("n_clusters >= 1");
            let mut far = (usize::MAX, -1.0f32);
            for (i, &a) in assignments.iter().enumerate() {
                if a as usize == largest {
                    let d = squared_l2(points.row(i), centroids.row(largest));
                    if d > far.1 {
                        far = (i, d);
                    }
                }
            }
            assignments[far.0] = empty as u32;
            counts[largest] -= 1;
            counts[empty] = 1;
            reseeded = true;
        }

        let mut sums = vec![0.0f64; n_clusters * dim];
        for (i, &a) in assignments.iter().enumerate() {
            let s = &mut sums[a as usize * dim..(a as usize + 1) * dim];
            for (acc, &v) in s.iter_mut().zip(points.row(i)) {
                *acc += v as f64;
            }
        }
        let data: Vec<f32> = sums
            .chunks_exact(dim)
            .zip(&counts)
            .flat_map(|(s, &c)| s.iter().map(move |&v| (v / c as f64) as f32))
            .collect();
        centroids = TokenMatrix::new(dim, data)?;

        if !changed && !reseeded {
            break;
        }
    }

    let inertia = (0..n)
        .map(|i| squared_l2(points.row(i), centroids.row(assignments[i] as usize)) as f64)
        .sum();
    Ok(KMeansModel {
        centroids,
        assignments,
        inertia,
        iterations,
    })
}
