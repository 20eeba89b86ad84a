//! Seeded k-means over unit-norm embedding vectors.
//!
//! k-means++ initialization, Lloyd's iterations (capped), squared Euclidean
//! distance. An empty cluster is reseeded to the point farthest from its
//! (stale) centroid set, so every cluster ends non-empty when `k <= n`.

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::providers::EmbeddingVector;

const MAX_ITERS: usize = 100;

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centroids.iter().enumerate() {
        let d = dist2(point, c);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

/// Cluster `points` into `k` groups; returns the assignment vector
/// (`assignments[i]` is the cluster of point `i`). Deterministic for a given
/// seed.
pub fn kmeans(points: &[EmbeddingVector], k: usize, seed: u64) -> Result<Vec<usize>> {
    if k == 0 || points.is_empty() || k > points.len() {
        return Err(Error::Parameter(format!(
            "kmeans requires 0 < k <= n (k={k}, n={})",
            points.len()
        )));
    }
    let dim = points[0].dim();
    if points.iter().any(|p| p.dim() != dim) {
        return Err(Error::Parameter("kmeans points must share a dimension".into()));
    }
    let pts: Vec<&[f64]> = points.iter().map(|p| p.0.as_slice()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // k-means++ seeding.
    let mut centroids: Vec<Vec<f64>> = vec![pts[rng.gen_range(0..pts.len())].to_vec()];
    while centroids.len() < k {
        let weights: Vec<f64> = pts.iter().map(|p| nearest(p, &centroids).1).collect();
        let next = if weights.iter().sum::<f64>() > 0.0 {
            WeightedIndex::new(&weights)
                .map_err(|e| Error::Parameter(e.to_string()))?
                .sample(&mut rng)
        } else {
            // All points coincide with existing centroids; pick uniformly.
            rng.gen_range(0..pts.len())
        };
        centroids.push(pts[next].to_vec());
    }

    let mut assignments = vec![0usize; pts.len()];
    for _ in 0..MAX_ITERS {
        let mut changed = false;
        for (i, p) in pts.iter().enumerate() {
            let (c, _) = nearest(p, &centroids);
            if assignments[i] != c {
                assignments[i] = c;
                changed = true;
            }
        }

        let mut sums = vec![vec![0.0f64; dim]; k];
        let mut counts = vec![0usize; k];
        for (i, p) in pts.iter().enumerate() {
            counts[assignments[i]] += 1;
            for (s, v) in sums[assignments[i]].iter_mut().zip(*p) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                // Reseed to the point farthest from any current centroid.
                let far = (0..pts.len())
                    .max_by(|&a, &b| {
                        nearest(pts[a], &centroids)
                            .1
                            .partial_cmp(&nearest(pts[b], &centroids).1)
                            .unwrap()
                    })
                    .unwrap();
                centroids[c] = pts[far].to_vec();
                changed = true;
            } else {
                for (j, s) in sums[c].iter().enumerate() {
                    centroids[c][j] = s / counts[c] as f64;
                }
            }
        }
        if !changed {
            break;
        }
    }
    // Final assignment pass so the output matches the last centroids.
    for (i, p) in pts.iter().enumerate() {
        assignments[i] = nearest(p, &centroids).0;
    }
    Ok(assignments)
}
