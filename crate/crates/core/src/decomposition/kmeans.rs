//! Lloyd's k-means with k-means++ seeding, in f64.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cae::FeatureMatrix;
use crate::error::{Error, Result};
use crate::rng::{rng_from, tag};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub k: usize,
    pub d: usize,
    /// `k * d` row-major.
    pub centroids: Vec<f64>,
    pub assignments: Vec<usize>,
    /// Sum of squared Euclidean distances to the assigned centroids.
    pub inertia: f64,
    /// Inertia after the initial assignment and after every Lloyd iteration.
    pub inertia_history: Vec<f64>,
}

impl ClusterModel {
    pub fn centroid(&self, j: usize) -> &[f64] {
        &self.centroids[j * self.d..(j + 1) * self.d]
    }

    /// Centroids as a feature matrix with ids `centroid-<j>`.
    pub fn centroid_matrix(&self) -> Result<FeatureMatrix> {
        FeatureMatrix::new(
            (0..self.k).map(|j| format!("centroid-{j}")).collect(),
            self.d,
            self.centroids.iter().map(|&v| v as f32).collect(),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KMeansParams {
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for KMeansParams {
    fn default() -> Self {
        Self {
            max_iter: 100,
            tol: 1e-6,
        }
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// SED of an assignment, summed in sample order.
pub fn sed(points: &[f64], d: usize, centroids: &[f64], assignments: &[usize]) -> f64 {
    assignments
        .iter()
        .enumerate()
        .map(|(i, &a)| sq_dist(&points[i * d..(i + 1) * d], &centroids[a * d..(a + 1) * d]))
        .sum()
}

/// Nearest centroid per point; ties go to the lower index.
fn assign(points: &[f64], d: usize, centroids: &[f64], k: usize) -> Vec<usize> {
    points
        .chunks_exact(d)
        .map(|p| {
            let mut best = (f64::INFINITY, 0);
            for j in 0..k {
                let dist = sq_dist(p, &centroids[j * d..(j + 1) * d]);
                if dist < best.0 {
                    best = (dist, j);
                }
            }
            best.1
        })
        .collect()
}

/// Gives every empty cluster the point farthest from its centroid, taken from
/// clusters that keep at least one member.
fn repair(points: &[f64], d: usize, centroids: &mut [f64], assignments: &mut [usize], k: usize) {
    let mut counts = vec![0usize; k];
    for &a in assignments.iter() {
        counts[a] += 1;
    }
    while let Some(empty) = counts.iter().position(|&c| c == 0) {
        let mut far = (-1.0, usize::MAX);
        for (i, &a) in assignments.iter().enumerate() {
            if counts[a] > 1 {
                let dist = sq_dist(&points[i * d..(i + 1) * d], &centroids[a * d..(a + 1) * d]);
                if dist > far.0 {
                    far = (dist, i);
                }
            }
        }
        let i = far.1;
        counts[assignments[i]] -= 1;
        counts[empty] += 1;
        assignments[i] = empty;
        centroids[empty * d..(empty + 1) * d].copy_from_slice(&points[i * d..(i + 1) * d]);
    }
}

fn update(points: &[f64], d: usize, assignments: &[usize], k: usize) -> Vec<f64> {
    let mut sums = vec![0.0; k * d];
    let mut counts = vec![0usize; k];
    for (p, &a) in points.chunks_exact(d).zip(assignments) {
        counts[a] += 1;
        for (s, v) in sums[a * d..(a + 1) * d].iter_mut().zip(p) {
            *s += v;
        }
    }
    for (j, &c) in counts.iter().enumerate() {
        for s in &mut sums[j * d..(j + 1) * d] {
            *s /= c as f64;
        }
    }
    sums
}

fn plus_plus_init(points: &[f64], n: usize, d: usize, k: usize, seed: u64) -> Vec<f64> {
    let mut rng = rng_from(seed, &[tag("kmeans++")]);
    let mut chosen = vec![rng.random_range(0..n)];
    let mut nearest: Vec<f64> = (0..n)
        .map(|i| sq_dist(&points[i * d..(i + 1) * d], &points[chosen[0] * d..(chosen[0] + 1) * d]))
        .collect();
    while chosen.len() < k {
        let total: f64 = nearest.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random_range(0.0..total);
            let mut pick = n - 1;
            for (i, &w) in nearest.iter().enumerate() {
                if target < w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            // Guard against landing on a zero-weight point through rounding.
            if nearest[pick] == 0.0 {
                pick = nearest.iter().rposition(|&w| w > 0.0).expect("positive total");
            }
            pick
        } else {
            // Fewer distinct points than clusters; duplicates are fine here.
            rng.random_range(0..n)
        };
        for (i, w) in nearest.iter_mut().enumerate() {
            *w = w.min(sq_dist(&points[i * d..(i + 1) * d], &points[next * d..(next + 1) * d]));
        }
        chosen.push(next);
    }
    chosen
        .iter()
        .flat_map(|&i| points[i * d..(i + 1) * d].iter().copied())
        .collect()
}

/// Clusters the rows of `features` into `k` groups.
///
/// Stops when an iteration improves inertia by less than `tol`, when the
/// assignment no longer changes, or after `max_iter` iterations. An iteration
/// that would raise inertia (only possible through rounding) is discarded, so
/// the recorded inertia never increases.
pub fn kmeans(features: &FeatureMatrix, k: usize, seed: u64, max_iter: usize, tol: f64) -> Result<ClusterModel> {
    let points: Vec<f64> = features.data().iter().map(|&v| v as f64).collect();
    kmeans_points(&points, features.d(), k, seed, max_iter, tol)
}

/// [`kmeans`] over raw row-major points.
pub fn kmeans_points(points: &[f64], d: usize, k: usize, seed: u64, max_iter: usize, tol: f64) -> Result<ClusterModel> {
    if d == 0 || !points.len().is_multiple_of(d) {
        return Err(Error::input(format!("{} values do not form rows of {d}", points.len())));
    }
    let n = points.len() / d;
    if k < 1 || n < k {
        return Err(Error::input(format!("k-means needs 1 <= k <= n (k = {k}, n = {n})")));
    }
    if max_iter < 1 || !(tol >= 0.0) {
        return Err(Error::input("k-means needs max_iter >= 1 and tol >= 0"));
    }
    if let Some(i) = points.iter().position(|v| !v.is_finite()) {
        return Err(Error::Numerical(format!("non-finite feature in row {}", i / d)));
    }
    let mut centroids = plus_plus_init(points, n, d, k, seed);
    let mut assignments = assign(points, d, &centroids, k);
    repair(points, d, &mut centroids, &mut assignments, k);
    let mut inertia = sed(points, d, &centroids, &assignments);
    let mut history = vec![inertia];
    for _ in 0..max_iter {
        let mut next_c = update(points, d, &assignments, k);
        let mut next_a = assign(points, d, &next_c, k);
        repair(points, d, &mut next_c, &mut next_a, k);
        let next_inertia = sed(points, d, &next_c, &next_a);
        if next_inertia > inertia {
            break;
        }
        let unchanged = next_a == assignments;
        let improvement = inertia - next_inertia;
        centroids = next_c;
        assignments = next_a;
        inertia = next_inertia;
        history.push(inertia);
        if unchanged || improvement < tol {
            break;
        }
    }
    Ok(ClusterModel {
        k,
        d,
        centroids,
        assignments,
        inertia,
        inertia_history: history,
    })
}
