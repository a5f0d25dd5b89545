//! Lloyd's algorithm with k-means++ seeding.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{require_rows, rows, sq_dist};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KMeansParams {
    pub k: usize,
    pub seed: u64,
    pub max_iter: usize,
    /// Convergence threshold on the largest centroid displacement, relative
    /// to the RMS norm of the data rows.
    pub tol: f64,
}

impl Default for KMeansParams {
    fn default() -> Self {
        KMeansParams {
            k: 5,
            seed: 0,
            max_iter: 300,
            tol: 1e-4,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct KMeansModel {
    /// Row-major `[k, dim]`.
    pub centroids: Vec<f64>,
    pub dim: usize,
    pub labels: Vec<u32>,
    /// Sum of squared distances to the assigned centroids.
    pub inertia: f64,
    pub iterations_run: usize,
    pub seed: u64,
    /// Inertia after every assignment step, final assignment included.
    pub inertia_trace: Vec<f64>,
}

impl KMeansModel {
    pub fn k(&self) -> usize {
        self.centroids.len() / self.dim.max(1)
    }

    pub fn centroid(&self, j: usize) -> &[f64] {
        &self.centroids[j * self.dim..(j + 1) * self.dim]
    }
}

/// Index drawn with probability proportional to `w`.
fn sample_weighted(w: &[f64], total: f64, rng: &mut ChaCha8Rng) -> usize {
    let n = w.len();
    if !(total > 0.0) {
        return rng.random_range(0..n);
    }
    let mut r = rng.random::<f64>() * total;
    let mut pick = n - 1;
    for (i, &wi) in w.iter().enumerate() {
        if wi > 0.0 && r < wi {
            pick = i;
            break;
        }
        r -= wi;
    }
    // Rounding can run past the end; fall back to the last positive weight.
    if w[pick] == 0.0 {
        pick = w.iter().rposition(|&v| v > 0.0).unwrap_or(pick);
    }
    pick
}

/// Greedy k-means++: each new center is the best of `2 + ln k` candidates
/// drawn proportionally to the squared distance to the chosen centers.
fn plus_plus_init(x: &[f32], n: usize, d: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let trials = 2 + (k as f64).ln() as usize;
    let row = |i: usize| &x[i * d..(i + 1) * d];
    let mut centroids = Vec::with_capacity(k * d);
    let first = rng.random_range(0..n);
    centroids.extend(row(first).iter().map(|&v| v as f64));
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(row(i), row(first))).collect();
    for _ in 1..k {
        let total: f64 = d2.iter().sum();
        let candidates: Vec<usize> = (0..trials).map(|_| sample_weighted(&d2, total, rng)).collect();
        // One pass over the rows scores every candidate.
        let mut next = vec![vec![0f64; n]; trials];
        for (i, &di) in d2.iter().enumerate() {
            for (t, &c) in candidates.iter().enumerate() {
                next[t][i] = di.min(sq_dist(row(i), row(c)));
            }
        }
        let potentials: Vec<f64> = next.iter().map(|v| v.iter().sum()).collect();
        let mut best = 0;
        for t in 1..trials {
            if potentials[t] < potentials[best] {
                best = t;
            }
        }
        centroids.extend(row(candidates[best]).iter().map(|&v| v as f64));
        d2 = next.swap_remove(best);
    }
    centroids
}

/// Assigns each row to its nearest centroid (lowest index on ties) and
/// returns the per-row squared distances.
fn assign(x: &[f32], n: usize, d: usize, centroids: &[f64], labels: &mut [u32], dists: &mut [f64]) -> f64 {
    let k = centroids.len() / d;
    let mut inertia = 0.0;
    for i in 0..n {
        let row = &x[i * d..(i + 1) * d];
        let mut best = (0usize, f64::INFINITY);
        for j in 0..k {
            let dist = sq_dist(row, &centroids[j * d..(j + 1) * d]);
            if dist < best.1 {
                best = (j, dist);
            }
        }
        labels[i] = best.0 as u32;
        dists[i] = best.1;
        inertia += best.1;
    }
    inertia
}

/// Fits k-means to the rows of a `[rows, cols]` tensor.
///
/// Deterministic for a given input and parameter set. Clusters that become
/// empty are reseeded at the point farthest from its current centroid.
pub fn kmeans_fit(m: &Tensor, params: &KMeansParams) -> Result<KMeansModel> {
    let (n, d, x) = rows(m)?;
    let k = params.k;
    if k == 0 {
        return Err(Error::BadK { k, n });
    }
    require_rows(n, k)?;

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut centroids = plus_plus_init(x, n, d, k, &mut rng);
    let scale = (x.iter().map(|&v| (v as f64).powi(2)).sum::<f64>() / n as f64).sqrt();
    let threshold = params.tol * scale;

    let mut labels = vec![0u32; n];
    let mut dists = vec![0f64; n];
    let mut trace = Vec::new();
    let mut iterations = 0;

    while iterations < params.max_iter {
        let inertia = assign(x, n, d, &centroids, &mut labels, &mut dists);
        check_monotone(&trace, inertia);
        trace.push(inertia);

        let mut sums = vec![0f64; k * d];
        let mut counts = vec![0usize; k];
        for i in 0..n {
            let j = labels[i] as usize;
            counts[j] += 1;
            for (s, v) in sums[j * d..(j + 1) * d].iter_mut().zip(&x[i * d..(i + 1) * d]) {
                *s += *v as f64;
            }
        }
        let mut next = centroids.clone();
        for j in 0..k {
            if counts[j] > 0 {
                for (c, s) in next[j * d..(j + 1) * d].iter_mut().zip(&sums[j * d..(j + 1) * d]) {
                    *c = s / counts[j] as f64;
                }
            }
        }
        for j in 0..k {
            if counts[j] > 0 {
                continue;
            }
            // Farthest point from its own centroid; ties go to the lowest index.
            let far =
                (0..n)
                    .filter(|&i| counts[labels[i] as usize] > 1)
                    .fold(None, |best: Option<usize>, i| match best {
                        Some(b) if dists[b] >= dists[i] => Some(b),
                        _ => Some(i),
                    });
            let Some(far) = far else { break };
            counts[labels[far] as usize] -= 1;
            counts[j] = 1;
            labels[far] = j as u32;
            dists[far] = 0.0;
            for (c, &v) in next[j * d..(j + 1) * d].iter_mut().zip(&x[far * d..(far + 1) * d]) {
                *c = v as f64;
            }
        }

        let shift = (0..k)
            .map(|j| sq_dist(&centroids[j * d..(j + 1) * d], &next[j * d..(j + 1) * d]).sqrt())
            .fold(0.0, f64::max);
        centroids = next;
        iterations += 1;
        if shift < threshold || shift == 0.0 {
            break;
        }
    }

    let inertia = assign(x, n, d, &centroids, &mut labels, &mut dists);
    check_monotone(&trace, inertia);
    trace.push(inertia);

    Ok(KMeansModel {
        centroids,
        dim: d,
        labels,
        inertia,
        iterations_run: iterations,
        seed: params.seed,
        inertia_trace: trace,
    })
}

fn check_monotone(trace: &[f64], inertia: f64) {
    if let Some(&prev) = trace.last() {
        debug_assert!(
            inertia <= prev + 1e-9 * prev.abs().max(f64::MIN_POSITIVE),
            "k-means inertia increased: {prev} -> {inertia}"
        );
    }
}
