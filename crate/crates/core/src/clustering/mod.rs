//! k-means, Ward agglomeration and k-nearest-neighbor label extension.

mod kmeans;
mod knn;
mod ward;

pub use kmeans::{kmeans_fit, KMeansModel, KMeansParams};
pub use knn::{knn_predict, KnnModel};
pub use ward::{cut_dendrogram, ward_fit, Dendrogram, Merge};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Row count, column count and data of a finite 2-D tensor.
pub(crate) fn rows(m: &Tensor) -> Result<(usize, usize, &[f32])> {
    let (rows, cols) = m.matrix_dims()?;
    m.ensure_finite()?;
    Ok((rows, cols, m.data()))
}

/// Squared Euclidean distance, summed in eight lanes so it vectorizes.
#[inline]
pub(crate) fn sq_dist<A: Copy + Into<f64>, B: Copy + Into<f64>>(a: &[A], b: &[B]) -> f64 {
    let mut acc = [0f64; 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let tail: f64 = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .map(|(&x, &y)| (x.into() - y.into()).powi(2))
        .sum();
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            let t = x[l].into() - y[l].into();
            acc[l] += t * t;
        }
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

pub(crate) fn require_rows(rows: usize, needed: usize) -> Result<()> {
    if rows < needed {
        Err(Error::TooFewRows { needed, rows })
    } else {
        Ok(())
    }
}
