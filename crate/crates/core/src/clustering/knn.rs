use rayon::prelude::*;

use super::{rows, sq_dist};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Brute-force k-nearest-neighbor classifier.
#[derive(Clone, Debug, PartialEq)]
pub struct KnnModel {
    points: Vec<f32>,
    dim: usize,
    labels: Vec<u32>,
    k: usize,
}

impl KnnModel {
    pub fn new(points: &Tensor, labels: Vec<u32>, k: usize) -> Result<Self> {
        let (n, dim, points) = rows(points)?;
        let points = points.to_vec();
        if labels.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                actual: labels.len(),
            });
        }
        if k == 0 || k > n {
            return Err(Error::BadK { k, n });
        }
        Ok(KnnModel { points, dim, labels, k })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn train_len(&self) -> usize {
        self.labels.len()
    }

    pub fn train_labels(&self) -> &[u32] {
        &self.labels
    }

    fn predict_one(&self, q: &[f32]) -> u32 {
        // (distance, index) keeps neighbor selection deterministic on ties.
        let mut nearest: Vec<(f64, usize)> = Vec::with_capacity(self.k + 1);
        for (i, p) in self.points.chunks_exact(self.dim).enumerate() {
            let d = sq_dist(q, p);
            if nearest.len() == self.k && d >= nearest[self.k - 1].0 {
                continue;
            }
            let pos = nearest.partition_point(|&(nd, _)| nd <= d);
            nearest.insert(pos, (d, i));
            nearest.truncate(self.k);
        }
        let mut votes: Vec<(u32, usize)> = Vec::new();
        for &(_, i) in &nearest {
            let l = self.labels[i];
            match votes.iter_mut().find(|(vl, _)| *vl == l) {
                Some(v) => v.1 += 1,
                None => votes.push((l, 1)),
            }
        }
        votes
            .into_iter()
            .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
            .map(|(l, _)| l)
            .unwrap()
    }
}

/// Majority vote among the `k` nearest training points (L2); ties go to the
/// smallest label.
pub fn knn_predict(model: &KnnModel, queries: &Tensor) -> Result<Vec<u32>> {
    let (_, cols) = queries.matrix_dims()?;
    if cols != model.dim {
        return Err(Error::DimensionMismatch(format!(
            "queries have {cols} columns, model was trained on {}",
            model.dim
        )));
    }
    let (_, _, q) = rows(queries)?;
    Ok(q.par_chunks_exact(cols).map(|row| model.predict_one(row)).collect())
}
