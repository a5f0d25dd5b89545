//! Ward agglomerative clustering.
//!
//! Nearest-neighbor-chain over a condensed matrix of squared Ward distances
//! with the Lance–Williams update. Heights follow the usual convention
//! `sqrt(2 * ΔSSE)`, i.e. the Euclidean distance for two singletons.
//! Memory is `O(n²)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{require_rows, rows, sq_dist};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// One agglomeration step. Leaves are `0..n`; merge `i` creates node `n + i`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    pub a: usize,
    pub b: usize,
    pub height: f64,
    pub size: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dendrogram {
    pub leaves: usize,
    /// `leaves - 1` merges with non-decreasing heights.
    pub merges: Vec<Merge>,
}

struct Condensed {
    n: usize,
    d: Vec<f64>,
}

impl Condensed {
    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        let (i, j) = if i < j { (i, j) } else { (j, i) };
        self.n * i - i * (i + 1) / 2 + (j - i - 1)
    }

    #[inline]
    fn get(&self, i: usize, j: usize) -> f64 {
        self.d[self.idx(i, j)]
    }

    #[inline]
    fn set(&mut self, i: usize, j: usize, v: f64) {
        let k = self.idx(i, j);
        self.d[k] = v;
    }
}

/// Builds the Ward dendrogram of the rows of a `[rows, cols]` tensor.
pub fn ward_fit(m: &Tensor) -> Result<Dendrogram> {
    let (n, d, x) = rows(m)?;
    require_rows(n, 2)?;
    // Widening once is exact and spares the inner loop the conversions.
    let x: Vec<f64> = x.iter().map(|&v| v as f64).collect();

    let pairs = n * (n - 1) / 2;
    let mut dist = Condensed {
        n,
        d: vec![0f64; pairs],
    };
    // Condensed rows of a block are contiguous. Tiling keeps the block's
    // points in cache while every later point streams past once.
    const BLOCK: usize = 32;
    let mut blocks: Vec<(usize, &mut [f64])> = Vec::with_capacity(n.div_ceil(BLOCK));
    let mut rest = dist.d.as_mut_slice();
    for i0 in (0..n).step_by(BLOCK) {
        let i1 = (i0 + BLOCK).min(n);
        let len: usize = (i0..i1).map(|i| n - 1 - i).sum();
        let (block, tail) = rest.split_at_mut(len);
        blocks.push((i0, block));
        rest = tail;
    }
    blocks.into_par_iter().for_each(|(i0, block)| {
        let i1 = (i0 + BLOCK).min(n);
        let mut offsets = Vec::with_capacity(i1 - i0);
        let mut off = 0;
        for i in i0..i1 {
            offsets.push(off);
            off += n - 1 - i;
        }
        for j in i0 + 1..n {
            let xj = &x[j * d..(j + 1) * d];
            for i in i0..i1.min(j) {
                block[offsets[i - i0] + j - i - 1] = sq_dist(&x[i * d..(i + 1) * d], xj);
            }
        }
    });

    let mut size = vec![1usize; n];
    let mut active: Vec<usize> = (0..n).collect();
    let mut chain: Vec<usize> = Vec::with_capacity(n);
    // (slot_a, slot_b, squared height) in discovery order.
    let mut raw: Vec<(usize, usize, f64)> = Vec::with_capacity(n - 1);

    while active.len() > 1 {
        if chain.is_empty() {
            chain.push(active[0]);
        }
        let (a, b, dab) = loop {
            let a = *chain.last().unwrap();
            let prev = (chain.len() >= 2).then(|| chain[chain.len() - 2]);
            let (mut best, mut best_d) = match prev {
                Some(p) => (p, dist.get(a, p)),
                None => (usize::MAX, f64::INFINITY),
            };
            for &i in &active {
                if i == a {
                    continue;
                }
                let di = dist.get(a, i);
                if di < best_d || (di == best_d && Some(best) != prev && i < best) {
                    best = i;
                    best_d = di;
                }
            }
            if Some(best) == prev {
                chain.pop();
                chain.pop();
                break (a, best, best_d);
            }
            chain.push(best);
        };

        // The merged cluster lives in the lower slot.
        let (keep, drop) = if a < b { (a, b) } else { (b, a) };
        let (na, nb) = (size[keep] as f64, size[drop] as f64);
        for &k in &active {
            if k == keep || k == drop {
                continue;
            }
            let nk = size[k] as f64;
            let v = ((na + nk) * dist.get(k, keep) + (nb + nk) * dist.get(k, drop) - nk * dab) / (na + nb + nk);
            dist.set(k, keep, v.max(0.0));
        }
        size[keep] += size[drop];
        active.retain(|&s| s != drop);
        raw.push((keep, drop, dab));
    }

    // Stable sort keeps children ahead of parents at equal heights.
    raw.sort_by(|p, q| p.2.total_cmp(&q.2));

    let mut parent: Vec<usize> = (0..n).collect();
    let mut node_of_root: Vec<usize> = (0..n).collect();
    let mut count = vec![1usize; n];
    let mut merges = Vec::with_capacity(n - 1);
    for (step, &(sa, sb, h2)) in raw.iter().enumerate() {
        let (ra, rb) = (find(&mut parent, sa), find(&mut parent, sb));
        let (na, nb) = (node_of_root[ra], node_of_root[rb]);
        let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
        parent[hi] = lo;
        count[lo] += count[hi];
        node_of_root[lo] = n + step;
        merges.push(Merge {
            a: na.min(nb),
            b: na.max(nb),
            height: h2.sqrt(),
            size: count[lo],
        });
    }

    Ok(Dendrogram { leaves: n, merges })
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Flat clustering into `k` groups: the `k - 1` highest merges are undone.
///
/// Labels are numbered by first occurrence over the leaves.
pub fn cut_dendrogram(d: &Dendrogram, k: usize) -> Result<Vec<u32>> {
    let n = d.leaves;
    if k == 0 || k > n {
        return Err(Error::BadK { k, n });
    }
    // Union-find over all 2n - 1 nodes.
    let mut parent: Vec<usize> = (0..2 * n - 1).collect();
    for (step, m) in d.merges.iter().take(n - k).enumerate() {
        let node = n + step;
        parent[m.a] = node;
        parent[m.b] = node;
    }
    let mut label_of_root = std::collections::HashMap::new();
    let mut labels = Vec::with_capacity(n);
    for leaf in 0..n {
        let mut r = leaf;
        while parent[r] != r {
            r = parent[r];
        }
        let next = label_of_root.len() as u32;
        labels.push(*label_of_root.entry(r).or_insert(next));
    }
    Ok(labels)
}
