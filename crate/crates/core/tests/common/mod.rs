//! Fixtures and independent reference implementations shared by the
//! integration tests and the acceptance harness.
#![allow(dead_code)]

use std::collections::VecDeque;
use std::sync::atomic::{AtomicUsize, Ordering};

use nas_core::gateway::{ModelMeta, Oracle, SyntheticOracle, SyntheticSpec};
use nas_core::{
    build_feature_matrix, connected_components, Connectivity, Error, FeatureMatrix, LabelMap, NasConfig, Result,
    SaliencyMap, SuperpixelPartition, Tensor,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Nearest-center regions on an `h x w` grid; every id in `0..r` occurs.
pub fn voronoi(h: usize, w: usize, r: usize, rng: &mut ChaCha8Rng) -> Vec<u32> {
    let mut centers: Vec<(usize, usize)> = Vec::new();
    while centers.len() < r {
        let c = (rng.random_range(0..h), rng.random_range(0..w));
        if !centers.contains(&c) {
            centers.push(c);
        }
    }
    (0..h * w)
        .map(|i| {
            let (y, x) = ((i / w) as i64, (i % w) as i64);
            (0..r)
                .min_by_key(|&k| {
                    let (cy, cx) = (centers[k].0 as i64, centers[k].1 as i64);
                    ((cy - y).pow(2) + (cx - x).pow(2), k)
                })
                .unwrap() as u32
        })
        .collect()
}

/// Nearest upsampling of a coarse label grid by an integer factor.
pub fn block_upsample(labels: &[u32], h: usize, w: usize, f: usize) -> Vec<u32> {
    (0..h * f * w * f)
        .map(|i| {
            let (y, x) = (i / (w * f), i % (w * f));
            labels[(y / f) * w + x / f]
        })
        .collect()
}

pub fn gaussian(rng: &mut ChaCha8Rng) -> f32 {
    let v: f64 = StandardNormal.sample(rng);
    v as f32
}

/// Activation stack in which every cell carries the embedding of its region
/// in a coarse `ch x cw` region grid, plus Gaussian noise of relative size
/// `noise`. Each `(c, h, w)` must be a multiple of the coarse grid.
pub fn planted_stack(
    coarse: &[u32],
    ch: usize,
    cw: usize,
    shapes: &[(usize, usize, usize)],
    noise: f32,
    rng: &mut ChaCha8Rng,
) -> Vec<Tensor> {
    let regions = *coarse.iter().max().unwrap() as usize + 1;
    shapes
        .iter()
        .map(|&(c, h, w)| {
            assert!(h % ch == 0 && w % cw == 0);
            let emb: Vec<Vec<f32>> = (0..regions).map(|_| (0..c).map(|_| gaussian(rng)).collect()).collect();
            let mut data = vec![0f32; c * h * w];
            for y in 0..h {
                for x in 0..w {
                    let r = coarse[(y * ch / h) * cw + x * cw / w] as usize;
                    for k in 0..c {
                        data[k * h * w + y * w + x] = emb[r][k] + noise * gaussian(rng);
                    }
                }
            }
            Tensor::new(vec![c, h, w], data).unwrap()
        })
        .collect()
}

/// Best fraction of positions on which `a` and `b` agree under a relabeling of `a`.
pub fn agreement(a: &[u32], b: &[u32]) -> f64 {
    assert_eq!(a.len(), b.len());
    let ka = *a.iter().max().unwrap() as usize + 1;
    let kb = *b.iter().max().unwrap() as usize + 1;
    let k = ka.max(kb);
    assert!(k <= 9, "brute force over relabelings is limited to 9 labels");
    let mut table = vec![vec![0usize; k]; k];
    for (&x, &y) in a.iter().zip(b) {
        table[x as usize][y as usize] += 1;
    }
    fn best(table: &[Vec<usize>], row: usize, used: &mut Vec<bool>) -> usize {
        if row == table.len() {
            return 0;
        }
        let mut top = 0;
        for col in 0..table.len() {
            if !used[col] {
                used[col] = true;
                top = top.max(table[row][col] + best(table, row + 1, used));
                used[col] = false;
            }
        }
        top
    }
    best(&table, 0, &mut vec![false; k]) as f64 / a.len() as f64
}

/// Ward merge heights by recomputing every pairwise merge cost from the
/// cluster members at each step.
pub fn naive_ward_heights(points: &[Vec<f64>]) -> Vec<f64> {
    let mut clusters: Vec<Vec<usize>> = (0..points.len()).map(|i| vec![i]).collect();
    let dim = points[0].len();
    let mean = |c: &[usize]| -> Vec<f64> {
        (0..dim)
            .map(|d| c.iter().map(|&i| points[i][d]).sum::<f64>() / c.len() as f64)
            .collect()
    };
    let sse = |c: &[usize]| -> f64 {
        let m = mean(c);
        c.iter()
            .map(|&i| (0..dim).map(|d| (points[i][d] - m[d]).powi(2)).sum::<f64>())
            .sum()
    };
    let mut heights = Vec::new();
    while clusters.len() > 1 {
        let mut best = (f64::INFINITY, 0, 0);
        for a in 0..clusters.len() {
            for b in a + 1..clusters.len() {
                let mut u = clusters[a].clone();
                u.extend(&clusters[b]);
                let delta = sse(&u) - sse(&clusters[a]) - sse(&clusters[b]);
                if delta < best.0 {
                    best = (delta, a, b);
                }
            }
        }
        let (delta, a, b) = best;
        heights.push((2.0 * delta.max(0.0)).sqrt());
        let merged = clusters.remove(b);
        clusters[a].extend(merged);
    }
    heights
}

/// Foreground components by breadth-first flood fill (8-neighborhood);
/// returns half-open boxes `(x0, y0, x1, y1)` in discovery order.
pub fn flood_fill_boxes(mask: &[bool], h: usize, w: usize) -> Vec<(usize, usize, usize, usize)> {
    let mut seen = vec![false; h * w];
    let mut boxes = Vec::new();
    for start in 0..h * w {
        if !mask[start] || seen[start] {
            continue;
        }
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        while let Some(p) = queue.pop_front() {
            let (y, x) = (p / w, p % w);
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x + 1);
            y1 = y1.max(y + 1);
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let (ny, nx) = (y as i64 + dy, x as i64 + dx);
                    if ny < 0 || nx < 0 || ny >= h as i64 || nx >= w as i64 {
                        continue;
                    }
                    let q = ny as usize * w + nx as usize;
                    if mask[q] && !seen[q] {
                        seen[q] = true;
                        queue.push_back(q);
                    }
                }
            }
        }
        boxes.push((x0, y0, x1, y1));
    }
    boxes
}

/// IoU of half-open boxes by counting pixels.
pub fn pixel_iou(a: (usize, usize, usize, usize), b: (usize, usize, usize, usize)) -> f64 {
    let (w, h) = (a.2.max(b.2), a.3.max(b.3));
    let (mut inter, mut union) = (0usize, 0usize);
    for y in 0..h {
        for x in 0..w {
            let ina = x >= a.0 && x < a.2 && y >= a.1 && y < a.3;
            let inb = x >= b.0 && x < b.2 && y >= b.1 && y < b.3;
            inter += (ina && inb) as usize;
            union += (ina || inb) as usize;
        }
    }
    inter as f64 / union as f64
}

/// Second implementation of the box-accuracy score over a full
/// threshold x level grid. Heatmaps are min-max normalized first.
pub fn brute_force_box_acc(
    heatmaps: &[(usize, usize, Vec<f32>)],
    gt: &[(usize, usize, usize, usize)],
    thresholds: &[f64],
    levels: &[f64],
) -> Vec<f64> {
    let n = heatmaps.len();
    let mut hits = vec![vec![0usize; levels.len()]; thresholds.len()];
    for ((h, w, v), &g) in heatmaps.iter().zip(gt) {
        let lo = v.iter().copied().fold(f32::INFINITY, f32::min) as f64;
        let hi = v.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
        let norm: Vec<f64> = v
            .iter()
            .map(|&x| {
                if hi > lo {
                    ((x as f64 - lo) / (hi - lo)) as f32 as f64
                } else {
                    0.0
                }
            })
            .collect();
        for (ti, &t) in thresholds.iter().enumerate() {
            let mask: Vec<bool> = norm.iter().map(|&x| x >= t).collect();
            let best = flood_fill_boxes(&mask, *h, *w)
                .into_iter()
                .map(|b| pixel_iou(b, g))
                .fold(0.0, f64::max);
            for (li, &d) in levels.iter().enumerate() {
                if best >= d {
                    hits[ti][li] += 1;
                }
            }
        }
    }
    (0..levels.len())
        .map(|li| {
            let top = (0..thresholds.len()).map(|ti| hits[ti][li]).max().unwrap();
            100.0 * (top as f64 / n as f64)
        })
        .collect()
}

/// Counts image evaluations of the wrapped oracle.
pub struct Counting<O> {
    pub inner: O,
    images: AtomicUsize,
}

impl<O: Oracle> Counting<O> {
    pub fn new(inner: O) -> Self {
        Counting {
            inner,
            images: AtomicUsize::new(0),
        }
    }

    pub fn images(&self) -> usize {
        self.images.load(Ordering::SeqCst)
    }
}

impl<O: Oracle> Oracle for Counting<O> {
    fn meta(&self) -> &ModelMeta {
        self.inner.meta()
    }

    fn logits(&self, batch: &Tensor) -> Result<Tensor> {
        self.images.fetch_add(batch.shape()[0], Ordering::SeqCst);
        self.inner.logits(batch)
    }

    fn activations(&self, image: &Tensor, depths: &[usize]) -> Result<Vec<Tensor>> {
        self.inner.activations(image, depths)
    }

    fn max_batch(&self) -> usize {
        self.inner.max_batch()
    }
}

/// Fails every logits call once `budget` images have been scored.
pub struct Failing<O> {
    pub inner: O,
    pub budget: usize,
    used: AtomicUsize,
    pub batch: usize,
}

impl<O: Oracle> Failing<O> {
    pub fn new(inner: O, budget: usize, batch: usize) -> Self {
        Failing {
            inner,
            budget,
            used: AtomicUsize::new(0),
            batch,
        }
    }
}

impl<O: Oracle> Oracle for Failing<O> {
    fn meta(&self) -> &ModelMeta {
        self.inner.meta()
    }

    fn logits(&self, batch: &Tensor) -> Result<Tensor> {
        let n = batch.shape()[0];
        if self.used.fetch_add(n, Ordering::SeqCst) + n > self.budget {
            return Err(Error::Unreachable("connection reset".into()));
        }
        self.inner.logits(batch)
    }

    fn activations(&self, image: &Tensor, depths: &[usize]) -> Result<Vec<Tensor>> {
        self.inner.activations(image, depths)
    }

    fn max_batch(&self) -> usize {
        self.batch
    }
}

/// Rectangular block partition: `by x bx` blocks of size `sy x sx`.
pub fn block_labels(by: usize, bx: usize, sy: usize, sx: usize) -> Vec<u32> {
    let (h, w) = (by * sy, bx * sx);
    (0..h * w).map(|i| ((i / w / sy) * bx + (i % w) / sx) as u32).collect()
}

/// A `[C, H, W]` image with every value `v`.
pub fn constant_image(c: usize, h: usize, w: usize, v: f32) -> Tensor {
    Tensor::filled(vec![c, h, w], v).unwrap()
}

pub const SIDE: usize = 24;
pub const TYPES: usize = 4;

/// Images built from the same four region types, laid out differently.
/// Returns features, planted type maps and saliency maps favoring `target`.
pub fn planted_class(seed: u64, images: usize, target: u32) -> (Vec<FeatureMatrix>, Vec<Vec<u32>>, Vec<SaliencyMap>) {
    let mut rng = rng(seed);
    let c = 16;
    let emb: Vec<Vec<f32>> = (0..TYPES)
        .map(|_| (0..c).map(|_| gaussian(&mut rng)).collect())
        .collect();
    let cfg = NasConfig::new(SIDE, SIDE, vec![0], TYPES);
    let (mut feats, mut types, mut sal) = (Vec::new(), Vec::new(), Vec::new());
    for _ in 0..images {
        // Every type appears: the coarse layout is a shuffled Voronoi.
        let coarse = voronoi(6, 6, TYPES, &mut rng);
        let fine = block_upsample(&coarse, 6, 6, 2);
        let mut data = vec![0f32; c * 144];
        for (p, &t) in fine.iter().enumerate() {
            for k in 0..c {
                data[k * 144 + p] = emb[t as usize][k] + 0.05 * gaussian(&mut rng);
            }
        }
        let acts = vec![Tensor::new(vec![c, 12, 12], data).unwrap()];
        feats.push(build_feature_matrix(&acts, &cfg).unwrap());
        let full = block_upsample(&coarse, 6, 6, 4);
        let s = full
            .iter()
            .map(|&t| if t == target { 0.7 } else { 0.2 } + 0.2 * rng.random::<f32>())
            .collect();
        sal.push(SaliencyMap::from_vec(SIDE, SIDE, s).unwrap());
        types.push(full);
    }
    (feats, types, sal)
}

/// Object in the middle worth most of the score; small positive background weights.
pub fn planted_object(seed: u64) -> (SyntheticOracle, SuperpixelPartition, SaliencyMap) {
    let mut rng = rng(seed);
    let (h, w) = (16, 16);
    let mut labels = block_upsample(&voronoi(4, 4, 5, &mut rng), 4, 4, 4);
    for y in 6..10 {
        for x in 5..11 {
            labels[y * w + x] = 5;
        }
    }
    let mut spec = SyntheticSpec::linear_fraction(h, w, labels.clone());
    spec.weights[0] = (0..6)
        .map(|r| if r == 5 { 8.0 } else { rng.random_range(0.0..1.0) })
        .collect();
    let oracle = SyntheticOracle::new(spec).unwrap();
    let p = connected_components(&LabelMap::new(h, w, labels).unwrap(), Connectivity::Four);
    let s = (0..h * w)
        .map(|i| {
            let (y, x) = ((i / w) as f32 - 7.5, (i % w) as f32 - 7.5);
            (-(x * x + y * y) / 20.0).exp() + 0.2 * rng.random::<f32>()
        })
        .collect();
    (oracle, p, SaliencyMap::from_vec(h, w, s).unwrap())
}
