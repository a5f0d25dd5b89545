//! Building the activation feature matrix and segmenting it.
//!
//! Each activation map `[c, h, w]` is upsampled to the output resolution,
//! flattened to one row per pixel (row `y * W + x`), optionally scaled to
//! unit L2 norm per row and divided by `1 + c`, and the per-depth blocks are
//! concatenated along columns. Clustering the rows gives the segmentation.

use serde::{Deserialize, Serialize};

use crate::clustering::{cut_dendrogram, kmeans_fit, ward_fit, KMeansParams};
use crate::error::{Error, Result};
use crate::superpixel::{connected_components, Connectivity, LabelMap, SuperpixelPartition};
use crate::tensor::Tensor;

/// Cubic convolution constant.
pub const BICUBIC_A: f64 = -0.75;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interpolation {
    #[default]
    Bicubic,
    Nearest,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NasConfig {
    pub output_h: usize,
    pub output_w: usize,
    /// Extraction indices, strictly increasing.
    pub depths: Vec<usize>,
    /// Number of clusters.
    pub k: usize,
    pub scale_rows: bool,
    pub weight_channels: bool,
    pub eps: f64,
    pub seed: u64,
}

impl NasConfig {
    pub fn new(output_h: usize, output_w: usize, depths: Vec<usize>, k: usize) -> Self {
        NasConfig {
            output_h,
            output_w,
            depths,
            k,
            scale_rows: true,
            weight_channels: true,
            eps: 1e-12,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let pixels = self.output_h * self.output_w;
        if self.k < 2 || self.k > pixels {
            return Err(Error::InvalidConfig(format!(
                "need 2 <= K <= H*W, got K={} for {}x{}",
                self.k, self.output_h, self.output_w
            )));
        }
        if self.depths.is_empty() {
            return Err(Error::InvalidConfig("depth list is empty".into()));
        }
        if self.depths.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidConfig(format!(
                "depths must be strictly increasing, got {:?}",
                self.depths
            )));
        }
        if !(self.eps > 0.0) {
            return Err(Error::InvalidConfig(format!("eps must be positive, got {}", self.eps)));
        }
        Ok(())
    }
}

/// Rows are output pixels, columns the concatenated per-depth channels.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    pub height: usize,
    pub width: usize,
    pub data: Tensor,
    pub per_depth_cols: Vec<usize>,
}

impl FeatureMatrix {
    pub fn rows(&self) -> usize {
        self.height * self.width
    }

    pub fn cols(&self) -> usize {
        self.per_depth_cols.iter().sum()
    }
}

fn cubic_near(x: f64, a: f64) -> f64 {
    ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0
}

fn cubic_far(x: f64, a: f64) -> f64 {
    ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a
}

/// Source taps and weights for every output position along one axis.
fn bicubic_taps(src: usize, dst: usize) -> Vec<Taps> {
    let scale = src as f64 / dst as f64;
    let last = src as isize - 1;
    (0..dst)
        .map(|i| {
            let real = scale * (i as f64 + 0.5) - 0.5;
            let base = real.floor();
            let t = real - base;
            let w = [
                cubic_far(t + 1.0, BICUBIC_A),
                cubic_near(t, BICUBIC_A),
                cubic_near(1.0 - t, BICUBIC_A),
                cubic_far(2.0 - t, BICUBIC_A),
            ];
            let base = base as isize;
            let idx = [0, 1, 2, 3].map(|k| (base - 1 + k).clamp(0, last) as usize);
            (idx, w)
        })
        .collect()
}

type Taps = ([usize; 4], [f64; 4]);

/// Resizes one `h x w` plane (`w` given) into `dst`; `horiz` is scratch of `h * dst_w`.
fn bicubic_plane(plane: &[f32], w: usize, xt: &[Taps], yt: &[Taps], horiz: &mut [f64], dst: &mut [f32]) {
    let tw = xt.len();
    for (row, out) in plane.chunks_exact(w).zip(horiz.chunks_exact_mut(tw)) {
        for (o, (idx, wt)) in out.iter_mut().zip(xt) {
            *o = 0.0
                + wt[0] * row[idx[0]] as f64
                + wt[1] * row[idx[1]] as f64
                + wt[2] * row[idx[2]] as f64
                + wt[3] * row[idx[3]] as f64;
        }
    }
    for ((idx, wt), out) in yt.iter().zip(dst.chunks_exact_mut(tw)) {
        let r = idx.map(|i| &horiz[i * tw..(i + 1) * tw]);
        for (x, o) in out.iter_mut().enumerate() {
            *o = (0.0 + wt[0] * r[0][x] + wt[1] * r[1][x] + wt[2] * r[2][x] + wt[3] * r[3][x]) as f32;
        }
    }
}

/// Resizes a `[c, h, w]` tensor to `[c, H, W]`.
///
/// Bicubic uses the `a = -0.75` kernel with half-pixel centers and clamped
/// edges. Nearest picks the source pixel containing each target center.
pub fn upsample(t: &Tensor, target: (usize, usize), mode: Interpolation) -> Result<Tensor> {
    let &[c, h, w] = t.shape() else {
        return Err(Error::ShapeMismatch(format!("expected [c,h,w], got {:?}", t.shape())));
    };
    let (th, tw) = target;
    if th == 0 || tw == 0 {
        return Err(Error::ShapeMismatch(format!(
            "target size must be positive, got {th}x{tw}"
        )));
    }
    let src = t.data();
    let mut out = vec![0f32; c * th * tw];
    match mode {
        Interpolation::Nearest => {
            let xs: Vec<usize> = (0..tw).map(|x| crate::superpixel::nearest_source(x, w, tw)).collect();
            for ch in 0..c {
                for y in 0..th {
                    let sy = crate::superpixel::nearest_source(y, h, th);
                    let row = &src[ch * h * w + sy * w..ch * h * w + (sy + 1) * w];
                    let dst = &mut out[ch * th * tw + y * tw..ch * th * tw + (y + 1) * tw];
                    for (d, &sx) in dst.iter_mut().zip(&xs) {
                        *d = row[sx];
                    }
                }
            }
        }
        Interpolation::Bicubic => {
            let xt = bicubic_taps(w, tw);
            let yt = bicubic_taps(h, th);
            let mut horiz = vec![0f64; h * tw];
            for ch in 0..c {
                bicubic_plane(
                    &src[ch * h * w..(ch + 1) * h * w],
                    w,
                    &xt,
                    &yt,
                    &mut horiz,
                    &mut out[ch * th * tw..(ch + 1) * th * tw],
                );
            }
        }
    }
    Tensor::new(vec![c, th, tw], out)
}

/// Divides each row by `max(‖row‖₂, eps)`.
pub fn row_l2_normalize(m: &Tensor, eps: f64) -> Result<Tensor> {
    let (rows, cols) = m.matrix_dims()?;
    m.ensure_finite()?;
    let mut out = m.clone();
    for r in 0..rows {
        let row = &mut out.data_mut()[r * cols..(r + 1) * cols];
        let norm = row.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt();
        let denom = norm.max(eps);
        for v in row {
            *v = (*v as f64 / denom) as f32;
        }
    }
    Ok(out)
}

/// Builds the matrix clustered into superpixels from per-depth activations.
///
/// `acts[i]` must be the activation extracted at `cfg.depths[i]`.
pub fn build_feature_matrix(acts: &[Tensor], cfg: &NasConfig) -> Result<FeatureMatrix> {
    cfg.validate()?;
    if acts.len() != cfg.depths.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} activations for {} depths",
            acts.len(),
            cfg.depths.len()
        )));
    }
    let mut per_depth_cols = Vec::with_capacity(acts.len());
    for a in acts {
        match a.shape() {
            &[c, _, _] => per_depth_cols.push(c),
            s => return Err(Error::ShapeMismatch(format!("activation must be [c,h,w], got {s:?}"))),
        }
        a.ensure_finite()?;
    }
    let (h, w) = (cfg.output_h, cfg.output_w);
    let rows = h * w;
    let cols: usize = per_depth_cols.iter().sum();
    let mut data = vec![0f32; rows * cols];

    // Channels are upsampled a chunk at a time and written straight into
    // their rows; rows are then scaled in place.
    const CHUNK: usize = 16;
    let plain = !cfg.scale_rows && !cfg.weight_channels;
    let mut offset = 0;
    for (a, &c) in acts.iter().zip(&per_depth_cols) {
        let (ah, aw) = (a.shape()[1], a.shape()[2]);
        let (xt, yt) = (bicubic_taps(aw, w), bicubic_taps(ah, h));
        let mut horiz = vec![0f64; ah * w];
        let mut buf = vec![0f32; CHUNK.min(c) * rows];
        let mut norm2 = vec![0f64; rows];
        for j0 in (0..c).step_by(CHUNK) {
            let m = CHUNK.min(c - j0);
            for t in 0..m {
                let plane = &a.data()[(j0 + t) * ah * aw..(j0 + t + 1) * ah * aw];
                bicubic_plane(plane, aw, &xt, &yt, &mut horiz, &mut buf[t * rows..(t + 1) * rows]);
            }
            for (r, n2) in norm2.iter_mut().enumerate() {
                let dst = &mut data[r * cols + offset + j0..r * cols + offset + j0 + m];
                for (t, d) in dst.iter_mut().enumerate() {
                    let v = buf[t * rows + r];
                    *d = v;
                    *n2 += (v as f64).powi(2);
                }
            }
        }
        if !plain {
            for (r, n2) in norm2.iter().enumerate() {
                let mut denom = 1.0f64;
                if cfg.scale_rows {
                    denom *= n2.sqrt().max(cfg.eps);
                }
                if cfg.weight_channels {
                    denom *= 1.0 + c as f64;
                }
                for v in &mut data[r * cols + offset..r * cols + offset + c] {
                    *v = (*v as f64 / denom) as f32;
                }
            }
        }
        offset += c;
    }

    Ok(FeatureMatrix {
        height: h,
        width: w,
        data: Tensor::new(vec![rows, cols], data)?,
        per_depth_cols,
    })
}

/// How feature rows are grouped into clusters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum Clusterer {
    KMeans { max_iter: usize, tol: f64 },
    Ward,
}

impl Default for Clusterer {
    fn default() -> Self {
        let p = KMeansParams::default();
        Clusterer::KMeans {
            max_iter: p.max_iter,
            tol: p.tol,
        }
    }
}

/// A segmentation: raw cluster ids plus their connected components.
#[derive(Clone, Debug)]
pub struct Segmentation {
    pub clusters: LabelMap,
    pub partition: SuperpixelPartition,
}

/// Clusters the rows of `features` into `cfg.k` groups.
pub fn cluster_features(features: &FeatureMatrix, cfg: &NasConfig, clusterer: Clusterer) -> Result<LabelMap> {
    let labels = match clusterer {
        Clusterer::KMeans { max_iter, tol } => {
            let params = KMeansParams {
                k: cfg.k,
                seed: cfg.seed,
                max_iter,
                tol,
            };
            kmeans_fit(&features.data, &params)?.labels
        }
        Clusterer::Ward => {
            let d = ward_fit(&features.data)?;
            cut_dendrogram(&d, cfg.k)?
        }
    };
    LabelMap::new(features.height, features.width, labels)
}

/// Full segmentation of one image from its activations.
pub fn segment(
    acts: &[Tensor],
    cfg: &NasConfig,
    clusterer: Clusterer,
    connectivity: Connectivity,
) -> Result<Segmentation> {
    let features = build_feature_matrix(acts, cfg)?;
    let clusters = cluster_features(&features, cfg, clusterer)?;
    let partition = connected_components(&clusters, connectivity);
    Ok(Segmentation { clusters, partition })
}
