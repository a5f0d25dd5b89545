//! Label maps, their connected components, and boundary overlays.
//!
//! Clustering activations carries no spatial term, so a single cluster can
//! cover several disconnected regions. Region-level operations (saliency
//! aggregation, deletion curves) work on the connected components of a
//! cluster map; per-cluster statistics keep the raw cluster ids. Both are
//! available from [`SuperpixelPartition`].

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::npy;
use crate::tensor::Tensor;

/// Per-pixel non-negative labels in row-major order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    height: usize,
    width: usize,
    labels: Vec<u32>,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, labels: Vec<u32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::ShapeMismatch(format!(
                "label map must be non-empty, got {height}x{width}"
            )));
        }
        if labels.len() != height * width {
            return Err(Error::LengthMismatch {
                expected: height * width,
                actual: labels.len(),
            });
        }
        Ok(LabelMap { height, width, labels })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn get(&self, y: usize, x: usize) -> u32 {
        self.labels[y * self.width + x]
    }

    /// Sorted set of labels present.
    pub fn distinct(&self) -> BTreeSet<u32> {
        self.labels.iter().copied().collect()
    }

    pub fn read_npy(path: impl AsRef<Path>) -> Result<Self> {
        let (shape, labels) = npy::read_labels_npy(path)?;
        match shape.as_slice() {
            &[h, w] => LabelMap::new(h, w, labels),
            s => Err(Error::ShapeMismatch(format!("label map must be 2-D, got {s:?}"))),
        }
    }

    pub fn write_npy(&self, path: impl AsRef<Path>) -> Result<()> {
        npy::write_labels_npy(&[self.height, self.width], &self.labels, path)
    }
}

/// Pixel neighborhood, serialized as `4` or `8`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Connectivity {
    #[default]
    Four,
    Eight,
}

impl TryFrom<u8> for Connectivity {
    type Error = Error;

    fn try_from(n: u8) -> Result<Self> {
        Connectivity::from_neighbors(n)
    }
}

impl From<Connectivity> for u8 {
    fn from(c: Connectivity) -> u8 {
        match c {
            Connectivity::Four => 4,
            Connectivity::Eight => 8,
        }
    }
}

impl Connectivity {
    pub fn from_neighbors(n: u8) -> Result<Self> {
        match n {
            4 => Ok(Connectivity::Four),
            8 => Ok(Connectivity::Eight),
            other => Err(Error::InvalidConfig(format!(
                "connectivity must be 4 or 8, got {other}"
            ))),
        }
    }

    /// Offsets of already-visited neighbors in a raster scan.
    fn backward_offsets(self) -> &'static [(isize, isize)] {
        match self {
            Connectivity::Four => &[(-1, 0), (0, -1)],
            Connectivity::Eight => &[(-1, -1), (-1, 0), (-1, 1), (0, -1)],
        }
    }
}

/// Connected components of a label map.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SuperpixelPartition {
    /// Component ids, consecutive from 0 in raster order of first pixel.
    pub label_map: LabelMap,
    pub component_count: usize,
    /// Original cluster label of each component.
    pub parent_cluster: Vec<u32>,
    pub component_sizes: Vec<usize>,
}

impl SuperpixelPartition {
    pub fn dims(&self) -> (usize, usize) {
        self.label_map.dims()
    }

    pub fn component_of(&self, pixel: usize) -> usize {
        self.label_map.labels[pixel] as usize
    }

    /// Pixel indices of every component, in raster order.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.component_count];
        for (i, &c) in self.label_map.labels.iter().enumerate() {
            out[c as usize].push(i);
        }
        out
    }
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

fn union(parent: &mut [usize], a: usize, b: usize) {
    let (ra, rb) = (find(parent, a), find(parent, b));
    if ra != rb {
        // Keep the smaller index as root so roots are first pixels.
        let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
        parent[hi] = lo;
    }
}

/// Splits a label map into connected same-label components.
///
/// Two-pass union-find; components are numbered by their first pixel in
/// raster order.
pub fn connected_components(m: &LabelMap, connectivity: Connectivity) -> SuperpixelPartition {
    let (h, w) = m.dims();
    let n = h * w;
    let mut parent: Vec<usize> = (0..n).collect();
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            for &(dy, dx) in connectivity.backward_offsets() {
                let (ny, nx) = (y as isize + dy, x as isize + dx);
                if ny < 0 || nx < 0 || nx >= w as isize {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if m.labels[j] == m.labels[i] {
                    union(&mut parent, i, j);
                }
            }
        }
    }

    let mut comp_of_root = vec![u32::MAX; n];
    let mut labels = vec![0u32; n];
    let mut parent_cluster = Vec::new();
    let mut sizes = Vec::new();
    for i in 0..n {
        let r = find(&mut parent, i);
        if comp_of_root[r] == u32::MAX {
            comp_of_root[r] = parent_cluster.len() as u32;
            parent_cluster.push(m.labels[i]);
            sizes.push(0);
        }
        let c = comp_of_root[r];
        labels[i] = c;
        sizes[c as usize] += 1;
    }

    SuperpixelPartition {
        label_map: LabelMap {
            height: h,
            width: w,
            labels,
        },
        component_count: parent_cluster.len(),
        parent_cluster,
        component_sizes: sizes,
    }
}

/// Index of the source sample whose cell contains the center of target `i`.
pub(crate) fn nearest_source(i: usize, src: usize, dst: usize) -> usize {
    let pos = ((i as f64 + 0.5) * src as f64 / dst as f64).floor() as usize;
    pos.min(src - 1)
}

/// Nearest-neighbor resize with half-pixel centers.
pub fn upsample_labels_nearest(m: &LabelMap, target: (usize, usize)) -> Result<LabelMap> {
    let (th, tw) = target;
    if th == 0 || tw == 0 {
        return Err(Error::ShapeMismatch(format!(
            "target size must be positive, got {th}x{tw}"
        )));
    }
    let xs: Vec<usize> = (0..tw).map(|x| nearest_source(x, m.width, tw)).collect();
    let mut labels = Vec::with_capacity(th * tw);
    for y in 0..th {
        let sy = nearest_source(y, m.height, th);
        labels.extend(xs.iter().map(|&sx| m.get(sy, sx)));
    }
    LabelMap::new(th, tw, labels)
}

/// Whether pixel `(y, x)` has a 4-neighbor carrying a different label.
fn is_boundary(m: &LabelMap, y: usize, x: usize) -> bool {
    let l = m.get(y, x);
    (y > 0 && m.get(y - 1, x) != l)
        || (y + 1 < m.height && m.get(y + 1, x) != l)
        || (x > 0 && m.get(y, x - 1) != l)
        || (x + 1 < m.width && m.get(y, x + 1) != l)
}

/// Per-pixel fraction of maps in which the pixel lies on a boundary.
pub fn boundary_frequency(maps: &[LabelMap]) -> Result<Tensor> {
    let first = maps
        .first()
        .ok_or_else(|| Error::InvalidConfig("boundary frequency needs at least one map".into()))?;
    let (h, w) = first.dims();
    if let Some(bad) = maps.iter().find(|m| m.dims() != (h, w)) {
        return Err(Error::DimensionMismatch(format!(
            "expected {h}x{w}, got {}x{}",
            bad.height, bad.width
        )));
    }
    let mut counts = vec![0u32; h * w];
    for m in maps {
        for y in 0..h {
            for x in 0..w {
                if is_boundary(m, y, x) {
                    counts[y * w + x] += 1;
                }
            }
        }
    }
    let n = maps.len() as f32;
    Tensor::new(vec![h, w], counts.into_iter().map(|c| c as f32 / n).collect())
}
