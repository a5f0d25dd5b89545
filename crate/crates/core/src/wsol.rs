//! Box localization scores from heatmaps.
//!
//! A heatmap is binarized at every threshold of a grid, each connected
//! foreground blob yields its tight box, and an image counts as localized at
//! IoU level `δ` when its best box reaches `δ` against the ground truth.
//! Per level the best threshold is kept; the headline score averages the
//! levels.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::saliency::{minmax_normalize, SaliencyMap};
use crate::superpixel::{connected_components, Connectivity, LabelMap};

/// Half-open pixel box `[x_min, x_max) × [y_min, y_max)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BBox {
    pub x_min: usize,
    pub y_min: usize,
    pub x_max: usize,
    pub y_max: usize,
}

impl BBox {
    pub fn new(x_min: usize, y_min: usize, x_max: usize, y_max: usize) -> Result<Self> {
        if x_max <= x_min || y_max <= y_min {
            return Err(Error::InvalidConfig(format!(
                "empty box [{x_min}, {x_max}) x [{y_min}, {y_max})"
            )));
        }
        Ok(BBox {
            x_min,
            y_min,
            x_max,
            y_max,
        })
    }

    pub fn area(&self) -> usize {
        (self.x_max - self.x_min) * (self.y_max - self.y_min)
    }
}

pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let w = a.x_max.min(b.x_max).saturating_sub(a.x_min.max(b.x_min));
    let h = a.y_max.min(b.y_max).saturating_sub(a.y_min.max(b.y_min));
    let inter = w * h;
    let union = a.area() + b.area() - inter;
    inter as f64 / union as f64
}

/// Tight boxes of the connected regions where `h >= tau`, in raster order of
/// their first pixel.
pub fn boxes_from_heatmap(h: &SaliencyMap, tau: f64, connectivity: Connectivity) -> Vec<BBox> {
    let (height, width) = h.dims();
    let fg: Vec<u32> = h.values().iter().map(|&v| (v as f64 >= tau) as u32).collect();
    if !fg.contains(&1) {
        return Vec::new();
    }
    let map = LabelMap::new(height, width, fg).expect("dims match");
    let p = connected_components(&map, connectivity);
    let mut extents: Vec<Option<BBox>> = vec![None; p.component_count];
    for (i, &c) in p.label_map.labels().iter().enumerate() {
        let c = c as usize;
        if p.parent_cluster[c] == 0 {
            continue;
        }
        let (y, x) = (i / width, i % width);
        let b = extents[c].get_or_insert(BBox {
            x_min: x,
            y_min: y,
            x_max: x + 1,
            y_max: y + 1,
        });
        b.x_min = b.x_min.min(x);
        b.x_max = b.x_max.max(x + 1);
        b.y_max = b.y_max.max(y + 1);
    }
    extents.into_iter().flatten().collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WsolConfig {
    /// Binarization thresholds, sorted.
    pub thresholds: Vec<f64>,
    /// IoU acceptance levels, sorted.
    pub iou_levels: Vec<f64>,
    /// Min-max normalize every heatmap before thresholding.
    pub normalize: bool,
    pub connectivity: Connectivity,
}

impl Default for WsolConfig {
    fn default() -> Self {
        WsolConfig {
            thresholds: (0..=100).map(|i| i as f64 / 100.0).collect(),
            iou_levels: vec![0.3, 0.5, 0.7],
            normalize: true,
            connectivity: Connectivity::Eight,
        }
    }
}

impl WsolConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, grid) in [("thresholds", &self.thresholds), ("iou_levels", &self.iou_levels)] {
            if grid.is_empty() {
                return Err(Error::InvalidConfig(format!("{name} must not be empty")));
            }
            if grid.iter().any(|v| !v.is_finite()) || grid.windows(2).any(|w| w[0] > w[1]) {
                return Err(Error::InvalidConfig(format!("{name} must be finite and sorted")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WsolScores {
    pub iou_levels: Vec<f64>,
    /// Percentage of localized images at the best threshold, per level.
    pub box_acc: Vec<f64>,
    /// The threshold achieving each entry of `box_acc` (smallest on ties).
    pub best_threshold: Vec<f64>,
    /// Mean of `box_acc`.
    pub max_box_acc_v2: f64,
}

/// Best IoU against `gt` for every threshold of `cfg`.
pub fn best_iou_per_threshold(h: &SaliencyMap, gt: &BBox, cfg: &WsolConfig) -> Result<Vec<f64>> {
    let h = if cfg.normalize { minmax_normalize(h)? } else { h.clone() };
    Ok(cfg
        .thresholds
        .iter()
        .map(|&t| {
            boxes_from_heatmap(&h, t, cfg.connectivity)
                .iter()
                .map(|b| iou(b, gt))
                .fold(0.0, f64::max)
        })
        .collect())
}

/// Fraction of localized images, indexed `[threshold][level]`.
pub fn box_acc_grid(heatmaps: &[SaliencyMap], gt: &[BBox], cfg: &WsolConfig) -> Result<Vec<Vec<f64>>> {
    cfg.validate()?;
    if heatmaps.len() != gt.len() {
        return Err(Error::LengthMismatch {
            expected: heatmaps.len(),
            actual: gt.len(),
        });
    }
    if heatmaps.is_empty() {
        return Err(Error::InvalidConfig("no images to score".into()));
    }
    let best: Vec<Vec<f64>> = heatmaps
        .par_iter()
        .zip(gt)
        .map(|(h, g)| best_iou_per_threshold(h, g, cfg))
        .collect::<Result<_>>()?;
    let n = heatmaps.len() as f64;
    Ok((0..cfg.thresholds.len())
        .map(|t| {
            cfg.iou_levels
                .iter()
                .map(|&d| best.iter().filter(|b| b[t] >= d).count() as f64 / n)
                .collect()
        })
        .collect())
}

pub fn max_box_acc_v2(heatmaps: &[SaliencyMap], gt: &[BBox], cfg: &WsolConfig) -> Result<WsolScores> {
    let grid = box_acc_grid(heatmaps, gt, cfg)?;
    let mut box_acc = Vec::with_capacity(cfg.iou_levels.len());
    let mut best_threshold = Vec::with_capacity(cfg.iou_levels.len());
    for d in 0..cfg.iou_levels.len() {
        let (t, acc) =
            grid.iter().enumerate().fold(
                (0, f64::NEG_INFINITY),
                |(bt, ba), (t, row)| {
                    if row[d] > ba {
                        (t, row[d])
                    } else {
                        (bt, ba)
                    }
                },
            );
        box_acc.push(100.0 * acc);
        best_threshold.push(cfg.thresholds[t]);
    }
    let max_box_acc_v2 = box_acc.iter().sum::<f64>() / box_acc.len() as f64;
    Ok(WsolScores {
        iou_levels: cfg.iou_levels.clone(),
        box_acc,
        best_threshold,
        max_box_acc_v2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn iou_hand_cases() {
        let a = BBox::new(0, 0, 2, 2).unwrap();
        let b = BBox::new(1, 0, 3, 2).unwrap();
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &b), 2.0 / 6.0);
        assert_eq!(iou(&a, &BBox::new(5, 5, 6, 6).unwrap()), 0.0);
        assert!(BBox::new(1, 0, 1, 2).is_err());
    }

    #[test]
    fn rectangle_heatmap() {
        let mut v = vec![0.0f32; 36];
        for y in 1..4 {
            for x in 2..5 {
                v[y * 6 + x] = 1.0;
            }
        }
        let h = SaliencyMap::from_vec(6, 6, v).unwrap();
        assert_eq!(
            boxes_from_heatmap(&h, 0.5, Connectivity::Eight),
            vec![BBox::new(2, 1, 5, 4).unwrap()]
        );
        let zero = SaliencyMap::from_vec(2, 2, vec![0.0; 4]).unwrap();
        assert!(boxes_from_heatmap(&zero, 0.5, Connectivity::Eight).is_empty());
    }

    #[test]
    fn diagonal_pixels_join_under_eight_connectivity() {
        let h = SaliencyMap::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(boxes_from_heatmap(&h, 0.5, Connectivity::Eight).len(), 1);
        assert_eq!(boxes_from_heatmap(&h, 0.5, Connectivity::Four).len(), 2);
    }

    #[test]
    fn perfect_heatmap_scores_100() {
        let mut v = vec![0.0f32; 100];
        for y in 2..7 {
            for x in 3..8 {
                v[y * 10 + x] = 1.0;
            }
        }
        let h = SaliencyMap::from_vec(10, 10, v).unwrap();
        let s = max_box_acc_v2(&[h], &[BBox::new(3, 2, 8, 7).unwrap()], &WsolConfig::default()).unwrap();
        assert_eq!(s.box_acc, vec![100.0; 3]);
        assert_eq!(s.max_box_acc_v2, 100.0);
    }

    #[test]
    fn uniform_heatmap_gives_full_image_box() {
        // Normalization maps a constant map to zeros, so only tau = 0 fires.
        let h = SaliencyMap::from_vec(10, 10, vec![0.3; 100]).unwrap();
        let gt = BBox::new(0, 0, 10, 6).unwrap();
        let s = max_box_acc_v2(&[h], &[gt], &WsolConfig::default()).unwrap();
        // IoU = 60 / 100.
        assert_eq!(s.box_acc, vec![100.0, 100.0, 0.0]);
        assert_eq!(s.best_threshold[0], 0.0);
    }

    #[test]
    fn length_mismatch() {
        let h = SaliencyMap::from_vec(2, 2, vec![0.0; 4]).unwrap();
        assert!(matches!(
            max_box_acc_v2(&[h], &[], &WsolConfig::default()),
            Err(Error::LengthMismatch { .. })
        ));
    }
}
