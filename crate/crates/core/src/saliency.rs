//! Saliency heatmaps and their per-superpixel averaging.

use std::path::Path;

use crate::error::{Error, Result};
use crate::npy;
use crate::pipeline::{upsample, Interpolation};
use crate::superpixel::SuperpixelPartition;
use crate::tensor::Tensor;

/// A `[H, W]` relevance map, optionally tagged with the method that made it.
#[derive(Clone, Debug, PartialEq)]
pub struct SaliencyMap {
    map: Tensor,
    pub method: Option<String>,
}

impl SaliencyMap {
    pub fn new(map: Tensor) -> Result<Self> {
        map.matrix_dims()?;
        map.ensure_finite()?;
        Ok(SaliencyMap { map, method: None })
    }

    pub fn from_vec(height: usize, width: usize, values: Vec<f32>) -> Result<Self> {
        Self::new(Tensor::new(vec![height, width], values)?)
    }

    pub fn with_method(mut self, method: impl Into<String>) -> Self {
        self.method = Some(method.into());
        self
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.map.shape()[0], self.map.shape()[1])
    }

    pub fn values(&self) -> &[f32] {
        self.map.data()
    }

    pub fn tensor(&self) -> &Tensor {
        &self.map
    }

    /// Loads a `[H, W]` map, or a `[1, H, W]` map with a singleton channel.
    pub fn read_npy(path: impl AsRef<Path>) -> Result<Self> {
        let t = npy::read_npy(path)?;
        let t = match *t.shape() {
            [1, h, w] => t.reshape(vec![h, w])?,
            _ => t,
        };
        SaliencyMap::new(t)
    }

    /// Bicubic resize; identity when the size already matches.
    pub fn resized(&self, target: (usize, usize)) -> Result<SaliencyMap> {
        if self.dims() == target {
            return Ok(self.clone());
        }
        let (h, w) = self.dims();
        let up = upsample(
            &self.map.clone().reshape(vec![1, h, w])?,
            target,
            Interpolation::Bicubic,
        )?;
        Ok(SaliencyMap {
            map: up.reshape(vec![target.0, target.1])?,
            method: self.method.clone(),
        })
    }
}

/// Rescales to `[0, 1]`; a constant map becomes all zeros.
pub fn minmax_normalize(s: &SaliencyMap) -> Result<SaliencyMap> {
    s.map.ensure_finite()?;
    let (lo, hi) = s
        .values()
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let range = hi as f64 - lo as f64;
    let data = if range > 0.0 {
        s.values()
            .iter()
            .map(|&v| ((v as f64 - lo as f64) / range) as f32)
            .collect()
    } else {
        vec![0.0; s.values().len()]
    };
    Ok(SaliencyMap {
        map: Tensor::new(s.map.shape().to_vec(), data)?,
        method: s.method.clone(),
    })
}

/// Mean saliency of every component of `p`.
///
/// A map at a different resolution is bicubically resized to the
/// partition's size first.
pub fn component_means(s: &SaliencyMap, p: &SuperpixelPartition) -> Result<Vec<f64>> {
    let s = s.resized(p.dims())?;
    let mut sums = vec![0f64; p.component_count];
    for (i, &v) in s.values().iter().enumerate() {
        sums[p.component_of(i)] += v as f64;
    }
    Ok(sums
        .iter()
        .zip(&p.component_sizes)
        .map(|(s, &n)| s / n as f64)
        .collect())
}

/// Replaces every pixel by the mean saliency of its component.
pub fn superpixelify(s: &SaliencyMap, p: &SuperpixelPartition) -> Result<SaliencyMap> {
    let means = component_means(s, p)?;
    let (h, w) = p.dims();
    let data = (0..h * w).map(|i| means[p.component_of(i)] as f32).collect();
    Ok(SaliencyMap {
        map: Tensor::new(vec![h, w], data)?,
        method: s.method.clone(),
    })
}

/// Strict variant of [`superpixelify`] that refuses mismatched sizes.
pub fn superpixelify_exact(s: &SaliencyMap, p: &SuperpixelPartition) -> Result<SaliencyMap> {
    if s.dims() != p.dims() {
        let ((a, b), (c, d)) = (s.dims(), p.dims());
        return Err(Error::DimensionMismatch(format!(
            "saliency is {a}x{b}, partition is {c}x{d}"
        )));
    }
    superpixelify(s, p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::superpixel::{connected_components, Connectivity, LabelMap};

    #[test]
    fn minmax_cases() {
        let s = SaliencyMap::from_vec(1, 3, vec![1., 2., 3.]).unwrap();
        assert_eq!(minmax_normalize(&s).unwrap().values(), &[0.0, 0.5, 1.0]);
        let c = SaliencyMap::from_vec(2, 2, vec![4.0; 4]).unwrap();
        assert_eq!(minmax_normalize(&c).unwrap().values(), &[0.0; 4]);
        let bad = Tensor::new(vec![1, 2], vec![f32::INFINITY, 0.0]).unwrap();
        assert!(matches!(SaliencyMap::new(bad), Err(Error::NonFiniteInput(0))));
    }

    #[test]
    fn two_components_hand_arithmetic() {
        let labels = LabelMap::new(1, 4, vec![0, 0, 1, 1]).unwrap();
        let p = connected_components(&labels, Connectivity::Four);
        let s = SaliencyMap::from_vec(1, 4, vec![0., 1., 1., 1.]).unwrap();
        assert_eq!(superpixelify(&s, &p).unwrap().values(), &[0.5, 0.5, 1.0, 1.0]);
    }

    #[test]
    fn constant_map_unchanged() {
        let labels = LabelMap::new(3, 3, vec![0, 1, 1, 0, 2, 2, 0, 0, 2]).unwrap();
        let p = connected_components(&labels, Connectivity::Four);
        let s = SaliencyMap::from_vec(3, 3, vec![0.3; 9]).unwrap();
        assert_eq!(superpixelify(&s, &p).unwrap().values(), s.values());
    }

    #[test]
    fn mismatched_resolution() {
        let p = connected_components(&LabelMap::new(4, 4, vec![0; 16]).unwrap(), Connectivity::Four);
        let s = SaliencyMap::from_vec(2, 2, vec![1.0; 4]).unwrap();
        let out = superpixelify(&s, &p).unwrap();
        assert_eq!(out.dims(), (4, 4));
        assert!(out.values().iter().all(|&v| (v - 1.0).abs() < 1e-6));
        assert!(matches!(superpixelify_exact(&s, &p), Err(Error::DimensionMismatch(_))));
    }
}
