//! An in-process oracle: a linear model over per-region pixel sums.
//!
//! The image is split into planted regions. The logit of class `q` is
//! `bias[q] + Σ_r weights[q][r] · S_r / (C·H·W)` where `S_r` sums the
//! standardized pixel values of region `r` over all channels. Activations
//! at depth `d` average, over each cell of a `h_d × w_d` grid, the
//! channel-mean intensity of every region times a fixed per-region
//! embedding, so clustering them recovers the planted regions.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ModelMeta, Normalization, Oracle};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// Region id per pixel, row-major.
    pub regions: Vec<u32>,
    /// `[Q][R]` weights on normalized region sums.
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    /// Channel count and spatial size `[c, h, w]` of every extraction point.
    pub depth_shapes: Vec<[usize; 3]>,
    pub embed_seed: u64,
}

impl SyntheticSpec {
    /// A one-class-of-interest model scoring the fraction of unmasked signal:
    /// class 0 weighs every region by 1, class 1 by 0.
    pub fn linear_fraction(height: usize, width: usize, regions: Vec<u32>) -> Self {
        let r = regions.iter().max().map_or(1, |&m| m as usize + 1);
        SyntheticSpec {
            height,
            width,
            channels: 3,
            regions,
            weights: vec![vec![1.0; r], vec![0.0; r]],
            bias: vec![0.0, 0.0],
            depth_shapes: vec![[8, height.div_ceil(4), width.div_ceil(4)]],
            embed_seed: 0,
        }
    }

    pub fn num_regions(&self) -> usize {
        self.weights.first().map_or(0, Vec::len)
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticOracle {
    spec: SyntheticSpec,
    meta: ModelMeta,
    /// Per depth, `[R][c]` region embeddings.
    embeddings: Vec<Vec<Vec<f64>>>,
}

impl SyntheticOracle {
    pub fn new(spec: SyntheticSpec) -> Result<Self> {
        let (h, w, c) = (spec.height, spec.width, spec.channels);
        if spec.regions.len() != h * w {
            return Err(Error::LengthMismatch {
                expected: h * w,
                actual: spec.regions.len(),
            });
        }
        let r = spec.num_regions();
        if spec.weights.iter().any(|row| row.len() != r) || spec.bias.len() != spec.weights.len() {
            return Err(Error::InvalidConfig(
                "weights must be [Q][R] with one bias per class".into(),
            ));
        }
        if let Some(bad) = spec.regions.iter().find(|&&g| g as usize >= r) {
            return Err(Error::InvalidConfig(format!(
                "region id {bad} has no weight column ({r} regions)"
            )));
        }
        let meta = ModelMeta {
            num_classes: spec.weights.len(),
            depths: spec.depth_shapes.len(),
            channels: spec.depth_shapes.iter().map(|s| s[0]).collect(),
            input_size: [h, w, c],
            normalization: Normalization {
                mean: vec![0.0; c],
                std: vec![1.0; c],
            },
            spatial: Some(spec.depth_shapes.iter().map(|s| [s[1], s[2]]).collect()),
        };
        meta.validate().map_err(|e| Error::InvalidConfig(e.to_string()))?;

        let embeddings = spec
            .depth_shapes
            .iter()
            .enumerate()
            .map(|(d, shape)| {
                let mut rng = ChaCha8Rng::seed_from_u64(spec.embed_seed ^ (d as u64).wrapping_mul(0x9E37_79B9));
                (0..r)
                    .map(|_| (0..shape[0]).map(|_| rng.random_range(-1.0..1.0)).collect())
                    .collect()
            })
            .collect();
        Ok(SyntheticOracle { spec, meta, embeddings })
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let spec: SyntheticSpec =
            serde_json::from_str(&text).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
        Self::new(spec)
    }

    pub fn spec(&self) -> &SyntheticSpec {
        &self.spec
    }

    /// Logits of a single standardized `[C, H, W]` image.
    pub fn score(&self, image: &[f32]) -> Vec<f64> {
        let (h, w, c) = (self.spec.height, self.spec.width, self.spec.channels);
        let plane = h * w;
        let mut sums = vec![0f64; self.spec.num_regions()];
        for ch in 0..c {
            for (p, &v) in image[ch * plane..(ch + 1) * plane].iter().enumerate() {
                sums[self.spec.regions[p] as usize] += v as f64;
            }
        }
        let total = (c * plane) as f64;
        self.spec
            .weights
            .iter()
            .zip(&self.spec.bias)
            .map(|(row, b)| b + row.iter().zip(&sums).map(|(wt, s)| wt * s / total).sum::<f64>())
            .collect()
    }
}

impl Oracle for SyntheticOracle {
    fn meta(&self) -> &ModelMeta {
        &self.meta
    }

    fn logits(&self, batch: &Tensor) -> Result<Tensor> {
        let n = self.meta.check_batch(batch)?;
        let per = batch.len() / n;
        let out: Vec<f32> = batch
            .data()
            .chunks_exact(per)
            .flat_map(|img| self.score(img).into_iter().map(|v| v as f32))
            .collect();
        Tensor::new(vec![n, self.meta.num_classes], out)
    }

    fn activations(&self, image: &Tensor, depths: &[usize]) -> Result<Vec<Tensor>> {
        self.meta.check_depths(depths)?;
        let image = self.meta.check_image(image)?;
        let (h, w, c) = (self.spec.height, self.spec.width, self.spec.channels);
        let plane = h * w;
        let intensity: Vec<f64> = (0..plane)
            .map(|p| (0..c).map(|ch| image.data()[ch * plane + p] as f64).sum::<f64>() / c as f64)
            .collect();
        let r = self.spec.num_regions();

        depths
            .iter()
            .map(|&d| {
                let [ch_out, gh, gw] = self.spec.depth_shapes[d];
                let emb = &self.embeddings[d];
                let mut out = vec![0f32; ch_out * gh * gw];
                let mut mass = vec![0f64; r];
                for cy in 0..gh {
                    let (y0, y1) = (cy * h / gh, ((cy + 1) * h / gh).max(cy * h / gh + 1));
                    for cx in 0..gw {
                        let (x0, x1) = (cx * w / gw, ((cx + 1) * w / gw).max(cx * w / gw + 1));
                        mass.fill(0.0);
                        for y in y0..y1.min(h) {
                            for x in x0..x1.min(w) {
                                let p = y * w + x;
                                mass[self.spec.regions[p] as usize] += intensity[p];
                            }
                        }
                        let area = ((y1.min(h) - y0) * (x1.min(w) - x0)) as f64;
                        for k in 0..ch_out {
                            let v: f64 = (0..r).map(|g| mass[g] * emb[g][k]).sum::<f64>() / area;
                            out[k * gh * gw + cy * gw + cx] = v as f32;
                        }
                    }
                }
                Tensor::new(vec![ch_out, gh, gw], out)
            })
            .collect()
    }

    fn max_batch(&self) -> usize {
        usize::MAX
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fraction_of_unmasked_signal() {
        let spec = SyntheticSpec::linear_fraction(2, 2, vec![0, 0, 1, 1]);
        let o = SyntheticOracle::new(spec).unwrap();
        let mut img = Tensor::filled(vec![1, 3, 2, 2], 1.0).unwrap();
        assert_eq!(o.logits(&img).unwrap().data(), &[1.0, 0.0]);
        for ch in 0..3 {
            img.data_mut()[ch * 4] = 0.0;
        }
        assert_eq!(o.logits(&img).unwrap().data(), &[0.75, 0.0]);
    }

    #[test]
    fn batches_are_ordered_and_deterministic() {
        let spec = SyntheticSpec::linear_fraction(2, 2, vec![0, 1, 1, 1]);
        let o = SyntheticOracle::new(spec).unwrap();
        let mut data = vec![1.0f32; 24];
        data[12..].fill(0.5);
        let out = o.logits(&Tensor::new(vec![2, 3, 2, 2], data).unwrap()).unwrap();
        assert_eq!(out.shape(), &[2, 2]);
        assert_eq!(out.data()[0], 1.0);
        assert_eq!(out.data()[2], 0.5);
    }

    #[test]
    fn activations_have_meta_shapes() {
        let mut spec = SyntheticSpec::linear_fraction(8, 8, (0..64).map(|i| (i % 8 >= 4) as u32).collect());
        spec.depth_shapes = vec![[4, 4, 4], [6, 2, 2]];
        let o = SyntheticOracle::new(spec).unwrap();
        let img = Tensor::filled(vec![3, 8, 8], 1.0).unwrap();
        let acts = o.activations(&img, &[0, 1]).unwrap();
        assert_eq!(acts[0].shape(), &[4, 4, 4]);
        assert_eq!(acts[1].shape(), &[6, 2, 2]);
        assert!(o.activations(&img, &[2]).is_err());
        assert!(o.activations(&img, &[]).unwrap().is_empty());
    }

    #[test]
    fn rejects_inconsistent_specs() {
        let mut spec = SyntheticSpec::linear_fraction(2, 2, vec![0, 0, 1, 1]);
        spec.regions[0] = 5;
        assert!(SyntheticOracle::new(spec).is_err());
        let mut spec = SyntheticSpec::linear_fraction(2, 2, vec![0, 0, 1, 1]);
        spec.bias.pop();
        assert!(SyntheticOracle::new(spec).is_err());
    }
}
