//! Least-relevant-first deletion curves.
//!
//! Superpixels are zeroed one at a time (all channels, after
//! standardization) and the target logit is recorded after every deletion.
//! Curves are rescaled to run from 1 to 0 and scored by their trapezoidal
//! area.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gateway::Oracle;
use crate::saliency::{component_means, SaliencyMap};
use crate::superpixel::SuperpixelPartition;
use crate::tensor::Tensor;
use crate::util::argmax;

/// Horizontal axis of a deletion curve.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum XAxis {
    /// `i / n` after `i` deletions.
    #[default]
    Superpixels,
    /// Fraction of pixels deleted so far.
    Pixels,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LerfCurve {
    /// Target logits `s_0..s_n`; `s_0` is the unmasked image.
    pub scores: Vec<f64>,
    /// Component ids in deletion order.
    pub order: Vec<usize>,
    /// x coordinate of every score.
    pub fractions: Vec<f64>,
    pub scaled: Vec<f64>,
    pub auc: f64,
    /// `s_0 == s_n`, scaled by convention to `[1, 0, .., 0]`.
    pub degenerate: bool,
    /// Some scaled value lies outside `[0, 1]`.
    pub out_of_range: bool,
}

/// Rescales `scores` to `(s_i - s_n) / (s_0 - s_n)` and integrates over `x_i = i / n`.
pub fn scale_and_auc(scores: &[f64]) -> Result<(Vec<f64>, f64)> {
    let n = scores.len().saturating_sub(1);
    let x: Vec<f64> = (0..=n).map(|i| i as f64 / n.max(1) as f64).collect();
    scale_and_auc_with_x(scores, &x)
}

/// Like [`scale_and_auc`] with explicit x coordinates.
pub fn scale_and_auc_with_x(scores: &[f64], x: &[f64]) -> Result<(Vec<f64>, f64)> {
    if scores.len() < 2 {
        return Err(Error::TooShort(scores.len()));
    }
    if x.len() != scores.len() {
        return Err(Error::LengthMismatch {
            expected: scores.len(),
            actual: x.len(),
        });
    }
    if let Some(i) = scores.iter().chain(x).position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput(i));
    }
    let (s0, sn) = (scores[0], scores[scores.len() - 1]);
    let scaled: Vec<f64> = if s0 == sn {
        let mut v = vec![0.0; scores.len()];
        v[0] = 1.0;
        v
    } else {
        scores.iter().map(|s| (s - sn) / (s0 - sn)).collect()
    };
    let auc = scaled
        .windows(2)
        .zip(x.windows(2))
        .map(|(s, x)| (s[0] + s[1]) / 2.0 * (x[1] - x[0]))
        .sum();
    Ok((scaled, auc))
}

/// Component ids by ascending value, ties by id.
pub fn ascending_order(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    order
}

fn check_inputs(img: &Tensor, p: &SuperpixelPartition, oracle: &dyn Oracle, target: usize) -> Result<Tensor> {
    let meta = oracle.meta();
    let img = meta.check_image(img)?;
    if p.dims() != (meta.height(), meta.width()) {
        let (h, w) = p.dims();
        return Err(Error::DimensionMismatch(format!(
            "partition is {h}x{w}, model input is {}x{}",
            meta.height(),
            meta.width()
        )));
    }
    if target >= meta.num_classes {
        return Err(Error::InvalidConfig(format!(
            "target class {target} out of range for {} classes",
            meta.num_classes
        )));
    }
    Ok(img)
}

fn zero_pixels(img: &mut [f32], plane: usize, pixels: &[usize]) {
    for chan in img.chunks_exact_mut(plane) {
        for &i in pixels {
            chan[i] = 0.0;
        }
    }
}

/// Target scores of a set of images, batched. `first_step` labels errors.
fn score_batch(
    oracle: &dyn Oracle,
    images: &[Vec<f32>],
    img_shape: &[usize],
    target: usize,
    first_step: usize,
) -> Result<Vec<f64>> {
    let q = oracle.meta().num_classes;
    let per = images.first().map_or(0, Vec::len);
    let mut out = Vec::with_capacity(images.len());
    let chunk = oracle.max_batch().max(1);
    for (c, group) in images.chunks(chunk).enumerate() {
        let step = first_step + c * chunk;
        let mut shape = vec![group.len()];
        shape.extend_from_slice(img_shape);
        let mut data = Vec::with_capacity(group.len() * per);
        for g in group {
            data.extend_from_slice(g);
        }
        let logits = Tensor::new(shape, data)
            .and_then(|b| oracle.logits(&b))
            .map_err(|e| e.at_step(step))?;
        if logits.shape() != [group.len(), q] {
            return Err(Error::ShapeMismatch(format!(
                "oracle returned {:?} for a batch of {}",
                logits.shape(),
                group.len()
            ))
            .at_step(step));
        }
        for (i, row) in logits.data().chunks_exact(q).enumerate() {
            let v = row[target] as f64;
            if !v.is_finite() {
                return Err(Error::Protocol(format!("non-finite score {v} for class {target}")).at_step(step + i));
            }
            out.push(v);
        }
    }
    Ok(out)
}

fn finish(scores: Vec<f64>, order: Vec<usize>, p: &SuperpixelPartition, x_axis: XAxis) -> Result<LerfCurve> {
    let n = order.len();
    let fractions: Vec<f64> = match x_axis {
        XAxis::Superpixels => (0..=n).map(|i| i as f64 / n as f64).collect(),
        XAxis::Pixels => {
            let total: usize = p.component_sizes.iter().sum();
            let mut acc = 0usize;
            std::iter::once(0.0)
                .chain(order.iter().map(|&c| {
                    acc += p.component_sizes[c];
                    acc as f64 / total as f64
                }))
                .collect()
        }
    };
    let (scaled, auc) = scale_and_auc_with_x(&scores, &fractions)?;
    let degenerate = scores[0] == scores[n];
    let out_of_range = scaled.iter().any(|v| !(0.0..=1.0).contains(v));
    if out_of_range {
        log::warn!("deletion curve leaves [0, 1] after scaling (auc {auc:.4})");
    }
    Ok(LerfCurve {
        scores,
        order,
        fractions,
        scaled,
        auc,
        degenerate,
        out_of_range,
    })
}

/// Deletion curve for an explicit component order.
pub fn deletion_curve(
    img: &Tensor,
    p: &SuperpixelPartition,
    order: &[usize],
    oracle: &dyn Oracle,
    target: usize,
    x_axis: XAxis,
) -> Result<LerfCurve> {
    let img = check_inputs(img, p, oracle, target)?;
    let n = p.component_count;
    let mut seen = vec![false; n];
    if order.len() != n || order.iter().any(|&c| c >= n || std::mem::replace(&mut seen[c], true)) {
        return Err(Error::InvalidConfig(format!(
            "deletion order must be a permutation of 0..{n}"
        )));
    }
    let members = p.members();
    let plane = img.shape()[1] * img.shape()[2];
    let chunk = oracle.max_batch().max(1);

    let mut work = img.data().to_vec();
    let mut scores = Vec::with_capacity(n + 1);
    let mut pending: Vec<Vec<f32>> = vec![work.clone()];
    let mut first = 0;
    for (i, &c) in order.iter().enumerate() {
        zero_pixels(&mut work, plane, &members[c]);
        pending.push(work.clone());
        if pending.len() >= chunk || i + 1 == n {
            scores.extend(score_batch(oracle, &pending, img.shape(), target, first)?);
            first += pending.len();
            pending.clear();
        }
    }
    if !pending.is_empty() {
        scores.extend(score_batch(oracle, &pending, img.shape(), target, first)?);
    }
    finish(scores, order.to_vec(), p, x_axis)
}

/// LeRF curve: components deleted by ascending mean saliency.
pub fn lerf_curve(
    img: &Tensor,
    p: &SuperpixelPartition,
    s: &SaliencyMap,
    oracle: &dyn Oracle,
    target: usize,
) -> Result<LerfCurve> {
    lerf_curve_with_axis(img, p, s, oracle, target, XAxis::Superpixels)
}

pub fn lerf_curve_with_axis(
    img: &Tensor,
    p: &SuperpixelPartition,
    s: &SaliencyMap,
    oracle: &dyn Oracle,
    target: usize,
    x_axis: XAxis,
) -> Result<LerfCurve> {
    if s.dims() != p.dims() {
        let ((a, b), (c, d)) = (s.dims(), p.dims());
        return Err(Error::DimensionMismatch(format!(
            "saliency is {a}x{b}, partition is {c}x{d}"
        )));
    }
    let order = ascending_order(&component_means(s, p)?);
    deletion_curve(img, p, &order, oracle, target, x_axis)
}

/// Greedy deletion order maximizing the area step by step.
///
/// Every step tries each remaining component and keeps the deletion with
/// the highest target score, ties by component id. Uses `n(n+1)/2 + 1`
/// image evaluations.
pub fn greedy_auc_max(img: &Tensor, p: &SuperpixelPartition, oracle: &dyn Oracle, target: usize) -> Result<LerfCurve> {
    greedy_auc_max_with_axis(img, p, oracle, target, XAxis::Superpixels)
}

pub fn greedy_auc_max_with_axis(
    img: &Tensor,
    p: &SuperpixelPartition,
    oracle: &dyn Oracle,
    target: usize,
    x_axis: XAxis,
) -> Result<LerfCurve> {
    let img = check_inputs(img, p, oracle, target)?;
    let n = p.component_count;
    let members = p.members();
    let plane = img.shape()[1] * img.shape()[2];

    let mut work = img.data().to_vec();
    let mut scores = score_batch(oracle, std::slice::from_ref(&work), img.shape(), target, 0)?;
    let mut remaining: Vec<usize> = (0..n).collect();
    let mut order = Vec::with_capacity(n);
    for step in 1..=n {
        let candidates: Vec<Vec<f32>> = remaining
            .iter()
            .map(|&c| {
                let mut trial = work.clone();
                zero_pixels(&mut trial, plane, &members[c]);
                trial
            })
            .collect();
        let trial_scores = score_batch(oracle, &candidates, img.shape(), target, step).map_err(|e| match e {
            Error::OracleFailure { source, .. } => Error::OracleFailure { step, source },
            e => e,
        })?;
        let best = argmax(&trial_scores).expect("scores are finite and non-empty");
        let c = remaining.remove(best);
        zero_pixels(&mut work, plane, &members[c]);
        order.push(c);
        scores.push(trial_scores[best]);
    }
    finish(scores, order, p, x_axis)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_cases() {
        let (s, a) = scale_and_auc(&[2.0, 1.0, 0.0]).unwrap();
        assert_eq!(s, vec![1.0, 0.5, 0.0]);
        assert_eq!(a, 0.5);
        let (s, a) = scale_and_auc(&[5.0, 5.0, 5.0]).unwrap();
        assert_eq!(s, vec![1.0, 0.0, 0.0]);
        assert_eq!(a, 0.25);
        assert!(matches!(scale_and_auc(&[1.0]), Err(Error::TooShort(1))));
    }

    #[test]
    fn pixel_axis_weights_by_area() {
        let (_, a) = scale_and_auc_with_x(&[1.0, 1.0, 0.0], &[0.0, 0.75, 1.0]).unwrap();
        assert!((a - (0.75 + 0.125)).abs() < 1e-15);
    }

    #[test]
    fn order_breaks_ties_by_id() {
        assert_eq!(ascending_order(&[0.5, 0.1, 0.5, 0.1]), vec![1, 3, 0, 2]);
    }
}
