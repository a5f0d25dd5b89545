//! Dense row-major `f32` tensors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A dense C-ordered tensor of 32-bit floats.
///
/// The shape is never empty and every dimension is at least one, so the
/// element count is always positive.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        validate_shape(&shape)?;
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(Error::LengthMismatch {
                expected,
                actual: data.len(),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self> {
        Self::filled(shape, 0.0)
    }

    pub fn filled(shape: Vec<usize>, value: f32) -> Result<Self> {
        validate_shape(&shape)?;
        let n = shape.iter().product();
        Ok(Tensor {
            shape,
            data: vec![value; n],
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Same data under a new shape with equal element count.
    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        Tensor::new(shape, self.data)
    }

    /// Returns `(rows, cols)` for a 2-D tensor.
    pub fn matrix_dims(&self) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            &[r, c] => Ok((r, c)),
            s => Err(Error::ShapeMismatch(format!("expected a matrix, got shape {s:?}"))),
        }
    }

    /// Row `i` of a 2-D tensor.
    pub fn row(&self, i: usize) -> &[f32] {
        let cols = self.shape[self.shape.len() - 1];
        &self.data[i * cols..(i + 1) * cols]
    }

    /// Index of the first non-finite element, if any.
    pub fn first_non_finite(&self) -> Option<usize> {
        self.data.iter().position(|v| !v.is_finite())
    }

    pub fn ensure_finite(&self) -> Result<()> {
        match self.first_non_finite() {
            Some(i) => Err(Error::NonFiniteInput(i)),
            None => Ok(()),
        }
    }

    /// Interprets a `[H, W, C]` tensor as an image and returns `[C, H, W]`.
    pub fn hwc_to_chw(&self) -> Result<Tensor> {
        let &[h, w, c] = self.shape.as_slice() else {
            return Err(Error::ShapeMismatch(format!("expected [H,W,C], got {:?}", self.shape)));
        };
        let mut out = vec![0.0f32; self.data.len()];
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    out[ch * h * w + y * w + x] = self.data[(y * w + x) * c + ch];
                }
            }
        }
        Tensor::new(vec![c, h, w], out)
    }
}

fn validate_shape(shape: &[usize]) -> Result<()> {
    if shape.is_empty() {
        return Err(Error::ShapeMismatch("tensor shape must not be empty".into()));
    }
    if shape.contains(&0) {
        return Err(Error::ShapeMismatch(format!(
            "every dimension must be at least 1, got {shape:?}"
        )));
    }
    Ok(())
}

/// Height, width and channel count of an image.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageSpec {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl ImageSpec {
    pub fn new(height: usize, width: usize, channels: usize) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::ShapeMismatch(format!(
                "image dimensions must be positive, got {height}x{width}x{channels}"
            )));
        }
        Ok(ImageSpec {
            height,
            width,
            channels,
        })
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }
}
