//! JSON-over-HTTP protocol shared by the client and [`super::server`].
//!
//! - `GET /v1/meta` returns the [`super::ModelMeta`] JSON.
//! - `POST /v1/logits` takes `{"tensor": T}` with `T` of shape `[N,C,H,W]`
//!   and returns `{"tensor": T}` of shape `[N,Q]`.
//! - `POST /v1/activations` takes `{"tensor": T, "depths": [..]}` with `T`
//!   of shape `[1,C,H,W]` and returns `{"tensors": [T, ..]}`.
//!
//! A tensor `T` is `{"dtype":"float32","shape":[..],"data":"<base64>"}`
//! where the payload holds little-endian `f32` values in C order.

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorPayload {
    pub dtype: String,
    pub shape: Vec<usize>,
    pub data: String,
}

impl TensorPayload {
    pub fn encode(t: &Tensor) -> Self {
        let bytes: Vec<u8> = t.data().iter().flat_map(|v| v.to_le_bytes()).collect();
        TensorPayload {
            dtype: "float32".to_string(),
            shape: t.shape().to_vec(),
            data: STANDARD.encode(bytes),
        }
    }

    pub fn decode(&self) -> Result<Tensor> {
        if self.dtype != "float32" {
            return Err(Error::Protocol(format!("unsupported dtype {:?}", self.dtype)));
        }
        let bytes = STANDARD
            .decode(&self.data)
            .map_err(|e| Error::Protocol(format!("bad base64 payload: {e}")))?;
        if bytes.len() % 4 != 0 {
            return Err(Error::Protocol(format!(
                "payload of {} bytes is not a whole number of float32 values",
                bytes.len()
            )));
        }
        let data = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        Tensor::new(self.shape.clone(), data)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TensorBody {
    pub tensor: TensorPayload,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ActivationsRequest {
    pub tensor: TensorPayload,
    pub depths: Vec<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ActivationsResponse {
    pub tensors: Vec<TensorPayload>,
}
