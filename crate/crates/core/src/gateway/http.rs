use std::time::Duration;

use ureq::Agent;

use super::wire::{ActivationsRequest, ActivationsResponse, TensorBody, TensorPayload};
use super::{ModelMeta, Oracle};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const BODY_LIMIT: u64 = 1 << 30;

/// Client side of the `/v1` protocol.
#[derive(Debug)]
pub struct HttpOracle {
    base: String,
    agent: Agent,
    meta: ModelMeta,
}

fn map_err(base: &str, e: ureq::Error) -> Error {
    match e {
        ureq::Error::StatusCode(code) => Error::Protocol(format!("{base} answered with status {code}")),
        ureq::Error::Json(e) => Error::Protocol(format!("{base}: invalid json: {e}")),
        ureq::Error::Io(e) => Error::Unreachable(format!("{base}: {e}")),
        other => Error::Unreachable(format!("{base}: {other}")),
    }
}

impl HttpOracle {
    pub fn connect(uri: &str) -> Result<Self> {
        let base = uri.trim_end_matches('/').to_string();
        let agent: Agent = Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(300)))
            .build()
            .into();
        let meta: ModelMeta = agent
            .get(format!("{base}/v1/meta"))
            .call()
            .map_err(|e| map_err(&base, e))?
            .body_mut()
            .read_json()
            .map_err(|e| Error::BadManifest(format!("{base}/v1/meta: {e}")))?;
        meta.validate()?;
        Ok(HttpOracle { base, agent, meta })
    }

    fn post<Req: serde::Serialize, Resp: serde::de::DeserializeOwned>(&self, path: &str, body: &Req) -> Result<Resp> {
        let url = format!("{}{path}", self.base);
        self.agent
            .post(&url)
            .send_json(body)
            .map_err(|e| map_err(&url, e))?
            .body_mut()
            .with_config()
            .limit(BODY_LIMIT)
            .read_json()
            .map_err(|e| map_err(&url, e))
    }
}

impl Oracle for HttpOracle {
    fn meta(&self) -> &ModelMeta {
        &self.meta
    }

    fn logits(&self, batch: &Tensor) -> Result<Tensor> {
        let n = self.meta.check_batch(batch)?;
        let resp: TensorBody = self.post(
            "/v1/logits",
            &TensorBody {
                tensor: TensorPayload::encode(batch),
            },
        )?;
        let t = resp.tensor.decode()?;
        if t.shape() != [n, self.meta.num_classes] {
            return Err(Error::ShapeMismatch(format!(
                "server returned logits of shape {:?}, expected [{n}, {}]",
                t.shape(),
                self.meta.num_classes
            )));
        }
        Ok(t)
    }

    fn activations(&self, image: &Tensor, depths: &[usize]) -> Result<Vec<Tensor>> {
        self.meta.check_depths(depths)?;
        if depths.is_empty() {
            return Ok(Vec::new());
        }
        let image = self.meta.check_image(image)?;
        let mut shape = vec![1];
        shape.extend_from_slice(image.shape());
        let req = ActivationsRequest {
            tensor: TensorPayload::encode(&image.reshape(shape)?),
            depths: depths.to_vec(),
        };
        let resp: ActivationsResponse = self.post("/v1/activations", &req)?;
        let acts = resp
            .tensors
            .iter()
            .map(|p| {
                let t = p.decode()?;
                match *t.shape() {
                    [1, c, h, w] => t.reshape(vec![c, h, w]),
                    _ => Ok(t),
                }
            })
            .collect::<Result<Vec<_>>>()?;
        self.meta.check_activations(depths, &acts)?;
        Ok(acts)
    }
}
