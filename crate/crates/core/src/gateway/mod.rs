//! The classifier, seen only through logits and activation queries.
//!
//! Three backends implement [`Oracle`]:
//!
//! - `file://<dir>`: a precomputed store (`manifest.json`, `images/<id>.png`,
//!   `acts/act_<id>_d<k>.npy`, `logits/logits_<id>.npy`, optional
//!   `saliency/<method>_<id>.npy`). It can only answer for stored images, so
//!   deletion curves need one of the other backends.
//! - `http://host:port`: the JSON protocol in [`wire`].
//! - `synthetic://<spec.json>`: the in-process linear model of [`synthetic`].

mod file;
mod http;
pub mod server;
pub mod synthetic;
pub mod wire;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use file::FileStore;
pub use http::HttpOracle;
pub use synthetic::{SyntheticOracle, SyntheticSpec};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

/// What the toolkit knows about the model behind an oracle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub num_classes: usize,
    /// Number of extraction points, indexed from 0.
    pub depths: usize,
    /// Channel count at each extraction point.
    pub channels: Vec<usize>,
    /// `[H, W, C]` of the model input.
    pub input_size: [usize; 3],
    pub normalization: Normalization,
    /// Spatial size `[h, w]` of each extraction point for the reference input.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spatial: Option<Vec<[usize; 2]>>,
}

impl ModelMeta {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::BadManifest(m));
        if self.num_classes < 2 {
            return bad(format!("num_classes must be >= 2, got {}", self.num_classes));
        }
        if self.channels.len() != self.depths {
            return bad(format!(
                "{} channel counts for {} depths",
                self.channels.len(),
                self.depths
            ));
        }
        if self.channels.contains(&0) || self.input_size.contains(&0) {
            return bad("channel counts and input size must be positive".into());
        }
        let c = self.input_size[2];
        if self.normalization.mean.len() != c || self.normalization.std.len() != c {
            return bad(format!("normalization must have {c} entries per field"));
        }
        if self.normalization.std.iter().any(|&s| !(s > 0.0)) {
            return bad("normalization std must be positive".into());
        }
        if let Some(sp) = &self.spatial {
            if sp.len() != self.depths {
                return bad(format!("{} spatial sizes for {} depths", sp.len(), self.depths));
            }
        }
        Ok(())
    }

    pub fn height(&self) -> usize {
        self.input_size[0]
    }

    pub fn width(&self) -> usize {
        self.input_size[1]
    }

    pub fn image_channels(&self) -> usize {
        self.input_size[2]
    }

    pub fn read_manifest(path: impl AsRef<Path>) -> Result<ModelMeta> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::BadManifest(format!("{}: {e}", path.display())))?;
        let meta: ModelMeta =
            serde_json::from_str(&text).map_err(|e| Error::BadManifest(format!("{}: {e}", path.display())))?;
        meta.validate()?;
        Ok(meta)
    }

    pub fn write_manifest(&self, path: impl AsRef<Path>) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("meta serializes");
        std::fs::write(path, text)?;
        Ok(())
    }

    /// Converts a `[H, W, C]` image in `[0, 255]` to a standardized `[C, H, W]` tensor.
    pub fn standardize(&self, image_hwc: &Tensor) -> Result<Tensor> {
        let chw = image_hwc.hwc_to_chw()?;
        let &[c, h, w] = chw.shape() else { unreachable!() };
        if [h, w, c] != self.input_size {
            return Err(Error::ShapeMismatch(format!(
                "image is {h}x{w}x{c}, model expects {:?}",
                self.input_size
            )));
        }
        let mut out = chw;
        let plane = h * w;
        for ch in 0..c {
            let (m, s) = (self.normalization.mean[ch], self.normalization.std[ch]);
            for v in &mut out.data_mut()[ch * plane..(ch + 1) * plane] {
                *v = (*v / 255.0 - m) / s;
            }
        }
        Ok(out)
    }

    /// Shape check for a `[N, C, H, W]` batch.
    pub fn check_batch(&self, batch: &Tensor) -> Result<usize> {
        let [h, w, c] = self.input_size;
        match *batch.shape() {
            [n, bc, bh, bw] if (bc, bh, bw) == (c, h, w) => Ok(n),
            _ => Err(Error::ShapeMismatch(format!(
                "batch shape {:?}, expected [N, {c}, {h}, {w}]",
                batch.shape()
            ))),
        }
    }

    /// Accepts `[C, H, W]` or `[1, C, H, W]` and returns `[C, H, W]`.
    pub fn check_image(&self, image: &Tensor) -> Result<Tensor> {
        let [h, w, c] = self.input_size;
        match *image.shape() {
            [1, bc, bh, bw] | [bc, bh, bw] if (bc, bh, bw) == (c, h, w) => image.clone().reshape(vec![c, h, w]),
            _ => Err(Error::ShapeMismatch(format!(
                "image shape {:?}, expected [{c}, {h}, {w}]",
                image.shape()
            ))),
        }
    }

    pub fn check_depths(&self, depths: &[usize]) -> Result<()> {
        match depths.iter().find(|&&d| d >= self.depths) {
            Some(d) => Err(Error::ShapeMismatch(format!(
                "depth {d} out of range, model has {} extraction points",
                self.depths
            ))),
            None => Ok(()),
        }
    }

    /// Verifies that `acts[i]` is a `[c, h, w]` tensor with the channel count of `depths[i]`.
    pub fn check_activations(&self, depths: &[usize], acts: &[Tensor]) -> Result<()> {
        if acts.len() != depths.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} activations for {} depths",
                acts.len(),
                depths.len()
            )));
        }
        for (&d, a) in depths.iter().zip(acts) {
            match *a.shape() {
                [c, _, _] if c == self.channels[d] => {}
                _ => {
                    return Err(Error::ShapeMismatch(format!(
                        "depth {d}: activation shape {:?}, expected {} channels",
                        a.shape(),
                        self.channels[d]
                    )))
                }
            }
        }
        Ok(())
    }
}

/// Uniform query interface to a classifier.
pub trait Oracle: Send + Sync {
    fn meta(&self) -> &ModelMeta;

    /// Pre-softmax scores `[N, Q]` for a standardized `[N, C, H, W]` batch.
    fn logits(&self, batch: &Tensor) -> Result<Tensor>;

    /// One `[c, h, w]` tensor per requested depth for a standardized image.
    fn activations(&self, image: &Tensor, depths: &[usize]) -> Result<Vec<Tensor>>;

    /// Largest batch worth sending in one request.
    fn max_batch(&self) -> usize {
        32
    }
}

#[derive(Debug)]
pub enum Backend {
    File(FileStore),
    Http(HttpOracle),
    Synthetic(SyntheticOracle),
}

/// An opened oracle and the URI it came from.
#[derive(Debug)]
pub struct OracleHandle {
    pub uri: String,
    pub backend: Backend,
}

impl OracleHandle {
    fn inner(&self) -> &dyn Oracle {
        match &self.backend {
            Backend::File(f) => f,
            Backend::Http(h) => h,
            Backend::Synthetic(s) => s,
        }
    }

    pub fn file_store(&self) -> Option<&FileStore> {
        match &self.backend {
            Backend::File(f) => Some(f),
            _ => None,
        }
    }
}

impl Oracle for OracleHandle {
    fn meta(&self) -> &ModelMeta {
        self.inner().meta()
    }

    fn logits(&self, batch: &Tensor) -> Result<Tensor> {
        self.inner().logits(batch)
    }

    fn activations(&self, image: &Tensor, depths: &[usize]) -> Result<Vec<Tensor>> {
        self.inner().activations(image, depths)
    }

    fn max_batch(&self) -> usize {
        self.inner().max_batch()
    }
}

/// Opens `file://<dir>`, `http://host:port` or `synthetic://<spec.json>`.
pub fn open_oracle(uri: &str) -> Result<OracleHandle> {
    open_oracle_with_cache(uri, None)
}

/// Like [`open_oracle`], additionally requiring the served metadata to
/// equal a previously cached copy.
pub fn open_oracle_with_cache(uri: &str, cached: Option<&ModelMeta>) -> Result<OracleHandle> {
    let backend = if let Some(dir) = uri.strip_prefix("file://") {
        Backend::File(FileStore::open(dir)?)
    } else if uri.starts_with("http://") {
        Backend::Http(HttpOracle::connect(uri)?)
    } else if let Some(path) = uri.strip_prefix("synthetic://") {
        Backend::Synthetic(SyntheticOracle::from_file(path)?)
    } else {
        return Err(Error::InvalidConfig(format!(
            "unsupported oracle uri {uri:?} (expected file://, http:// or synthetic://)"
        )));
    };
    let handle = OracleHandle {
        uri: uri.to_string(),
        backend,
    };
    if let Some(c) = cached {
        if c != handle.meta() {
            return Err(Error::MetaMismatch(format!(
                "{uri} serves {:?}, cached manifest says {:?}",
                handle.meta(),
                c
            )));
        }
    }
    Ok(handle)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn meta() -> ModelMeta {
        ModelMeta {
            num_classes: 10,
            depths: 5,
            channels: vec![64, 64, 128, 256, 512],
            input_size: [96, 96, 3],
            normalization: Normalization {
                mean: vec![0.485, 0.456, 0.406],
                std: vec![0.229, 0.224, 0.225],
            },
            spatial: None,
        }
    }

    #[test]
    fn manifest_schema() {
        let json = r#"{"num_classes":10,"depths":5,"channels":[64,64,128,256,512],
            "input_size":[96,96,3],"normalization":{"mean":[0.485,0.456,0.406],"std":[0.229,0.224,0.225]}}"#;
        let m: ModelMeta = serde_json::from_str(json).unwrap();
        assert_eq!(m, meta());
        m.validate().unwrap();
        let back = serde_json::to_string(&m).unwrap();
        assert!(back.starts_with(r#"{"num_classes":10,"depths":5,"channels":"#));
        assert!(!back.contains("spatial"));
    }

    #[test]
    fn validation() {
        let mut m = meta();
        m.channels.pop();
        assert!(matches!(m.validate(), Err(Error::BadManifest(_))));
        let mut m = meta();
        m.num_classes = 1;
        assert!(m.validate().is_err());
        let mut m = meta();
        m.normalization.std[1] = 0.0;
        assert!(m.validate().is_err());
    }

    #[test]
    fn standardize_uses_channel_stats() {
        let mut m = meta();
        m.input_size = [1, 2, 3];
        let img = Tensor::new(vec![1, 2, 3], vec![255., 0., 0., 0., 255., 0.]).unwrap();
        let s = m.standardize(&img).unwrap();
        assert_eq!(s.shape(), &[3, 1, 2]);
        assert!((s.data()[0] - (1.0 - 0.485) / 0.229).abs() < 1e-6);
        assert!((s.data()[1] - (0.0 - 0.485) / 0.229).abs() < 1e-6);
        assert!(m.standardize(&Tensor::zeros(vec![2, 2, 3]).unwrap()).is_err());
    }

    #[test]
    fn unknown_scheme() {
        assert!(matches!(open_oracle("ftp://x"), Err(Error::InvalidConfig(_))));
    }
}
