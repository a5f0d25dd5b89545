use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use super::{ModelMeta, Oracle};
use crate::error::{Error, Result};
use crate::image_io::read_image_png;
use crate::npy::read_npy;
use crate::tensor::Tensor;

/// Read-only precomputed oracle store.
#[derive(Debug)]
pub struct FileStore {
    root: PathBuf,
    meta: ModelMeta,
    // Standardized stored images, loaded on first content lookup.
    index: OnceLock<Vec<(String, Tensor)>>,
}

impl FileStore {
    pub fn open(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        let meta = ModelMeta::read_manifest(root.join("manifest.json"))?;
        Ok(FileStore {
            root,
            meta,
            index: OnceLock::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn image_path(&self, id: &str) -> PathBuf {
        self.root.join("images").join(format!("{id}.png"))
    }

    pub fn activation_path(&self, id: &str, depth: usize) -> PathBuf {
        self.root.join("acts").join(format!("act_{id}_d{depth}.npy"))
    }

    pub fn logits_path(&self, id: &str) -> PathBuf {
        self.root.join("logits").join(format!("logits_{id}.npy"))
    }

    pub fn saliency_path(&self, method: &str, id: &str) -> PathBuf {
        self.root.join("saliency").join(format!("{method}_{id}.npy"))
    }

    /// Ids of the stored images, sorted.
    pub fn image_ids(&self) -> Result<Vec<String>> {
        let dir = self.root.join("images");
        if !dir.is_dir() {
            return Ok(Vec::new());
        }
        let mut ids = Vec::new();
        for entry in std::fs::read_dir(dir)? {
            let path = entry?.path();
            if path.extension().is_some_and(|e| e == "png") {
                if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                    ids.push(stem.to_string());
                }
            }
        }
        ids.sort();
        Ok(ids)
    }

    /// The stored image `id`, standardized as `[C, H, W]`.
    pub fn image(&self, id: &str) -> Result<Tensor> {
        let path = self.image_path(id);
        if !path.exists() {
            return Err(Error::NotPrecomputed(format!("no image {id:?} in store")));
        }
        self.meta.standardize(&read_image_png(path)?)
    }

    pub fn activations_by_id(&self, id: &str, depths: &[usize]) -> Result<Vec<Tensor>> {
        self.meta.check_depths(depths)?;
        let acts = depths
            .iter()
            .map(|&d| {
                let path = self.activation_path(id, d);
                if !path.exists() {
                    return Err(Error::NotPrecomputed(format!(
                        "no activation for image {id:?} at depth {d}"
                    )));
                }
                let t = read_npy(path)?;
                // Exports may keep a leading batch axis.
                match *t.shape() {
                    [1, c, h, w] => t.reshape(vec![c, h, w]),
                    _ => Ok(t),
                }
            })
            .collect::<Result<Vec<_>>>()?;
        self.meta.check_activations(depths, &acts)?;
        Ok(acts)
    }

    /// Stored logits of image `id` as a `Q`-vector.
    pub fn logits_by_id(&self, id: &str) -> Result<Vec<f32>> {
        let path = self.logits_path(id);
        if !path.exists() {
            return Err(Error::NotPrecomputed(format!("no logits for image {id:?}")));
        }
        let t = read_npy(path)?;
        if t.len() != self.meta.num_classes {
            return Err(Error::ShapeMismatch(format!(
                "logits for {id:?} have shape {:?}, expected {} classes",
                t.shape(),
                self.meta.num_classes
            )));
        }
        Ok(t.into_data())
    }

    fn index(&self) -> &[(String, Tensor)] {
        self.index.get_or_init(|| {
            let ids = self.image_ids().unwrap_or_default();
            ids.into_iter()
                .filter_map(|id| match self.image(&id) {
                    Ok(t) => Some((id, t)),
                    Err(e) => {
                        log::warn!("skipping stored image {id:?}: {e}");
                        None
                    }
                })
                .collect()
        })
    }

    /// Finds the stored image whose standardized pixels equal `image` bit for bit.
    pub fn identify(&self, image: &Tensor) -> Result<String> {
        self.index()
            .iter()
            .find(|(_, t)| t.data() == image.data())
            .map(|(id, _)| id.clone())
            .ok_or_else(|| Error::NotPrecomputed("image is not in the file store (masked or unseen)".into()))
    }
}

impl Oracle for FileStore {
    fn meta(&self) -> &ModelMeta {
        &self.meta
    }

    fn logits(&self, batch: &Tensor) -> Result<Tensor> {
        let n = self.meta.check_batch(batch)?;
        let [h, w, c] = self.meta.input_size;
        let per = c * h * w;
        let mut out = Vec::with_capacity(n * self.meta.num_classes);
        for i in 0..n {
            let img = Tensor::new(vec![c, h, w], batch.data()[i * per..(i + 1) * per].to_vec())?;
            let id = self.identify(&img)?;
            out.extend(self.logits_by_id(&id)?);
        }
        Tensor::new(vec![n, self.meta.num_classes], out)
    }

    fn activations(&self, image: &Tensor, depths: &[usize]) -> Result<Vec<Tensor>> {
        self.meta.check_depths(depths)?;
        if depths.is_empty() {
            return Ok(Vec::new());
        }
        let image = self.meta.check_image(image)?;
        let id = self.identify(&image)?;
        self.activations_by_id(&id, depths)
    }
}
