use std::path::Path;
use std::sync::Arc;

use nas_core::gateway::server;
use nas_core::image_io::read_image_png;
use nas_core::superpixel::upsample_labels_nearest;
use nas_core::{
    connected_components, open_oracle, segment, Clusterer, Connectivity, Error, LabelMap, NasConfig, Oracle,
    OracleHandle, Result, Segmentation, SuperpixelPartition, Tensor,
};

use crate::{ClustererArg, NasArgs, ServeArgs};

pub fn connectivity(n: u8) -> Result<Connectivity> {
    Connectivity::from_neighbors(n)
}

impl NasArgs {
    pub fn clusterer(&self) -> Clusterer {
        match self.clusterer {
            ClustererArg::Kmeans => Clusterer::KMeans {
                max_iter: self.max_iter,
                tol: self.tol,
            },
            ClustererArg::Ward => Clusterer::Ward,
        }
    }

    /// Configuration clustering at `work_size`, or at `(h, w)` when unset.
    pub fn config(&self, h: usize, w: usize) -> Result<NasConfig> {
        let (oh, ow) = self.work_size.unwrap_or((h, w));
        let mut cfg = NasConfig::new(oh, ow, self.depths.clone(), self.k);
        cfg.scale_rows = !self.no_scale;
        cfg.weight_channels = !self.no_weight;
        cfg.seed = self.seed;
        cfg.validate()?;
        Ok(cfg)
    }
}

pub fn open(uri: &str) -> Result<OracleHandle> {
    log::info!("opening oracle {uri}");
    open_oracle(uri)
}

/// Image ids to process: the explicit list, or every stored image with `all`.
pub fn image_list(oracle: &OracleHandle, images: &[String], all: bool) -> Result<Vec<String>> {
    if !all {
        return Ok(images.to_vec());
    }
    let store = oracle
        .file_store()
        .ok_or_else(|| Error::InvalidConfig("--all needs a file:// oracle".into()))?;
    let ids = store.image_ids()?;
    if ids.is_empty() {
        return Err(Error::InvalidConfig(format!("no images in {}", store.root().display())));
    }
    Ok(ids)
}

/// Resolves a PNG path or a stored image id to `(id, standardized [C,H,W])`.
pub fn load_image(oracle: &OracleHandle, spec: &str) -> Result<(String, Tensor)> {
    let path = Path::new(spec);
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")) && path.is_file() {
        let id = path.file_stem().and_then(|s| s.to_str()).unwrap_or(spec).to_string();
        return Ok((id, oracle.meta().standardize(&read_image_png(path)?)?));
    }
    match oracle.file_store() {
        Some(store) => Ok((spec.to_string(), store.image(spec)?)),
        None => Err(Error::InvalidConfig(format!("{spec:?} is not a PNG file"))),
    }
}

pub fn activations(oracle: &OracleHandle, id: &str, img: &Tensor, depths: &[usize]) -> Result<Vec<Tensor>> {
    match oracle.file_store() {
        Some(store) => store.activations_by_id(id, depths),
        None => oracle.activations(img, depths),
    }
}

/// Segments one image at full resolution.
pub fn segment_image(oracle: &OracleHandle, id: &str, img: &Tensor, nas: &NasArgs, seed: u64) -> Result<Segmentation> {
    let (h, w) = (img.shape()[1], img.shape()[2]);
    let mut cfg = nas.config(h, w)?;
    cfg.seed = seed;
    let acts = activations(oracle, id, img, &cfg.depths)?;
    let conn = connectivity(nas.connectivity)?;
    let seg = segment(&acts, &cfg, nas.clusterer(), conn)?;
    if seg.clusters.dims() == (h, w) {
        return Ok(seg);
    }
    let clusters = upsample_labels_nearest(&seg.clusters, (h, w))?;
    let partition = connected_components(&clusters, conn);
    Ok(Segmentation { clusters, partition })
}

/// Reads a label map and splits it into connected components at `dims`.
pub fn read_partition(path: &Path, dims: Option<(usize, usize)>, conn: Connectivity) -> Result<SuperpixelPartition> {
    let mut map = LabelMap::read_npy(path)?;
    if let Some(d) = dims {
        if map.dims() != d {
            log::info!("resizing {} from {:?} to {d:?}", path.display(), map.dims());
            map = upsample_labels_nearest(&map, d)?;
        }
    }
    Ok(connected_components(&map, conn))
}

pub fn file_stem(path: &Path) -> String {
    path.file_stem().and_then(|s| s.to_str()).unwrap_or("map").to_string()
}

pub fn predicted_class(oracle: &OracleHandle, id: &str, img: &Tensor) -> Result<usize> {
    let logits = match oracle.file_store() {
        Some(store) => store.logits_by_id(id)?,
        None => {
            let mut shape = vec![1];
            shape.extend_from_slice(img.shape());
            oracle.logits(&img.clone().reshape(shape)?)?.into_data()
        }
    };
    let mut best = 0;
    for (i, &v) in logits.iter().enumerate() {
        if v > logits[best] {
            best = i;
        }
    }
    Ok(best)
}

pub fn serve(args: &ServeArgs) -> Result<()> {
    let oracle: Arc<dyn Oracle> = Arc::new(open(&args.oracle)?);
    let handle = server::serve(oracle, &args.addr)?;
    eprintln!("serving {} on {}", args.oracle, handle.uri());
    handle.join();
    Ok(())
}
