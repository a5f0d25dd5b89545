//! Class-wise clustering and per-cluster saliency statistics.
//!
//! Feature rows of many images of one class are pooled, subsampled, Ward
//! clustered and cut; a knn classifier then carries the cluster ids to
//! every pixel of any image. Saliency is averaged per superpixel and each
//! cluster is scored by the mean of its superpixels, separately for
//! correctly and wrongly predicted images.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clustering::{cut_dendrogram, knn_predict, ward_fit, KnnModel};
use crate::error::{Error, Result};
use crate::pipeline::FeatureMatrix;
use crate::saliency::{component_means, SaliencyMap};
use crate::superpixel::{connected_components, Connectivity, LabelMap};
use crate::tensor::Tensor;
use crate::util::argmax;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassClusterParams {
    pub n_clusters: usize,
    /// Maximum number of pooled rows given to Ward.
    pub sample_cap: usize,
    pub seed: u64,
    /// Neighbors used to extend the clustering.
    pub knn_k: usize,
}

impl Default for ClassClusterParams {
    fn default() -> Self {
        ClassClusterParams {
            n_clusters: 10,
            sample_cap: 10_000,
            seed: 0,
            knn_k: 5,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ClassClusterModel {
    pub params: ClassClusterParams,
    pub knn: KnnModel,
    /// Rows available before subsampling.
    pub pooled_rows: usize,
}

impl ClassClusterModel {
    pub fn n_clusters(&self) -> usize {
        self.params.n_clusters
    }

    /// Cluster id of every pixel of one image.
    pub fn assign(&self, features: &FeatureMatrix) -> Result<LabelMap> {
        let labels = knn_predict(&self.knn, &features.data)?;
        LabelMap::new(features.height, features.width, labels)
    }
}

pub fn fit_class_cluster_model(features: &[FeatureMatrix], params: &ClassClusterParams) -> Result<ClassClusterModel> {
    if params.n_clusters < 2 {
        return Err(Error::InvalidConfig(format!(
            "n_clusters must be >= 2, got {}",
            params.n_clusters
        )));
    }
    if params.sample_cap < params.n_clusters {
        return Err(Error::InvalidConfig(format!(
            "sample cap {} is below n_clusters {}",
            params.sample_cap, params.n_clusters
        )));
    }
    let cols = features.first().map_or(0, FeatureMatrix::cols);
    if let Some(f) = features.iter().find(|f| f.cols() != cols) {
        return Err(Error::DimensionMismatch(format!(
            "feature matrices have {cols} and {} columns",
            f.cols()
        )));
    }
    let pooled_rows: usize = features.iter().map(FeatureMatrix::rows).sum();
    if pooled_rows < params.n_clusters.max(params.knn_k) {
        return Err(Error::TooFewRows {
            needed: params.n_clusters.max(params.knn_k),
            rows: pooled_rows,
        });
    }

    let chosen: Option<Vec<usize>> = (pooled_rows > params.sample_cap).then(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let mut idx = rand::seq::index::sample(&mut rng, pooled_rows, params.sample_cap).into_vec();
        idx.sort_unstable();
        idx
    });
    let mut data = Vec::with_capacity(chosen.as_ref().map_or(pooled_rows, Vec::len) * cols);
    match &chosen {
        None => {
            for f in features {
                data.extend_from_slice(f.data.data());
            }
        }
        Some(idx) => {
            let mut offsets = Vec::with_capacity(features.len());
            let mut acc = 0;
            for f in features {
                offsets.push(acc);
                acc += f.rows();
            }
            for &r in idx {
                let img = offsets.partition_point(|&o| o <= r) - 1;
                data.extend_from_slice(features[img].data.row(r - offsets[img]));
            }
        }
    }
    let rows = data.len() / cols;
    log::info!("ward on {rows} of {pooled_rows} pooled rows");
    let train = Tensor::new(vec![rows, cols], data)?;
    let dendrogram = ward_fit(&train)?;
    let labels = cut_dendrogram(&dendrogram, params.n_clusters)?;
    let knn = KnnModel::new(&train, labels, params.knn_k)?;
    Ok(ClassClusterModel {
        params: params.clone(),
        knn,
        pooled_rows,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Correct,
    Wrong,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TableOptions {
    /// Score a cluster by the pixel mean over its superpixels instead of
    /// the unweighted mean of superpixel means.
    pub size_weighted: bool,
    /// Average "other" over all superpixels of non-target clusters instead
    /// of over cluster scores.
    pub pooled_other: bool,
    pub connectivity: Connectivity,
}

/// One row of the table. Cells of an empty split, and per-cluster means of
/// clusters absent from every image of the split, are NaN.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitRow {
    pub split: Split,
    pub images: usize,
    pub most_salient_cluster: Option<u32>,
    pub target_cluster_mean: f64,
    pub other_clusters_mean: f64,
    pub per_cluster_means: Vec<f64>,
}

impl SplitRow {
    pub fn is_empty(&self) -> bool {
        self.images == 0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterSaliencyTable {
    pub target_cluster: u32,
    pub correct: SplitRow,
    pub wrong: SplitRow,
}

/// Per-cluster superpixel means of one image.
struct ImageStats {
    /// Per cluster, the means of its superpixels.
    superpixel_means: Vec<Vec<f64>>,
    /// Per cluster, the score of the cluster if present.
    scores: Vec<Option<f64>>,
}

fn image_stats(clusters: &LabelMap, s: &SaliencyMap, n_clusters: usize, opts: &TableOptions) -> Result<ImageStats> {
    if let Some(&bad) = clusters.labels().iter().find(|&&c| c as usize >= n_clusters) {
        return Err(Error::InvalidConfig(format!(
            "cluster id {bad} out of range for {n_clusters} clusters"
        )));
    }
    let p = connected_components(clusters, opts.connectivity);
    let means = component_means(s, &p)?;
    let mut superpixel_means = vec![Vec::new(); n_clusters];
    let mut mass = vec![(0f64, 0usize); n_clusters];
    for (c, &m) in means.iter().enumerate() {
        let k = p.parent_cluster[c] as usize;
        superpixel_means[k].push(m);
        mass[k].0 += m * p.component_sizes[c] as f64;
        mass[k].1 += p.component_sizes[c];
    }
    let scores = (0..n_clusters)
        .map(|k| {
            let v = &superpixel_means[k];
            if v.is_empty() {
                None
            } else if opts.size_weighted {
                Some(mass[k].0 / mass[k].1 as f64)
            } else {
                Some(order_free_mean(v.clone()))
            }
        })
        .collect();
    Ok(ImageStats {
        superpixel_means,
        scores,
    })
}

/// Mean that does not depend on the order of `v`.
fn order_free_mean(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    v.iter().sum::<f64>() / v.len() as f64
}

fn split_row(split: Split, stats: &[&ImageStats], n_clusters: usize, target: usize, opts: &TableOptions) -> SplitRow {
    let per_cluster_means: Vec<f64> = (0..n_clusters)
        .map(|k| order_free_mean(stats.iter().filter_map(|s| s.scores[k]).collect()))
        .collect();
    let other_clusters_mean = if opts.pooled_other {
        order_free_mean(
            stats
                .iter()
                .flat_map(|s| {
                    s.superpixel_means
                        .iter()
                        .enumerate()
                        .filter(|&(k, _)| k != target)
                        .flat_map(|(_, v)| v.iter().copied())
                })
                .collect(),
        )
    } else {
        order_free_mean(
            per_cluster_means
                .iter()
                .enumerate()
                .filter(|&(k, v)| k != target && !v.is_nan())
                .map(|(_, &v)| v)
                .collect(),
        )
    };
    if stats.is_empty() {
        log::warn!("{split:?} split is empty; its cells are NaN");
    }
    SplitRow {
        split,
        images: stats.len(),
        most_salient_cluster: argmax(&per_cluster_means).map(|k| k as u32),
        target_cluster_mean: per_cluster_means[target],
        other_clusters_mean,
        per_cluster_means,
    }
}

/// Table from per-image cluster maps.
///
/// `clusters[i]` holds the cluster id of every pixel of image `i`; saliency
/// maps at another resolution are resized to it.
pub fn cluster_saliency_table_from_maps(
    clusters: &[LabelMap],
    saliency: &[SaliencyMap],
    n_clusters: usize,
    predictions: &[u32],
    true_class: u32,
    target_cluster: u32,
    opts: &TableOptions,
) -> Result<ClusterSaliencyTable> {
    for len in [saliency.len(), predictions.len()] {
        if len != clusters.len() {
            return Err(Error::LengthMismatch {
                expected: clusters.len(),
                actual: len,
            });
        }
    }
    let target = target_cluster as usize;
    if target >= n_clusters {
        return Err(Error::InvalidConfig(format!(
            "target cluster {target} out of range for {n_clusters} clusters"
        )));
    }
    let stats: Vec<ImageStats> = clusters
        .par_iter()
        .zip(saliency)
        .map(|(c, s)| image_stats(c, s, n_clusters, opts))
        .collect::<Result<_>>()?;
    let pick = |correct: bool| -> Vec<&ImageStats> {
        stats
            .iter()
            .zip(predictions)
            .filter(|(_, &p)| (p == true_class) == correct)
            .map(|(s, _)| s)
            .collect()
    };
    Ok(ClusterSaliencyTable {
        target_cluster,
        correct: split_row(Split::Correct, &pick(true), n_clusters, target, opts),
        wrong: split_row(Split::Wrong, &pick(false), n_clusters, target, opts),
    })
}

/// Table from per-image feature matrices, assigned through `model`.
pub fn cluster_saliency_table(
    features: &[FeatureMatrix],
    saliency: &[SaliencyMap],
    model: &ClassClusterModel,
    predictions: &[u32],
    true_class: u32,
    target_cluster: u32,
    opts: &TableOptions,
) -> Result<ClusterSaliencyTable> {
    let maps = features.iter().map(|f| model.assign(f)).collect::<Result<Vec<_>>>()?;
    cluster_saliency_table_from_maps(
        &maps,
        saliency,
        model.n_clusters(),
        predictions,
        true_class,
        target_cluster,
        opts,
    )
}
