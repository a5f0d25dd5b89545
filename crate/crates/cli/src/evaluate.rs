use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use nas_core::image_io::{write_gray_png, write_segmentation_png};
use nas_core::lerf::{greedy_auc_max_with_axis, lerf_curve_with_axis, LerfCurve};
use nas_core::npy::write_npy;
use nas_core::semantic::{cluster_saliency_table, fit_class_cluster_model, ClassClusterParams, SplitRow, TableOptions};
use nas_core::superpixel::upsample_labels_nearest;
use nas_core::wsol::{max_box_acc_v2, BBox, WsolConfig, WsolScores};
use nas_core::{
    build_feature_matrix, connected_components, minmax_normalize, superpixelify as average_over, Error, LabelMap,
    Oracle, OracleHandle, Result, SaliencyMap, SuperpixelPartition, Tensor,
};
use rayon::prelude::*;
use serde::Deserialize;
use serde_json::json;

use crate::common::{
    activations, connectivity, file_stem, image_list, load_image, open, predicted_class, read_partition, segment_image,
};
use crate::output::{finish, num, OutDir, Timings};
use crate::{AucmaxArgs, LerfArgs, NasArgs, SemanticArgs, SuperpixelifyArgs, WsolArgs};

fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let bad = |e: csv::Error| Error::InvalidConfig(format!("{}: {e}", path.display()));
    let mut r = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(bad)?;
    r.deserialize().collect::<std::result::Result<Vec<T>, _>>().map_err(bad)
}

pub fn superpixelify(args: &SuperpixelifyArgs) -> Result<()> {
    let mut timings = Timings::default();
    let p = read_partition(&args.partition, None, connectivity(args.connectivity)?)?;
    let maps = timings.time("superpixelify", || {
        args.saliency
            .par_iter()
            .map(|path| {
                let mut s = SaliencyMap::read_npy(path)?;
                if args.normalize {
                    s = minmax_normalize(&s)?;
                }
                Ok((file_stem(path), average_over(&s, &p)?))
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let mut out = OutDir::create(&args.out)?;
    timings.time("write", || -> Result<()> {
        p.label_map.write_npy(out.path("superpixels.npy"))?;
        for (stem, s) in &maps {
            write_npy(s.tensor(), out.path(&format!("{stem}_spx.npy")))?;
            write_gray_png(minmax_normalize(s)?.tensor(), out.path(&format!("{stem}_spx.png")))?;
        }
        Ok(())
    })?;
    let config = json!({ "superpixels": p.component_count, "args": args });
    finish(out, "superpixelify", &config, timings)
}

/// Partition for one image: from a file resized to the image, or segmented.
fn partition_for(
    oracle: &OracleHandle,
    id: &str,
    img: &Tensor,
    file: Option<&Path>,
    nas: &NasArgs,
) -> Result<SuperpixelPartition> {
    let dims = (img.shape()[1], img.shape()[2]);
    match file {
        Some(path) => read_partition(path, Some(dims), connectivity(nas.connectivity)?),
        None => Ok(segment_image(oracle, id, img, nas, nas.seed)?.partition),
    }
}

fn curve_rows(curve: &LerfCurve) -> Vec<Vec<String>> {
    (0..curve.scores.len())
        .map(|i| {
            vec![
                i.to_string(),
                num(curve.fractions[i]),
                num(curve.scores[i]),
                num(curve.scaled[i]),
                if i == 0 {
                    String::new()
                } else {
                    curve.order[i - 1].to_string()
                },
            ]
        })
        .collect()
}

const CURVE_HEADER: [&str; 5] = ["step", "fraction", "raw_score", "scaled_score", "component"];

struct CurveResult {
    id: String,
    method: String,
    target: usize,
    curve: LerfCurve,
}

fn write_curves(out: &mut OutDir, prefix: &str, results: &[CurveResult]) -> Result<()> {
    for r in results {
        let name = if r.method.is_empty() {
            format!("{prefix}_{}.csv", r.id)
        } else {
            format!("{prefix}_{}_{}.csv", r.method, r.id)
        };
        out.write_csv(&name, &CURVE_HEADER, curve_rows(&r.curve))?;
    }
    let rows = results.iter().map(|r| {
        vec![
            r.id.clone(),
            r.method.clone(),
            r.target.to_string(),
            r.curve.order.len().to_string(),
            num(r.curve.auc),
            r.curve.degenerate.to_string(),
            r.curve.out_of_range.to_string(),
        ]
    });
    out.write_csv(
        &format!("{prefix}_summary.csv"),
        &[
            "image_id",
            "method",
            "target",
            "superpixels",
            "auc",
            "degenerate",
            "out_of_range",
        ],
        rows,
    )?;
    let mut by_method: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for r in results {
        by_method.entry(&r.method).or_default().push(r.curve.auc);
    }
    let rows = by_method.into_iter().map(|(m, aucs)| {
        let n = aucs.len() as f64;
        let mean = aucs.iter().sum::<f64>() / n;
        let var = aucs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
        vec![
            m.to_string(),
            aucs.len().to_string(),
            num(100.0 * mean),
            num(100.0 * var.sqrt()),
        ]
    });
    out.write_csv(
        &format!("{prefix}_aggregate.csv"),
        &["method", "images", "auc_mean_pct", "auc_std_pct"],
        rows,
    )
}

#[derive(Debug, Deserialize)]
struct LerfJob {
    image: String,
    saliency: PathBuf,
    #[serde(default)]
    partition: Option<PathBuf>,
    #[serde(default)]
    target: Option<usize>,
    #[serde(default)]
    method: Option<String>,
}

fn method_name(explicit: Option<&str>, saliency: &Path, id: &str) -> String {
    if let Some(m) = explicit {
        return m.to_string();
    }
    let stem = file_stem(saliency);
    match stem.strip_suffix(id).and_then(|s| s.strip_suffix('_')) {
        Some(m) if !m.is_empty() => m.to_string(),
        _ => stem,
    }
}

pub fn lerf(args: &LerfArgs) -> Result<()> {
    let mut timings = Timings::default();
    let jobs: Vec<LerfJob> = match &args.jobs {
        Some(path) => {
            let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
            let mut jobs: Vec<LerfJob> = read_csv(path)?;
            for j in &mut jobs {
                j.saliency = base.join(&j.saliency);
                j.partition = j.partition.take().map(|p| base.join(p));
            }
            jobs
        }
        None => vec![LerfJob {
            image: args.image.clone().expect("required by clap"),
            saliency: args.saliency.clone().expect("required by clap"),
            partition: args.partition.clone(),
            target: None,
            method: None,
        }],
    };
    let oracle = timings.time("open", || open(&args.oracle))?;
    let results = timings.time("curves", || {
        jobs.par_iter()
            .map(|job| {
                let (id, img) = load_image(&oracle, &job.image)?;
                let p = partition_for(&oracle, &id, &img, job.partition.as_deref(), &args.nas)?;
                let s = SaliencyMap::read_npy(&job.saliency)?.resized(p.dims())?;
                let target = match job.target.or(args.target) {
                    Some(t) => t,
                    None => predicted_class(&oracle, &id, &img)?,
                };
                let curve = lerf_curve_with_axis(&img, &p, &s, &oracle, target, args.x_axis.into())?;
                let method = method_name(job.method.as_deref().or(args.method.as_deref()), &job.saliency, &id);
                log::info!(
                    "{method} {id}: auc {:.4} over {} superpixels",
                    curve.auc,
                    p.component_count
                );
                Ok(CurveResult {
                    id,
                    method,
                    target,
                    curve,
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let mut out = OutDir::create(&args.out)?;
    timings.time("write", || write_curves(&mut out, "lerf", &results))?;
    let config = json!({ "oracle": args.oracle, "x_axis": args.x_axis, "args": args });
    finish(out, "lerf", &config, timings)
}

pub fn aucmax(args: &AucmaxArgs) -> Result<()> {
    if args.partition.is_some() && args.images.len() > 1 {
        return Err(Error::InvalidConfig("--partition applies to a single --image".into()));
    }
    let mut timings = Timings::default();
    let oracle = timings.time("open", || open(&args.oracle))?;
    let results = timings.time("greedy", || {
        args.images
            .par_iter()
            .map(|spec| {
                let (id, img) = load_image(&oracle, spec)?;
                let p = partition_for(&oracle, &id, &img, args.partition.as_deref(), &args.nas)?;
                let target = match args.target {
                    Some(t) => t,
                    None => predicted_class(&oracle, &id, &img)?,
                };
                let curve = greedy_auc_max_with_axis(&img, &p, &oracle, target, args.x_axis.into())?;
                Ok(CurveResult {
                    id,
                    method: String::new(),
                    target,
                    curve,
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let mut out = OutDir::create(&args.out)?;
    timings.time("write", || write_curves(&mut out, "aucmax", &results))?;
    let config = json!({ "oracle": args.oracle, "x_axis": args.x_axis, "args": args });
    finish(out, "aucmax", &config, timings)
}

#[derive(Debug, Deserialize)]
struct GtRow {
    image_id: String,
    x_min: usize,
    y_min: usize,
    x_max: usize,
    y_max: usize,
}

fn heatmap_path(dir: &Path, method: &str, id: &str) -> PathBuf {
    let tagged = dir.join(format!("{method}_{id}.npy"));
    if tagged.exists() {
        tagged
    } else {
        dir.join(format!("{id}.npy"))
    }
}

fn score_row(name: &str, s: &WsolScores, base: Option<&WsolScores>) -> Vec<String> {
    let mut row = vec![name.to_string(), num(s.max_box_acc_v2)];
    row.extend(s.box_acc.iter().map(|v| num(*v)));
    match base {
        Some(b) => {
            row.push(num(s.max_box_acc_v2 - b.max_box_acc_v2));
            row.extend(s.box_acc.iter().zip(&b.box_acc).map(|(a, b)| num(a - b)));
        }
        None => row.extend(std::iter::repeat_n(String::new(), s.box_acc.len() + 1)),
    }
    row
}

pub fn wsol(args: &WsolArgs) -> Result<()> {
    if !(args.threshold_step > 0.0 && args.threshold_step <= 1.0) {
        return Err(Error::InvalidConfig("--threshold-step must lie in (0, 1]".into()));
    }
    let steps = (1.0 / args.threshold_step).round() as usize;
    let cfg = WsolConfig {
        thresholds: (0..=steps).map(|i| i as f64 / steps as f64).collect(),
        normalize: !args.no_normalize,
        connectivity: connectivity(args.box_connectivity)?,
        ..WsolConfig::default()
    };
    cfg.validate()?;
    let mut timings = Timings::default();

    let gt_rows: Vec<GtRow> = read_csv(&args.gt)?;
    let gt = gt_rows
        .iter()
        .map(|r| BBox::new(r.x_min, r.y_min, r.x_max, r.y_max))
        .collect::<Result<Vec<_>>>()?;
    let heatmaps = timings.time("load", || {
        gt_rows
            .par_iter()
            .map(|r| SaliencyMap::read_npy(heatmap_path(&args.saliency_dir, &args.method, &r.image_id)))
            .collect::<Result<Vec<_>>>()
    })?;

    let oracle = match (&args.partition_dir, &args.oracle) {
        (None, Some(uri)) => Some(open(uri)?),
        _ => None,
    };
    let nas_heatmaps = if args.partition_dir.is_some() || oracle.is_some() {
        let conn = connectivity(args.nas.connectivity)?;
        Some(timings.time("superpixelify", || {
            gt_rows
                .par_iter()
                .zip(&heatmaps)
                .map(|(r, h)| {
                    let p = match (&args.partition_dir, &oracle) {
                        (Some(dir), _) => {
                            read_partition(&dir.join(format!("{}.npy", r.image_id)), Some(h.dims()), conn)?
                        }
                        (None, Some(o)) => {
                            let (id, img) = load_image(o, &r.image_id)?;
                            let clusters = segment_image(o, &id, &img, &args.nas, args.nas.seed)?.clusters;
                            connected_components(&upsample_labels_nearest(&clusters, h.dims())?, conn)
                        }
                        (None, None) => unreachable!(),
                    };
                    average_over(h, &p)
                })
                .collect::<Result<Vec<_>>>()
        })?)
    } else {
        None
    };

    let raw = timings.time("score", || max_box_acc_v2(&heatmaps, &gt, &cfg))?;
    let nas = match &nas_heatmaps {
        Some(h) => Some(timings.time("score_nas", || max_box_acc_v2(h, &gt, &cfg))?),
        None => None,
    };

    let mut header = vec!["method".to_string(), "max_box_acc_v2".to_string()];
    let levels: Vec<String> = cfg
        .iou_levels
        .iter()
        .map(|d| format!("iou_{}", (d * 100.0).round()))
        .collect();
    header.extend(levels.iter().cloned());
    header.push("delta_max_box_acc_v2".into());
    header.extend(levels.iter().map(|l| format!("delta_{l}")));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut rows = vec![score_row(&args.method, &raw, None)];
    if let Some(n) = &nas {
        rows.push(score_row(&format!("{}+NAS", args.method), n, Some(&raw)));
    }
    let mut out = OutDir::create(&args.out)?;
    out.write_csv("wsol_results.csv", &header, rows)?;
    let config = json!({
        "wsol": cfg,
        "renormalized_after_superpixelify": cfg.normalize,
        "best_thresholds": { "raw": raw.best_threshold, "nas": nas.as_ref().map(|n| n.best_threshold.clone()) },
        "args": args,
    });
    finish(out, "wsol", &config, timings)
}

#[derive(Debug, Deserialize)]
struct PredictionRow {
    image_id: String,
    prediction: u32,
}

fn split_rows(method: &str, row: &SplitRow) -> Vec<String> {
    vec![
        method.to_string(),
        format!("{:?}", row.split).to_lowercase(),
        row.images.to_string(),
        row.most_salient_cluster.map_or_else(String::new, |c| c.to_string()),
        num(row.target_cluster_mean),
        num(row.other_clusters_mean),
    ]
}

pub fn semantic(args: &SemanticArgs) -> Result<()> {
    let mut timings = Timings::default();
    let oracle = timings.time("open", || open(&args.oracle))?;
    let ids = image_list(&oracle, &args.images, args.all)?;
    let meta = oracle.meta();
    let mut cfg = args.nas.config(meta.height(), meta.width())?;
    cfg.k = args.n_clusters.max(2);

    let loaded = timings.time("features", || {
        ids.par_iter()
            .map(|spec| {
                let (id, img) = load_image(&oracle, spec)?;
                let acts = activations(&oracle, &id, &img, &cfg.depths)?;
                Ok((id, img, build_feature_matrix(&acts, &cfg)?))
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let params = ClassClusterParams {
        n_clusters: args.n_clusters,
        sample_cap: args.sample_cap,
        seed: args.nas.seed,
        knn_k: args.knn_k,
    };
    let features: Vec<_> = loaded.iter().map(|(_, _, f)| f.clone()).collect();
    let model = timings.time("fit", || fit_class_cluster_model(&features, &params))?;

    let predictions: Vec<u32> = match &args.predictions {
        Some(path) => {
            let table: HashMap<String, u32> = read_csv::<PredictionRow>(path)?
                .into_iter()
                .map(|r| (r.image_id, r.prediction))
                .collect();
            loaded
                .iter()
                .map(|(id, _, _)| {
                    table
                        .get(id)
                        .copied()
                        .ok_or_else(|| Error::InvalidConfig(format!("no prediction for {id:?}")))
                })
                .collect::<Result<_>>()?
        }
        None => loaded
            .iter()
            .map(|(id, img, _)| predicted_class(&oracle, id, img).map(|c| c as u32))
            .collect::<Result<_>>()?,
    };
    let saliency = loaded
        .iter()
        .map(|(id, _, _)| SaliencyMap::read_npy(heatmap_path(&args.saliency_dir, &args.method, id)))
        .collect::<Result<Vec<_>>>()?;
    let opts = TableOptions {
        size_weighted: args.size_weighted,
        pooled_other: args.pooled_other,
        connectivity: connectivity(args.nas.connectivity)?,
    };
    let table = timings.time("table", || {
        cluster_saliency_table(
            &features,
            &saliency,
            &model,
            &predictions,
            args.true_class,
            args.target_cluster,
            &opts,
        )
    })?;

    let mut out = OutDir::create(&args.out)?;
    for (id, _, f) in &loaded {
        let map: LabelMap = model.assign(f)?;
        map.write_npy(out.path(&format!("{id}_classclusters.npy")))?;
        write_segmentation_png(&map, out.path(&format!("{id}_classclusters.png")))?;
    }
    out.write_csv(
        "semantic_table.csv",
        &["method", "split", "images", "most_salient", "target_mean", "other_mean"],
        [
            split_rows(&args.method, &table.correct),
            split_rows(&args.method, &table.wrong),
        ],
    )?;
    let rows = [&table.correct, &table.wrong].into_iter().flat_map(|row| {
        row.per_cluster_means.iter().enumerate().map(move |(k, v)| {
            vec![
                args.method.clone(),
                format!("{:?}", row.split).to_lowercase(),
                k.to_string(),
                num(*v),
            ]
        })
    });
    out.write_csv("semantic_clusters.csv", &["method", "split", "cluster", "mean"], rows)?;
    let config = json!({
        "oracle": args.oracle,
        "images": ids,
        "nas": cfg,
        "class_clusters": params,
        "pooled_rows": model.pooled_rows,
        "table_options": opts,
        "args": args,
    });
    finish(out, "semantic", &config, timings)
}
