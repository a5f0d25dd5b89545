use std::time::Instant;

use nas_core::image_io::{write_gray_png, write_segmentation_png};
use nas_core::npy::write_npy;
use nas_core::pipeline::cluster_features;
use nas_core::superpixel::boundary_frequency;
use nas_core::{build_feature_matrix, Error, Oracle, Result, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde_json::json;

use crate::common::{activations, image_list, load_image, open, segment_image};
use crate::output::{finish, num, OutDir, Timings};
use crate::{BenchArgs, OverlayArgs, SegmentArgs};

pub fn segment(args: &SegmentArgs) -> Result<()> {
    let mut timings = Timings::default();
    let oracle = timings.time("open", || open(&args.oracle))?;
    let ids = image_list(&oracle, &args.images, args.all)?;
    let meta = oracle.meta();
    let cfg = args.nas.config(meta.height(), meta.width())?;

    let segs = timings.time("segment", || {
        ids.par_iter()
            .map(|spec| {
                let (id, img) = load_image(&oracle, spec)?;
                let seg = segment_image(&oracle, &id, &img, &args.nas, args.nas.seed)?;
                Ok((id, seg))
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let mut out = OutDir::create(&args.out)?;
    timings.time("write", || -> Result<()> {
        let mut rows = Vec::new();
        for (id, seg) in &segs {
            seg.clusters.write_npy(out.path(&format!("{id}_clusters.npy")))?;
            seg.partition
                .label_map
                .write_npy(out.path(&format!("{id}_superpixels.npy")))?;
            write_segmentation_png(&seg.clusters, out.path(&format!("{id}_clusters.png")))?;
            write_segmentation_png(&seg.partition.label_map, out.path(&format!("{id}_superpixels.png")))?;
            rows.push(vec![
                id.clone(),
                seg.clusters.distinct().len().to_string(),
                seg.partition.component_count.to_string(),
            ]);
        }
        out.write_csv("segments.csv", &["image_id", "clusters", "superpixels"], rows)
    })?;
    let config = json!({
        "oracle": args.oracle,
        "images": ids,
        "nas": cfg,
        "clusterer": args.nas.clusterer(),
        "connectivity": args.nas.connectivity,
        "args": args,
    });
    finish(out, "segment", &config, timings)
}

pub fn overlay(args: &OverlayArgs) -> Result<()> {
    if args.runs == 0 {
        return Err(Error::InvalidConfig("--runs must be positive".into()));
    }
    let mut timings = Timings::default();
    let oracle = timings.time("open", || open(&args.oracle))?;
    let ids = image_list(&oracle, &args.images, args.all)?;
    let maps = timings.time("segment", || {
        ids.par_iter()
            .map(|spec| {
                let (id, img) = load_image(&oracle, spec)?;
                let seeds = (0..args.runs as u64).map(|r| args.nas.seed + r);
                let clusters = seeds
                    .map(|s| segment_image(&oracle, &id, &img, &args.nas, s).map(|seg| seg.clusters))
                    .collect::<Result<Vec<_>>>()?;
                Ok((id, boundary_frequency(&clusters)?))
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let mut out = OutDir::create(&args.out)?;
    timings.time("write", || -> Result<()> {
        for (id, freq) in &maps {
            write_npy(freq, out.path(&format!("{id}_boundary.npy")))?;
            write_gray_png(freq, out.path(&format!("{id}_boundary.png")))?;
        }
        Ok(())
    })?;
    let meta = oracle.meta();
    let config = json!({
        "oracle": args.oracle,
        "images": ids,
        "nas": args.nas.config(meta.height(), meta.width())?,
        "seeds": (0..args.runs as u64).map(|r| args.nas.seed + r).collect::<Vec<_>>(),
        "args": args,
    });
    finish(out, "overlay", &config, timings)
}

/// Channel count and downsampling factor of the five extraction points of a
/// small residual network.
const STACK_LAYOUT: [(usize, usize); 5] = [(64, 4), (64, 4), (128, 8), (256, 16), (512, 32)];

/// Activations with five planted regions and 5% noise.
fn generated_stack(size: usize, depths: &[usize], seed: u64) -> Result<Vec<Tensor>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers: Vec<(f64, f64)> = (0..5).map(|_| (rng.random(), rng.random())).collect();
    depths
        .iter()
        .map(|&d| {
            let &(c, f) = STACK_LAYOUT
                .get(d)
                .ok_or_else(|| Error::InvalidConfig(format!("generated stacks have depths 0..5, got {d}")))?;
            let side = size.div_ceil(f).max(1);
            let emb: Vec<Vec<f32>> = (0..5)
                .map(|_| (0..c).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect();
            let mut data = vec![0f32; c * side * side];
            for y in 0..side {
                for x in 0..side {
                    let (py, px) = ((y as f64 + 0.5) / side as f64, (x as f64 + 0.5) / side as f64);
                    let region = (0..5)
                        .min_by(|&a, &b| {
                            let da = (centers[a].0 - py).powi(2) + (centers[a].1 - px).powi(2);
                            let db = (centers[b].0 - py).powi(2) + (centers[b].1 - px).powi(2);
                            da.total_cmp(&db)
                        })
                        .expect("five regions");
                    for ch in 0..c {
                        data[ch * side * side + y * side + x] = emb[region][ch] + 0.05 * rng.random_range(-1.0f32..1.0);
                    }
                }
            }
            Tensor::new(vec![c, side, side], data)
        })
        .collect()
}

pub fn bench(args: &BenchArgs) -> Result<()> {
    if args.images == 0 || args.threads == 0 {
        return Err(Error::InvalidConfig("--images and --threads must be positive".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.threads)
        .build()
        .map_err(|e| Error::InvalidConfig(e.to_string()))?;

    let (stacks, size): (Vec<Vec<Tensor>>, (usize, usize)) = match &args.oracle {
        Some(uri) => {
            let oracle = open(uri)?;
            let ids = image_list(&oracle, &[], true)?;
            let stacks = ids
                .iter()
                .cycle()
                .take(args.images)
                .map(|id| {
                    let (id, img) = load_image(&oracle, id)?;
                    activations(&oracle, &id, &img, &args.nas.depths)
                })
                .collect::<Result<_>>()?;
            (stacks, (oracle.meta().height(), oracle.meta().width()))
        }
        None => {
            let stacks = (0..args.images as u64)
                .map(|i| generated_stack(args.size, &args.nas.depths, args.nas.seed + i))
                .collect::<Result<_>>()?;
            (stacks, (args.size, args.size))
        }
    };
    let cfg = args.nas.config(size.0, size.1)?;
    let clusterer = args.nas.clusterer();

    let ms = pool.install(|| {
        stacks
            .iter()
            .map(|acts| {
                let start = Instant::now();
                let features = build_feature_matrix(acts, &cfg)?;
                cluster_features(&features, &cfg, clusterer)?;
                Ok(start.elapsed().as_secs_f64() * 1e3)
            })
            .collect::<Result<Vec<f64>>>()
    })?;
    let mean = ms.iter().sum::<f64>() / ms.len() as f64;
    let max = ms.iter().copied().fold(0.0, f64::max);
    println!(
        "{} images {}x{} depths {:?} k={} threads={}: mean {mean:.1} ms, max {max:.1} ms",
        ms.len(),
        cfg.output_h,
        cfg.output_w,
        cfg.depths,
        cfg.k,
        args.threads
    );
    if let Some(dir) = &args.out {
        let mut out = OutDir::create(dir)?;
        let rows = ms.iter().enumerate().map(|(i, v)| vec![i.to_string(), num(*v)]);
        out.write_csv("bench.csv", &["run", "ms"], rows)?;
        let config = json!({ "nas": cfg, "clusterer": clusterer, "mean_ms": mean, "args": args });
        finish(out, "bench", &config, Timings::default())?;
    }
    Ok(())
}
