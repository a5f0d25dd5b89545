//! `nas`: segment images from classifier activations and evaluate saliency maps.

mod common;
mod evaluate;
mod output;
mod segmenting;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nas_core::lerf::XAxis;
use serde::Serialize;

#[derive(Parser)]
#[command(name = "nas", version, about = "Superpixels from classifier activations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Segment images into clusters and superpixels.
    Segment(SegmentArgs),
    /// Average saliency maps over the superpixels of a label map.
    Superpixelify(SuperpixelifyArgs),
    /// Least-relevant-first deletion curves.
    Lerf(LerfArgs),
    /// Greedy deletion order maximizing the curve area.
    Aucmax(AucmaxArgs),
    /// Box localization scores of heatmaps, raw and superpixelified.
    Wsol(WsolArgs),
    /// Class-wise clustering and per-cluster saliency table.
    Semantic(SemanticArgs),
    /// Boundary frequency over several seeded segmentations.
    Overlay(OverlayArgs),
    /// Time feature building and clustering.
    Bench(BenchArgs),
    /// Serve an oracle over HTTP.
    Serve(ServeArgs),
}

#[derive(Clone, Copy, Debug, Serialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ClustererArg {
    Kmeans,
    Ward,
}

#[derive(Clone, Copy, Debug, Serialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum XAxisArg {
    Superpixels,
    Pixels,
}

impl From<XAxisArg> for XAxis {
    fn from(x: XAxisArg) -> XAxis {
        match x {
            XAxisArg::Superpixels => XAxis::Superpixels,
            XAxisArg::Pixels => XAxis::Pixels,
        }
    }
}

fn parse_connectivity(s: &str) -> Result<u8, String> {
    match s {
        "4" => Ok(4),
        "8" => Ok(8),
        _ => Err(format!("expected 4 or 8, got {s:?}")),
    }
}

fn parse_size(s: &str) -> Result<(usize, usize), String> {
    let (h, w) = s
        .split_once(['x', ','])
        .ok_or_else(|| format!("expected HxW, got {s:?}"))?;
    let p = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("{v:?}: {e}"));
    Ok((p(h)?, p(w)?))
}

/// Segmentation settings shared by every command that segments.
#[derive(Args, Clone, Debug, Serialize)]
pub struct NasArgs {
    /// Extraction points, comma separated and strictly increasing.
    #[arg(long, value_delimiter = ',', default_value = "2,3,4")]
    pub depths: Vec<usize>,
    /// Number of clusters.
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Skip per-row L2 normalization.
    #[arg(long)]
    pub no_scale: bool,
    /// Skip division of each block by 1 + channels.
    #[arg(long)]
    pub no_weight: bool,
    /// Neighborhood for connected components.
    #[arg(long, default_value = "4", value_parser = parse_connectivity)]
    pub connectivity: u8,
    #[arg(long, value_enum, default_value_t = ClustererArg::Kmeans)]
    pub clusterer: ClustererArg,
    #[arg(long, default_value_t = 300)]
    pub max_iter: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
    /// Cluster at this HxW and upsample the labels (nearest) to the image size.
    #[arg(long, value_parser = parse_size)]
    pub work_size: Option<(usize, usize)>,
}

#[derive(Args, Debug, Serialize)]
pub struct SegmentArgs {
    #[arg(long)]
    pub oracle: String,
    /// Stored image id or PNG path; repeatable.
    #[arg(long = "image", required_unless_present = "all")]
    pub images: Vec<String>,
    /// Every image of a file store.
    #[arg(long)]
    pub all: bool,
    #[command(flatten)]
    pub nas: NasArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct SuperpixelifyArgs {
    /// Label map (NPY, integer or whole-number floats).
    #[arg(long)]
    pub partition: PathBuf,
    /// Saliency maps (NPY); repeatable.
    #[arg(long, required = true)]
    pub saliency: Vec<PathBuf>,
    #[arg(long, default_value = "4", value_parser = parse_connectivity)]
    pub connectivity: u8,
    /// Min-max normalize each map before averaging.
    #[arg(long)]
    pub normalize: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct LerfArgs {
    #[arg(long)]
    pub oracle: String,
    /// Stored image id or PNG path.
    #[arg(long, required_unless_present = "jobs")]
    pub image: Option<String>,
    /// Label map; segmented through the oracle when absent.
    #[arg(long)]
    pub partition: Option<PathBuf>,
    #[arg(long, required_unless_present = "jobs")]
    pub saliency: Option<PathBuf>,
    /// CSV with columns image,saliency and optional partition,target.
    #[arg(long, conflicts_with_all = ["image", "saliency", "partition"])]
    pub jobs: Option<PathBuf>,
    /// Target class; the predicted class when absent.
    #[arg(long)]
    pub target: Option<usize>,
    /// Label for the summary; defaults to the saliency file stem.
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long, value_enum, default_value_t = XAxisArg::Superpixels)]
    pub x_axis: XAxisArg,
    #[command(flatten)]
    pub nas: NasArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct AucmaxArgs {
    #[arg(long)]
    pub oracle: String,
    /// Stored image id or PNG path; repeatable.
    #[arg(long = "image", required = true)]
    pub images: Vec<String>,
    /// Label map for a single image; segmented through the oracle when absent.
    #[arg(long)]
    pub partition: Option<PathBuf>,
    #[arg(long)]
    pub target: Option<usize>,
    #[arg(long, value_enum, default_value_t = XAxisArg::Superpixels)]
    pub x_axis: XAxisArg,
    #[command(flatten)]
    pub nas: NasArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct WsolArgs {
    /// CSV with columns image_id,x_min,y_min,x_max,y_max.
    #[arg(long)]
    pub gt: PathBuf,
    /// Directory holding <method>_<image_id>.npy heatmaps.
    #[arg(long)]
    pub saliency_dir: PathBuf,
    #[arg(long)]
    pub method: String,
    /// Directory holding <image_id>.npy label maps for the superpixel arm.
    #[arg(long)]
    pub partition_dir: Option<PathBuf>,
    /// Oracle used to segment images when no partition directory is given.
    #[arg(long)]
    pub oracle: Option<String>,
    #[arg(long, default_value_t = 0.01)]
    pub threshold_step: f64,
    /// Threshold raw heatmaps without min-max normalization.
    #[arg(long)]
    pub no_normalize: bool,
    #[arg(long, default_value = "8", value_parser = parse_connectivity)]
    pub box_connectivity: u8,
    #[command(flatten)]
    pub nas: NasArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct SemanticArgs {
    #[arg(long)]
    pub oracle: String,
    /// Stored image id or PNG path; repeatable.
    #[arg(long = "image", required_unless_present = "all")]
    pub images: Vec<String>,
    #[arg(long)]
    pub all: bool,
    #[arg(long)]
    pub true_class: u32,
    /// CSV image_id,prediction; taken from the oracle logits when absent.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    /// Directory holding <method>_<image_id>.npy heatmaps.
    #[arg(long)]
    pub saliency_dir: PathBuf,
    #[arg(long)]
    pub method: String,
    #[arg(long)]
    pub target_cluster: u32,
    #[arg(long, default_value_t = 10)]
    pub n_clusters: usize,
    #[arg(long, default_value_t = 10_000)]
    pub sample_cap: usize,
    #[arg(long, default_value_t = 5)]
    pub knn_k: usize,
    #[arg(long)]
    pub size_weighted: bool,
    #[arg(long)]
    pub pooled_other: bool,
    #[command(flatten)]
    pub nas: NasArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct OverlayArgs {
    #[arg(long)]
    pub oracle: String,
    #[arg(long = "image", required_unless_present = "all")]
    pub images: Vec<String>,
    #[arg(long)]
    pub all: bool,
    /// Number of segmentations, seeded from --seed upwards.
    #[arg(long, default_value_t = 10)]
    pub runs: usize,
    #[command(flatten)]
    pub nas: NasArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct BenchArgs {
    /// Time stored images of this oracle instead of generated stacks.
    #[arg(long)]
    pub oracle: Option<String>,
    #[arg(long, default_value_t = 10)]
    pub images: usize,
    /// Side of the generated input image.
    #[arg(long, default_value_t = 96)]
    pub size: usize,
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
    #[command(flatten)]
    pub nas: NasArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct ServeArgs {
    #[arg(long)]
    pub oracle: String,
    #[arg(long, default_value = "127.0.0.1:8008")]
    pub addr: String,
}

fn run(cli: Cli) -> nas_core::Result<()> {
    match cli.command {
        Command::Segment(a) => segmenting::segment(&a),
        Command::Overlay(a) => segmenting::overlay(&a),
        Command::Bench(a) => segmenting::bench(&a),
        Command::Superpixelify(a) => evaluate::superpixelify(&a),
        Command::Lerf(a) => evaluate::lerf(&a),
        Command::Aucmax(a) => evaluate::aucmax(&a),
        Command::Wsol(a) => evaluate::wsol(&a),
        Command::Semantic(a) => evaluate::semantic(&a),
        Command::Serve(a) => common::serve(&a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("NAS_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_oracle_error() { 2 } else { 1 })
        }
    }
}
