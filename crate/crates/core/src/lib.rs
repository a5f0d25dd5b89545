//! Superpixels from clustered classifier activations, and tools to evaluate
//! saliency maps with them.
//!
//! The usual flow: query an [`gateway::Oracle`] for activations, build a
//! [`pipeline::FeatureMatrix`], cluster it, split the clusters into
//! connected [`superpixel::SuperpixelPartition`] components, then average
//! saliency over them ([`saliency`]) and score the result with deletion
//! curves ([`lerf`]), box localization ([`wsol`]) or per-cluster tables
//! ([`semantic`]).

pub mod clustering;
pub mod error;
pub mod gateway;
pub mod image_io;
pub mod lerf;
pub mod npy;
pub mod pipeline;
pub mod saliency;
pub mod semantic;
pub mod superpixel;
pub mod tensor;
pub mod util;
pub mod wsol;

pub use error::{Error, Result};
pub use gateway::{open_oracle, open_oracle_with_cache, ModelMeta, Oracle, OracleHandle};
pub use pipeline::{build_feature_matrix, segment, Clusterer, FeatureMatrix, NasConfig, Segmentation};
pub use saliency::{minmax_normalize, superpixelify, SaliencyMap};
pub use superpixel::{connected_components, Connectivity, LabelMap, SuperpixelPartition};
pub use tensor::{ImageSpec, Tensor};
