//! Texture-aware patch masking for self-supervised pretraining on 3D volumes.
//!
//! Pipeline: [`preprocess`] a volume, compute its texture-variation map
//! ([`texture::compute_variation_map`]), pool the map into patch scores and
//! draw a texture-guided mask ([`mask`]), then exercise the masked
//! reconstruction objective with a small autoencoder ([`recon`], [`train`]).
//! [`metrics`] holds the segmentation metrics and [`phantom`] the synthetic
//! test volumes.

pub mod config;
pub mod error;
pub mod experiment;
pub mod filters;
pub mod io;
pub mod mask;
pub mod metrics;
pub mod phantom;
pub mod preprocess;
pub mod recon;
pub mod render;
pub mod rng;
pub mod texture;
pub mod train;
pub mod volume;

pub use config::RunConfig;
pub use error::{Error, Result};
pub use io::{load_volume, save_volume};
pub use mask::{
    apply_mask, expand_mask, generate_mask, mask_coverage_stats, patch_scores, MaskConfig, PatchMask, PatchScores,
    TauMode,
};
pub use metrics::{dsc, hd95, iou, MetricsReport, SegPair};
pub use phantom::{make_phantom, Phantom, PhantomKind, PhantomSpec};
pub use preprocess::{preprocess, resample_isotropic, Normalization, PreprocessConfig};
pub use recon::{backward, forward, masked_mse, ReconBatch, ToyMaeModel};
pub use texture::{compute_variation_map, TvmConfig, VariationMap};
pub use train::{pretrain_toy, TrainConfig};
pub use volume::Volume3D;
